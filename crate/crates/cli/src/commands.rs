use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textgan::checkpoint::{Checkpoint, GanProgress, Phase, RngState};
use textgan::config::RunConfig;
use textgan::corpus::{
    build_vocab, detokenize, encode_documents, join_documents, split_corpus, split_documents, tokenize, Vocabulary,
};
use textgan::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use textgan::eval::{compare_report, draw_samples, report_jsonl, report_table, SampleSettings};
use textgan::generator::GeneratorModel;
use textgan::training::{
    adversarial_train, new_adam, train_lm, EpochEnd, GanData, GanState, MetricsLog, Regime,
};

use crate::rundir::{RunDir, CONFIG_FILE, SAMPLES_FILE};
use crate::{
    DataArgs, EvalArgs, Failure, FinetuneArgs, GanArgs, GenerateArgs, Overrides, PretrainArgs, ReportFormat,
    SplitArgs,
};

/// Samples written to a run directory when training finishes.
const RUN_SAMPLES: usize = 10;

fn read_input(path: &Path) -> Result<String, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("input file not found: {}", path.display())));
    }
    fs::read_to_string(path).map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))
}

fn read_docs(path: &Path) -> Result<Vec<String>, Failure> {
    let docs = split_documents(&read_input(path)?);
    if docs.is_empty() {
        return Err(Failure::runtime(format!("no documents in {}", path.display())));
    }
    Ok(docs)
}

fn load_checkpoint(path: &Path, accepted: &[Phase]) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("checkpoint not found: {}", path.display())));
    }
    let ck = Checkpoint::load(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    if !accepted.contains(&ck.phase) {
        let names: Vec<&str> = accepted.iter().map(|p| p.name()).collect();
        return Err(Failure::usage(format!(
            "{} is a {} checkpoint; this command accepts {}",
            path.display(),
            ck.phase.name(),
            names.join(", ")
        )));
    }
    Ok(ck)
}

fn config_reason(e: textgan::Error) -> String {
    match e {
        textgan::Error::Config { reason, .. } => reason,
        other => other.to_string(),
    }
}

/// Applies `--config`, `--preset`, the given flag settings and `--set` to
/// `base`, then validates the result.
fn resolve(mut cfg: RunConfig, ov: &Overrides, flags: &[(&str, &str, Option<String>)]) -> Result<RunConfig, Failure> {
    if let Some(p) = &ov.config {
        let text = read_input(p)?;
        cfg.merge(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
    }
    let mut lines: Vec<(String, String)> = ov
        .preset
        .iter()
        .map(|p| ("--preset".to_string(), format!("preset = {p}")))
        .collect();
    let common = [
        ("--epochs", "epochs", ov.epochs.map(|v| v.to_string())),
        ("--learning-rate", "learning_rate", ov.learning_rate.map(|v| v.to_string())),
        ("--batch-size", "batch_size", ov.batch_size.map(|v| v.to_string())),
        ("--seed", "seed", ov.seed.map(|v| v.to_string())),
    ];
    for (flag, key, value) in common.iter().chain(flags) {
        if let Some(v) = value {
            lines.push((flag.to_string(), format!("{key} = {v}")));
        }
    }
    for kv in &ov.set {
        if !kv.contains('=') {
            return Err(Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")));
        }
        lines.push(("--set".to_string(), kv.clone()));
    }
    for (flag, line) in lines {
        cfg.merge(&line)
            .map_err(|e| Failure::usage(format!("{flag}: {}", config_reason(e))))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn require_mle(cfg: &RunConfig, command: &str) -> Result<(), Failure> {
    if cfg.train.regime != Regime::Mle {
        return Err(Failure::usage(format!(
            "{command} trains with regime mle, but the configuration selects {}; use gan-train",
            cfg.train.regime.name()
        )));
    }
    Ok(())
}

/// Model shape cannot change once parameters exist.
fn require_same_model(ck: &Checkpoint, cfg: &RunConfig) -> Result<(), Failure> {
    if ck.config.generator != cfg.generator {
        return Err(Failure::usage(
            "model settings (encoder, sizes, bptt_len, dropout) differ from the checkpoint's",
        ));
    }
    Ok(())
}

fn encode_stream(docs: &[String], vocab: &Vocabulary) -> Vec<usize> {
    join_documents(&encode_documents(docs, vocab), vocab.specials())
}

/// Documents separated by blank lines, the same layout the corpus readers
/// accept. Sequence-boundary and padding tokens are not shown.
fn format_samples(samples: &[Vec<usize>], vocab: &Vocabulary) -> Result<String, Failure> {
    let sp = vocab.specials();
    let mut texts = Vec::with_capacity(samples.len());
    for s in samples {
        let shown: Vec<usize> = s.iter().copied().filter(|&t| t != sp.bos && t != sp.eos && t != sp.pad).collect();
        texts.push(detokenize(&vocab.decode(&shown)?));
    }
    Ok(texts.join("\n\n") + "\n")
}

fn write_run_samples(run: &RunDir, gen: &GeneratorModel, vocab: &Vocabulary, cfg: &RunConfig) -> Result<(), Failure> {
    let settings = SampleSettings {
        count: RUN_SAMPLES,
        max_len: cfg.generator.bptt_len,
        temperature: cfg.train.sample_temperature,
        seed: cfg.train.seed,
    };
    let samples = draw_samples(gen, vocab, &settings)?;
    run.write(SAMPLES_FILE, &format_samples(&samples, vocab)?)
}

fn save(ck: &Checkpoint, path: &Path) -> Result<(), Failure> {
    ck.save(path)
        .map_err(|e| Failure::runtime(format!("cannot save {}: {e}", path.display())))
}

pub fn split(args: &SplitArgs, root: &Path) -> Result<(), Failure> {
    let docs = read_docs(&args.input)?;
    let parts = split_corpus(&docs, args.seed)?;
    let run = RunDir::create(args.out_dir.as_deref(), root, "split")?;
    for (name, part) in [("train.txt", &parts.train), ("valid.txt", &parts.valid), ("test.txt", &parts.test)] {
        run.write(name, &(part.join("\n\n") + "\n"))?;
    }
    println!("output: {}", run.path().display());
    println!("documents: train {} valid {} test {}", parts.train.len(), parts.valid.len(), parts.test.len());
    Ok(())
}

/// Shared tail of `pretrain` and `finetune`.
#[allow(clippy::too_many_arguments)]
fn run_mle(
    run: &RunDir,
    phase: Phase,
    mut gen: GeneratorModel,
    vocab: Vocabulary,
    cfg: RunConfig,
    data: &DataArgs,
    log_phase: &str,
) -> Result<(), Failure> {
    let train = encode_stream(&read_docs(&data.train)?, &vocab);
    let valid = match &data.valid {
        Some(p) => Some(encode_stream(&read_docs(p)?, &vocab)),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut adam = new_adam(cfg.train.gen_adam(), &gen);
    let mut log = MetricsLog::with_sink(Box::new(run.metrics(0)?));
    let outcome = train_lm(&mut gen, &mut adam, &train, valid.as_deref(), &cfg.train, log_phase, &mut rng, &mut log)?;
    let path = run.checkpoint("final")?;
    let ck = Checkpoint {
        phase,
        config: cfg.clone(),
        vocab: vocab.clone(),
        generator: gen.clone(),
        gen_adam: Some(adam),
        discriminator: None,
        disc_adam: None,
        gan: None,
        rng: RngState::capture(&rng),
        metrics_cursor: log.len() as u64,
    };
    save(&ck, &path)?;
    write_run_samples(run, &gen, &vocab, &cfg)?;
    println!("output: {}", run.path().display());
    println!("checkpoint: {}", path.display());
    if let Some(p) = outcome.valid_perplexity.get(outcome.best_epoch.saturating_sub(1)) {
        println!("best epoch: {} (valid perplexity {p:.3})", outcome.best_epoch);
    }
    Ok(())
}

pub fn pretrain(args: &PretrainArgs, root: &Path) -> Result<(), Failure> {
    let mut cfg = resolve(RunConfig::default(), &args.overrides, &[])?;
    require_mle(&cfg, "pretrain")?;
    let docs = read_docs(&args.data.train)?;
    let vocab = build_vocab(docs.iter().flat_map(|d| tokenize(d)), cfg.min_freq, cfg.max_vocab)?;
    cfg.generator.vocab_size = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    // A distinct stream keeps initialization independent of training draws.
    rng.set_stream(1);
    let gen = GeneratorModel::new(cfg.generator.clone(), &mut rng)?;
    let run = RunDir::create(args.out_dir.as_deref(), root, "pretrain")?;
    run.write(CONFIG_FILE, &cfg.to_text())?;
    run.write("vocab.txt", &vocab.to_text()?)?;
    run_mle(&run, Phase::Pretrained, gen, vocab, cfg, &args.data, "pretrain")
}

pub fn finetune(args: &FinetuneArgs, root: &Path) -> Result<(), Failure> {
    let ck = load_checkpoint(&args.checkpoint, &[Phase::Pretrained, Phase::Finetuned])?;
    let cfg = resolve(ck.config.clone(), &args.overrides, &[])?;
    require_mle(&cfg, "finetune")?;
    require_same_model(&ck, &cfg)?;
    let run = RunDir::create(args.out_dir.as_deref(), root, "finetune")?;
    run.write(CONFIG_FILE, &cfg.to_text())?;
    run_mle(&run, Phase::Finetuned, ck.generator, ck.vocab, cfg, &args.data, "finetune")
}

fn gan_checkpoint(
    cfg: &RunConfig,
    vocab: &Vocabulary,
    gen: &GeneratorModel,
    disc: &DiscriminatorModel,
    state: &GanState,
    rng: &ChaCha8Rng,
    metrics_cursor: usize,
) -> Checkpoint {
    Checkpoint {
        phase: Phase::Gan,
        config: cfg.clone(),
        vocab: vocab.clone(),
        generator: gen.clone(),
        gen_adam: Some(state.gen_adam.clone()),
        discriminator: Some(disc.clone()),
        disc_adam: Some(state.disc_adam.clone()),
        gan: Some(GanProgress {
            baseline: state.baseline,
            tau: state.tau,
            epoch: state.epoch,
            step: state.step,
        }),
        rng: RngState::capture(rng),
        metrics_cursor: metrics_cursor as u64,
    }
}

pub fn gan_train(args: &GanArgs, root: &Path) -> Result<(), Failure> {
    let ck = load_checkpoint(&args.checkpoint, &[Phase::Pretrained, Phase::Finetuned, Phase::Gan])?;
    let flags = [
        ("--regime", "regime", args.regime.clone()),
        ("--disc-steps", "disc_steps_per_gen_step", args.disc_steps.map(|v| v.to_string())),
        ("--rollouts", "rollout_count", args.rollouts.map(|v| v.to_string())),
    ];
    let cfg = resolve(ck.config.clone(), &args.overrides, &flags)?;
    if cfg.train.regime == Regime::Mle {
        return Err(Failure::usage(
            "gan-train needs an adversarial regime: pass --regime creative_gan or --regime gumbel_gan",
        ));
    }
    require_same_model(&ck, &cfg)?;
    let train_docs = encode_documents(&read_docs(&args.train)?, &ck.vocab);
    let valid = encode_stream(&read_docs(&args.valid)?, &ck.vocab);

    let resume = ck.phase == Phase::Gan && !args.restart;
    let (mut gen, mut disc, mut state, mut rng, cursor) = if resume {
        let state = ck
            .gan_state()
            .ok_or_else(|| Failure::runtime("gan checkpoint lacks optimizer state; pass --restart"))?;
        let disc = ck
            .discriminator
            .clone()
            .ok_or_else(|| Failure::runtime("gan checkpoint lacks a discriminator; pass --restart"))?;
        (ck.generator.clone(), disc, state, ck.rng.restore(), ck.metrics_cursor as usize)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let disc_cfg = DiscriminatorConfig {
            freeze_encoder: cfg.freeze_disc_encoder,
            ..DiscriminatorConfig::for_generator(&cfg.generator)
        };
        let disc = DiscriminatorModel::init_from_generator(&ck.generator, disc_cfg, &mut rng)?;
        let state = GanState::new(&ck.generator, &disc, &cfg.train);
        (ck.generator.clone(), disc, state, rng, 0)
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.epochs = cfg.train.epochs.saturating_sub(state.epoch);

    let run = RunDir::create(args.out_dir.as_deref(), root, "gan")?;
    run.write(CONFIG_FILE, &cfg.to_text())?;
    let mut log = MetricsLog::with_sink(Box::new(run.metrics(cursor)?));
    let data = GanData {
        train_docs: &train_docs,
        valid_stream: &valid,
        specials: ck.vocab.specials(),
    };
    let vocab = &ck.vocab;
    let mut on_epoch = |e: EpochEnd<'_, ChaCha8Rng>| -> textgan::Result<()> {
        let path = run.checkpoint(&format!("epoch-{:03}", e.epoch)).map_err(|f| match f {
            Failure::Usage(m) | Failure::Runtime(m) => textgan::Error::InvalidInput(m),
        })?;
        gan_checkpoint(&cfg, vocab, e.gen, e.disc, e.state, e.rng, cursor + e.log_len).save(&path)
    };
    let outcome = adversarial_train(
        &mut gen,
        &mut disc,
        &mut state,
        &data,
        &train_cfg,
        &mut rng,
        &mut log,
        &mut on_epoch,
    )?;
    let path = run.checkpoint("final")?;
    save(&gan_checkpoint(&cfg, vocab, &gen, &disc, &state, &rng, cursor + log.len()), &path)?;
    write_run_samples(&run, &gen, vocab, &cfg)?;
    println!("output: {}", run.path().display());
    println!("checkpoint: {}", path.display());
    if train_cfg.epochs == 0 {
        println!("nothing to do: the checkpoint already completed {} epochs", state.epoch);
    } else {
        println!("valid perplexity: start {:.3}", outcome.start_perplexity);
        if let Some(last) = outcome.valid_perplexity.last() {
            println!("valid perplexity: end {last:.3}");
        }
    }
    if outcome.diverged {
        eprintln!("warning: validation perplexity exceeded 5x its starting value; best models were restored");
    }
    Ok(())
}

pub fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&args.checkpoint, &[Phase::Pretrained, Phase::Finetuned, Phase::Gan])?;
    if args.num == 0 {
        return Err(Failure::usage("--num must be at least 1"));
    }
    if !(args.temperature > 0.0 && args.temperature.is_finite()) {
        return Err(Failure::usage(format!("--temperature must be positive, got {}", args.temperature)));
    }
    let sp = ck.vocab.specials();
    let prompt = args
        .prompt
        .as_deref()
        .map(|p| ck.vocab.encode(&tokenize(p)))
        .unwrap_or_default();
    let mut prefix = vec![sp.bos];
    prefix.extend(&prompt);
    let max_len = args.max_len.unwrap_or(ck.config.generator.bptt_len);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let trajs = ck.generator.sample_batch(
        &vec![prefix; args.num],
        &vec![max_len; args.num],
        args.temperature,
        Some(sp.eos),
        &mut rng,
    )?;
    let samples: Vec<Vec<usize>> = trajs
        .into_iter()
        .map(|t| prompt.iter().copied().chain(t.tokens.into_iter().filter(|&x| x != sp.eos)).collect())
        .collect();
    print!("{}", format_samples(&samples, &ck.vocab)?);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    if args.num_samples == 0 {
        return Err(Failure::usage("--num-samples must be at least 1"));
    }
    let any = [Phase::Pretrained, Phase::Finetuned, Phase::Gan];
    let cks = args
        .checkpoints
        .iter()
        .map(|p| load_checkpoint(p, &any))
        .collect::<Result<Vec<_>, _>>()?;
    let vocab = &cks[0].vocab;
    let test = encode_stream(&read_docs(&args.test)?, vocab);
    let dataset = args
        .test
        .file_stem()
        .map_or_else(|| args.test.display().to_string(), |s| s.to_string_lossy().into_owned());
    let models: Vec<(String, &GeneratorModel, &Vocabulary)> = args
        .checkpoints
        .iter()
        .zip(&cks)
        .map(|(p, c)| (p.display().to_string(), &c.generator, &c.vocab))
        .collect();
    let settings = SampleSettings {
        count: args.num_samples,
        max_len: args.max_len,
        temperature: 1.0,
        seed: args.seed,
    };
    let rows = compare_report(&models, vocab, &test, &dataset, &settings)?;
    match args.format {
        ReportFormat::Table => print!("{}", report_table(&rows)),
        ReportFormat::Jsonl => print!("{}", report_jsonl(&rows)),
    }
    Ok(())
}
