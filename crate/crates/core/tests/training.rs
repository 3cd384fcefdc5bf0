mod common;

use common::{discriminator_for, rng, softmax, tiny_config, tiny_generator};
use rand::Rng;
use textgan::autodiff::{Graph, Parameterized};
use textgan::checkpoint::{Checkpoint, Phase, RngState};
use textgan::config::RunConfig;
use textgan::corpus::synthetic::cyclic_corpus;
use textgan::corpus::{build_vocab, join_documents, tokenize, Specials, Vocabulary};
use textgan::discriminator::DiscriminatorModel;
use textgan::eval::perplexity;
use textgan::generator::GeneratorModel;
use textgan::training::{
    adversarial_train, creative_gan_generator_step, gumbel_generator_step, new_adam, policy_gradient_loss,
    relaxed_one_hot, train_discriminator_step, train_lm, Baseline, FnScorer, GanData, GanState, MetricsLog, Regime,
    TrainConfig,
};
use textgan::Dropouts;

fn snapshot<M: Parameterized>(m: &M) -> Vec<Vec<f64>> {
    m.params().iter().map(|p| p.data().to_vec()).collect()
}

fn specials() -> Specials {
    Vocabulary::with_specials().specials()
}

fn toy_docs(seed: u64, n: usize, vocab: usize) -> Vec<Vec<usize>> {
    let mut r = rng(seed);
    (0..n).map(|_| (0..r.gen_range(2..6)).map(|_| r.gen_range(7..vocab)).collect()).collect()
}

fn gan_cfg(regime: Regime) -> TrainConfig {
    TrainConfig {
        regime,
        epochs: 1,
        batch_size: 4,
        gan_iters_per_epoch: Some(2),
        ..TrainConfig::default()
    }
}

/// Monte-Carlo estimate of the policy gradient of `E[R] = p(A)` with respect
/// to the decoder bias (the logit offsets) of a one-step generator policy.
fn bias_gradient(gen: &GeneratorModel, baseline: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut trajs = gen.sample_batch(&vec![vec![2]; n], &vec![1; n], 1.0, None, &mut rng(seed)).unwrap();
    for t in &mut trajs {
        t.reward = if t.tokens[0] == 0 { 1.0 } else { 0.0 };
    }
    let weights: Vec<Vec<f64>> = trajs.iter().map(|t| vec![t.reward - baseline]).collect();
    let mut g = Graph::new();
    let vars = gen.bind(&mut g, true);
    let wlp = gen.weighted_log_prob(&mut g, &vars, &trajs, &weights).unwrap();
    let loss = policy_gradient_loss(&mut g, wlp, n).unwrap();
    let grads = g.backward(loss).unwrap();
    grads.get(vars.decoder_bias).unwrap().iter().map(|x| -x).collect()
}

#[test]
fn policy_gradient_is_unbiased_for_any_baseline() {
    let gen = tiny_generator(3, 1);
    let (logits, _) = gen.next_logits(&[2], &gen.zero_state(1)).unwrap();
    let p = softmax(&logits);
    let exact: Vec<f64> = (0..3).map(|j| p[0] * (if j == 0 { 1.0 } else { 0.0 } - p[j])).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut estimates = Vec::new();
    for (b, seed) in [(0.0, 10), (0.5, 11)] {
        let est = bias_gradient(&gen, b, 10_000, seed);
        let diff: Vec<f64> = est.iter().zip(&exact).map(|(a, e)| a - e).collect();
        assert!(norm(&diff) / norm(&exact) < 0.05, "baseline {b}: {est:?} vs {exact:?}");
        estimates.push(est);
    }
    let gap: Vec<f64> = estimates[0].iter().zip(&estimates[1]).map(|(a, b)| a - b).collect();
    assert!(norm(&gap) / norm(&exact) < 0.1);
}

#[test]
fn reward_equal_to_baseline_gives_exactly_zero_gradient() {
    let gen = tiny_generator(5, 2);
    let trajs = gen.sample_batch(&vec![vec![2]; 8], &[4; 8], 1.0, None, &mut rng(3)).unwrap();
    let weights: Vec<Vec<f64>> = trajs.iter().map(|t| vec![0.3 - 0.3; t.tokens.len()]).collect();
    let mut g = Graph::new();
    let vars = gen.bind(&mut g, true);
    let wlp = gen.weighted_log_prob(&mut g, &vars, &trajs, &weights).unwrap();
    let loss = policy_gradient_loss(&mut g, wlp, 8).unwrap();
    assert_eq!(g.scalar(loss), 0.0);
    let grads = g.backward(loss).unwrap();
    for v in vars.all() {
        assert!(grads.get(v).unwrap_or(&[]).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn baseline_is_updated_after_use() {
    let mut gen = tiny_generator(5, 4);
    let cfg = gan_cfg(Regime::CreativeGan);
    let mut adam = new_adam(cfg.gen_adam(), &gen);
    let mut baseline = Baseline::new(0.9);
    let scorer = FnScorer(|s: &[usize]| s.len() as f64 / 10.0);
    let (stats, trajs) = creative_gan_generator_step(
        &mut gen,
        &mut adam,
        &scorer,
        &mut baseline,
        &vec![vec![2]; 6],
        &[3; 6],
        None,
        &cfg,
        &mut rng(5),
    )
    .unwrap();
    assert!(trajs.iter().all(|t| t.baseline_at_sample == 0.0));
    assert!((baseline.value - 0.1 * stats.mean_reward).abs() < 1e-15);
}

#[test]
fn rollouts_give_per_step_rewards() {
    let mut gen = tiny_generator(8, 6);
    let cfg = TrainConfig {
        rollout_count: 3,
        ..gan_cfg(Regime::CreativeGan)
    };
    let mut adam = new_adam(cfg.gen_adam(), &gen);
    let mut baseline = Baseline::new(0.9);
    let scorer = FnScorer(|s: &[usize]| s.iter().filter(|&&t| t == 5).count() as f64 / s.len() as f64);
    let (_, trajs) = creative_gan_generator_step(
        &mut gen,
        &mut adam,
        &scorer,
        &mut baseline,
        &vec![vec![2]; 4],
        &[5; 4],
        Some(3),
        &cfg,
        &mut rng(7),
    )
    .unwrap();
    for t in &trajs {
        let r = t.per_step_rewards.as_ref().unwrap();
        assert_eq!(r.len(), t.tokens.len());
        assert_eq!(*r.last().unwrap(), t.reward);
        assert!(r.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn steps_only_touch_their_own_model() {
    let s = specials();
    let mut gen = GeneratorModel::new(tiny_config(12, 4, 6, 2, Dropouts::default()), &mut rng(8)).unwrap();
    let mut disc = discriminator_for(&gen, 9);
    let cfg = gan_cfg(Regime::CreativeGan);
    let mut r = rng(10);
    let real: Vec<Vec<usize>> = toy_docs(1, 4, 12).into_iter().map(|d| [vec![s.bos], d, vec![s.eos]].concat()).collect();

    let (g0, d0) = (snapshot(&gen), snapshot(&disc));
    let mut dadam = new_adam(cfg.disc_adam(), &disc);
    train_discriminator_step(&mut disc, &mut dadam, &gen, &real, s, &cfg, &mut r).unwrap();
    assert_eq!(snapshot(&gen), g0);
    assert_ne!(snapshot(&disc), d0);

    let d1 = snapshot(&disc);
    let mut gadam = new_adam(cfg.gen_adam(), &gen);
    let mut b = Baseline::new(0.9);
    let disc_ref: &DiscriminatorModel = &disc;
    creative_gan_generator_step(&mut gen, &mut gadam, disc_ref, &mut b, &vec![vec![s.bos]; 4], &[4; 4], Some(s.eos), &cfg, &mut r)
        .unwrap();
    assert_eq!(snapshot(&disc), d1);
    assert_ne!(snapshot(&gen), g0);

    let g1 = snapshot(&gen);
    gumbel_generator_step(&mut gen, &mut gadam, &disc, 4, 5, s.bos, 0.5, &cfg, &mut r).unwrap();
    assert_eq!(snapshot(&disc), d1);
    assert_ne!(snapshot(&gen), g1);
}

#[test]
fn zero_learning_rate_freezes_the_generator() {
    let s = specials();
    let mut gen = GeneratorModel::new(tiny_config(12, 4, 6, 2, Dropouts::default()), &mut rng(11)).unwrap();
    let mut disc = discriminator_for(&gen, 12);
    let docs = toy_docs(2, 12, 12);
    let valid = join_documents(&docs[..3], s);
    for regime in [Regime::CreativeGan, Regime::GumbelGan] {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            disc_learning_rate: Some(1e-3),
            ..gan_cfg(regime)
        };
        let before = snapshot(&gen);
        let d_before = snapshot(&disc);
        let mut state = GanState::new(&gen, &disc, &cfg);
        let data = GanData {
            train_docs: &docs,
            valid_stream: &valid,
            specials: s,
        };
        adversarial_train(&mut gen, &mut disc, &mut state, &data, &cfg, &mut rng(13), &mut MetricsLog::new(), &mut |_| Ok(()))
            .unwrap();
        assert_eq!(snapshot(&gen), before, "{regime:?}");
        assert_ne!(snapshot(&disc), d_before);
    }
}

#[test]
fn low_temperature_relaxed_samples_are_nearly_one_hot() {
    let pi = [0.96, 0.01, 0.01, 0.01, 0.01];
    let n = 10_000;
    let mut g = Graph::new();
    let lp = g.constant(vec![n, 5], (0..n).flat_map(|_| pi.map(f64::ln)).collect()).unwrap();
    let y = relaxed_one_hot(&mut g, lp, 0.01, &mut rng(14)).unwrap();
    let entropy: f64 = g
        .value(y)
        .chunks(5)
        .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    assert!(entropy < 0.05, "{entropy}");
    assert!(relaxed_one_hot(&mut g, lp, 0.0, &mut rng(1)).is_err());
}

#[test]
fn schedule_trace_and_interleaving() {
    let s = specials();
    let mut gen = tiny_generator(12, 15);
    let mut disc = discriminator_for(&gen, 16);
    let docs = toy_docs(3, 10, 12);
    let valid = join_documents(&docs[..2], s);
    let data = GanData {
        train_docs: &docs,
        valid_stream: &valid,
        specials: s,
    };
    let trace = |gen: &mut GeneratorModel, disc: &mut DiscriminatorModel, cfg: &TrainConfig| {
        let mut state = GanState::new(gen, disc, cfg);
        let mut log = MetricsLog::new();
        adversarial_train(gen, disc, &mut state, &data, cfg, &mut rng(17), &mut log, &mut |_| Ok(())).unwrap();
        log.records()
            .iter()
            .filter(|r| r.phase != "epoch")
            .map(|r| r.phase.chars().next().unwrap().to_ascii_uppercase())
            .collect::<String>()
    };
    let cfg = gan_cfg(Regime::CreativeGan);
    assert_eq!(trace(&mut gen, &mut disc, &cfg), "DDDGDDDG");
    let cfg = TrainConfig {
        mle_interleave_every: 1,
        disc_steps_per_gen_step: 2,
        ..cfg
    };
    assert_eq!(trace(&mut gen, &mut disc, &cfg), "DDGMDDGM");
}

#[test]
fn gumbel_temperature_anneals_to_its_floor() {
    let s = specials();
    let mut gen = tiny_generator(12, 18);
    let mut disc = discriminator_for(&gen, 19);
    let docs = toy_docs(4, 10, 12);
    let valid = join_documents(&docs[..2], s);
    let cfg = TrainConfig {
        epochs: 3,
        gan_iters_per_epoch: Some(1),
        gumbel_anneal: 0.5,
        gumbel_floor: 0.3,
        ..gan_cfg(Regime::GumbelGan)
    };
    let mut state = GanState::new(&gen, &disc, &cfg);
    let data = GanData {
        train_docs: &docs,
        valid_stream: &valid,
        specials: s,
    };
    let mut seen = Vec::new();
    adversarial_train(&mut gen, &mut disc, &mut state, &data, &cfg, &mut rng(20), &mut MetricsLog::new(), &mut |e| {
        seen.push(e.state.tau);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![0.5, 0.3, 0.3]);
}

#[test]
fn tiny_cyclic_corpus_is_memorized() {
    let tokens = tokenize(&cyclic_corpus(&["a", "b", "c"], 600));
    let vocab = build_vocab(tokens.iter(), 1, 100).unwrap();
    let stream = vocab.encode(&tokens);
    let mut gen = GeneratorModel::new(tiny_config(vocab.len(), 8, 16, 2, Dropouts::NONE), &mut rng(21)).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 4,
        learning_rate: 1e-2,
        mle_clip: 1.0,
        ..TrainConfig::default()
    };
    let mut adam = new_adam(cfg.gen_adam(), &gen);
    let mut log = MetricsLog::new();
    train_lm(&mut gen, &mut adam, &stream, None, &cfg, "pretrain", &mut rng(22), &mut log).unwrap();
    let ppl = perplexity(&gen, &stream).unwrap();
    assert!(ppl < 1.2, "{ppl}");
    assert_eq!(log.len(), 50);
}

#[test]
fn fine_tuning_on_the_pretraining_corpus_is_stable() {
    let text = textgan::corpus::bundled_grammar_corpus();
    let docs: Vec<String> = textgan::corpus::split_documents(text).into_iter().take(600).collect();
    let split = textgan::corpus::split_corpus(&docs, 1).unwrap();
    let vocab = build_vocab(split.train.iter().flat_map(|d| tokenize(d)), 2, 1000).unwrap();
    let enc = |d: &[String]| join_documents(&textgan::corpus::encode_documents(d, &vocab), vocab.specials());
    let (train, valid) = (enc(&split.train), enc(&split.valid));
    let mut gen = GeneratorModel::new(
        textgan::generator::GeneratorConfig::desk_small(vocab.len()),
        &mut rng(23),
    )
    .unwrap();
    let pre = TrainConfig {
        epochs: 3,
        batch_size: 10,
        ..TrainConfig::default()
    };
    let mut adam = new_adam(pre.gen_adam(), &gen);
    let mut log = MetricsLog::new();
    train_lm(&mut gen, &mut adam, &train, Some(&valid), &pre, "pretrain", &mut rng(24), &mut log).unwrap();
    let before = perplexity(&gen, &valid).unwrap();
    let fine = TrainConfig {
        epochs: 2,
        learning_rate: 3e-4,
        ..pre
    };
    let mut adam = new_adam(fine.gen_adam(), &gen);
    train_lm(&mut gen, &mut adam, &train, Some(&valid), &fine, "finetune", &mut rng(25), &mut log).unwrap();
    let after = perplexity(&gen, &valid).unwrap();
    assert!(after <= 1.05 * before, "{before} -> {after}");
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let s = specials();
    let words: Vec<String> = (7..12).map(|i| format!("w{i}")).collect();
    let vocab = build_vocab(words.iter(), 1, 100).unwrap();
    assert_eq!(vocab.len(), 12);
    let docs = toy_docs(5, 12, 12);
    let valid = join_documents(&docs[..3], s);
    let data = GanData {
        train_docs: &docs,
        valid_stream: &valid,
        specials: s,
    };
    let base = tiny_generator(12, 26);
    let cfg = TrainConfig {
        epochs: 2,
        rollout_count: 1,
        ..gan_cfg(Regime::CreativeGan)
    };

    let (mut g1, mut d1) = (base.clone(), discriminator_for(&base, 27));
    let mut st1 = GanState::new(&g1, &d1, &cfg);
    let mut log1 = MetricsLog::new();
    adversarial_train(&mut g1, &mut d1, &mut st1, &data, &cfg, &mut rng(28), &mut log1, &mut |_| Ok(())).unwrap();

    let half = TrainConfig { epochs: 1, ..cfg.clone() };
    let (mut g2, mut d2) = (base.clone(), discriminator_for(&base, 27));
    let mut st2 = GanState::new(&g2, &d2, &half);
    let mut log2 = MetricsLog::new();
    let mut r2 = rng(28);
    adversarial_train(&mut g2, &mut d2, &mut st2, &data, &half, &mut r2, &mut log2, &mut |_| Ok(())).unwrap();
    let mut config = RunConfig::default();
    config.generator = g2.config.clone();
    config.train = half.clone();
    let ckpt = Checkpoint {
        phase: Phase::Gan,
        config,
        vocab,
        generator: g2,
        gen_adam: Some(st2.gen_adam.clone()),
        discriminator: Some(d2),
        disc_adam: Some(st2.disc_adam.clone()),
        gan: Some(textgan::checkpoint::GanProgress {
            baseline: st2.baseline,
            tau: st2.tau,
            epoch: st2.epoch,
            step: st2.step,
        }),
        rng: RngState::capture(&r2),
        metrics_cursor: log2.len() as u64,
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let (mut g3, mut d3) = (back.generator.clone(), back.discriminator.clone().unwrap());
    let mut st3 = back.gan_state().unwrap();
    let mut r3 = back.rng.restore();
    adversarial_train(&mut g3, &mut d3, &mut st3, &data, &half, &mut r3, &mut log2, &mut |_| Ok(())).unwrap();

    assert_eq!(snapshot(&g3), snapshot(&g1));
    assert_eq!(snapshot(&d3), snapshot(&d1));
    assert_eq!(st3, st1);
    assert_eq!(log2.to_jsonl(), log1.to_jsonl());
}

#[test]
fn divergence_guard_restores_the_best_models() {
    let s = specials();
    let tokens = tokenize(&cyclic_corpus(&["a", "b", "c", "d"], 800));
    let vocab = build_vocab(tokens.iter(), 1, 100).unwrap();
    let ids = vocab.encode(&tokens);
    let docs: Vec<Vec<usize>> = ids.chunks(8).map(<[usize]>::to_vec).collect();
    let stream = join_documents(&docs, s);
    let mut gen = GeneratorModel::new(tiny_config(vocab.len(), 8, 16, 1, Dropouts::NONE), &mut rng(30)).unwrap();
    let pre = TrainConfig {
        epochs: 30,
        batch_size: 4,
        learning_rate: 1e-2,
        mle_clip: 1.0,
        ..TrainConfig::default()
    };
    let mut adam = new_adam(pre.gen_adam(), &gen);
    train_lm(&mut gen, &mut adam, &stream, None, &pre, "pretrain", &mut rng(31), &mut MetricsLog::new()).unwrap();
    let mut disc = discriminator_for(&gen, 32);
    let cfg = TrainConfig {
        regime: Regime::CreativeGan,
        epochs: 5,
        batch_size: 8,
        learning_rate: 1.0,
        gan_clip: 1e6,
        gan_iters_per_epoch: Some(5),
        ..TrainConfig::default()
    };
    let (g0, d0) = (snapshot(&gen), snapshot(&disc));
    let mut state = GanState::new(&gen, &disc, &cfg);
    let data = GanData {
        train_docs: &docs,
        valid_stream: &stream,
        specials: s,
    };
    let mut log = MetricsLog::new();
    let out = adversarial_train(&mut gen, &mut disc, &mut state, &data, &cfg, &mut rng(33), &mut log, &mut |_| Ok(())).unwrap();
    assert!(out.diverged, "{:?}", out.valid_perplexity);
    assert_eq!(log.records().last().unwrap().phase, "diverged");
    if out.valid_perplexity.len() == 1 {
        assert_eq!(snapshot(&gen), g0);
        assert_eq!(snapshot(&disc), d0);
    }
    assert!(perplexity(&gen, &stream).unwrap() <= 5.0 * out.start_perplexity);
}
