use rand::Rng;

use super::{MetricRecord, MetricsLog, Regime, TrainConfig};
use crate::autodiff::{clip_grad_norm, AdamState, Graph, Parameterized, Var};
use crate::corpus::{IdMatrix, Specials};
use crate::discriminator::{DiscInput, DiscriminatorModel};
use crate::encoder::EncoderRun;
use crate::eval::perplexity;
use crate::generator::{GeneratorModel, Trajectory};
use crate::{DropoutMasks, Error, Mode, Result};

/// Scores complete token sequences in `(0, 1)`.
pub trait SequenceScorer {
    fn score_batch(&self, seqs: &[Vec<usize>]) -> Result<Vec<f64>>;
}

impl SequenceScorer for DiscriminatorModel {
    fn score_batch(&self, seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.scores(seqs)
    }
}

/// Adapts a plain function into a [`SequenceScorer`].
pub struct FnScorer<F>(pub F);

impl<F: Fn(&[usize]) -> f64> SequenceScorer for FnScorer<F> {
    fn score_batch(&self, seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
        Ok(seqs.iter().map(|s| (self.0)(s)).collect())
    }
}

/// Exponential moving average of rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub value: f64,
    pub momentum: f64,
}

impl Baseline {
    pub fn new(momentum: f64) -> Self {
        Self { value: 0.0, momentum }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.momentum * self.value + (1.0 - self.momentum) * mean_reward;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStepStats {
    pub loss: f64,
    /// Fraction classified correctly at threshold 0.5.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenStepStats {
    pub loss: f64,
    pub mean_reward: f64,
}

/// One train-mode discriminator update on `real` (label 1) and `fake`
/// (label 0) sequences: binary cross-entropy, clipping to `clip`, one Adam
/// step and a running-statistics update. Accuracy is measured on the scores
/// of this forward pass.
pub fn discriminator_update(
    disc: &mut DiscriminatorModel,
    adam: &mut AdamState,
    real: &[Vec<usize>],
    fake: &[Vec<usize>],
    clip: f64,
) -> Result<DiscStepStats> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::InvalidInput(format!(
            "discriminator batch needs both labels, got {} real and {} fake",
            real.len(),
            fake.len()
        )));
    }
    let mut seqs = real.to_vec();
    seqs.extend_from_slice(fake);
    let labels: Vec<f64> = (0..seqs.len()).map(|i| if i < real.len() { 1.0 } else { 0.0 }).collect();
    let fill = seqs[0][0];
    let (ids, lengths) = IdMatrix::from_padded(&seqs, fill)?;
    let (loss, logits, stats, grads, vars) = {
        let mut g = Graph::new();
        let vars = disc.bind(&mut g, true);
        let out = disc.forward(&mut g, &vars, DiscInput::Ids(&ids, &lengths), Mode::Train)?;
        let loss = g.bce_with_logits(out.logits, &labels)?;
        let grads = g.backward(loss)?;
        (g.scalar(loss), g.value(out.logits).to_vec(), out.batch_stats, grads, vars.all())
    };
    grads.accumulate_into(disc.params_mut(), &vars)?;
    clip_grad_norm(&mut disc.params_mut(), clip);
    adam.step(&mut disc.params_mut())?;
    disc.update_running_stats(&stats)?;
    let correct = logits
        .iter()
        .zip(&labels)
        .filter(|(&l, &y)| (l > 0.0) == (y > 0.5))
        .count();
    Ok(DiscStepStats {
        loss,
        accuracy: correct as f64 / labels.len() as f64,
    })
}

/// Samples one fake per real sequence from `gen`, starting at the
/// beginning-of-sequence token and stopping at end-of-sequence or at the
/// real sequence's length, then runs [`discriminator_update`].
pub fn train_discriminator_step<R: Rng + ?Sized>(
    disc: &mut DiscriminatorModel,
    adam: &mut AdamState,
    gen: &GeneratorModel,
    real: &[Vec<usize>],
    specials: Specials,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<DiscStepStats> {
    let fake = sample_fakes(gen, real, specials, cfg.sample_temperature, rng)?;
    discriminator_update(disc, adam, real, &fake, cfg.gan_clip)
}

fn sample_fakes<R: Rng + ?Sized>(
    gen: &GeneratorModel,
    real: &[Vec<usize>],
    specials: Specials,
    temperature: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let prefixes = vec![vec![specials.bos]; real.len()];
    let limits: Vec<usize> = real.iter().map(|r| r.len().saturating_sub(1).max(1)).collect();
    let trajs = gen.sample_batch(&prefixes, &limits, temperature, Some(specials.eos), rng)?;
    Ok(trajs.iter().map(Trajectory::full_sequence).collect())
}

/// REINFORCE surrogate loss `-(1/B) * weighted_log_prob`, where
/// `weighted_log_prob` is `sum_b sum_k (r_bk - baseline) log p_bk` (see
/// [`GeneratorModel::weighted_log_prob`]).
pub fn policy_gradient_loss(g: &mut Graph<'_>, weighted_log_prob: Var, batch: usize) -> Result<Var> {
    Ok(g.scale(weighted_log_prob, -1.0 / batch as f64)?)
}

/// Monte-Carlo per-step rewards: the reward for sampled token `k` is the
/// mean score of `count` completions of `prefix + tokens[..=k]` under the
/// current policy; the last token gets the terminal reward.
#[allow(clippy::too_many_arguments)]
fn rollout_rewards<S: SequenceScorer + ?Sized, R: Rng + ?Sized>(
    gen: &GeneratorModel,
    scorer: &S,
    trajs: &[Trajectory],
    max_new: &[usize],
    count: usize,
    temperature: f64,
    eos: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut rewards: Vec<Vec<f64>> = trajs.iter().map(|t| vec![0.0; t.tokens.len()]).collect();
    for (b, t) in trajs.iter().enumerate() {
        if let Some(last) = rewards[b].last_mut() {
            *last = t.reward;
        }
    }
    let longest = trajs.iter().map(|t| t.tokens.len()).max().unwrap_or(0);
    #[allow(clippy::needless_range_loop)]
    for k in 0..longest.saturating_sub(1) {
        let rows: Vec<usize> = (0..trajs.len()).filter(|&b| trajs[b].tokens.len() > k + 1).collect();
        if rows.is_empty() {
            continue;
        }
        let mut prefixes = Vec::with_capacity(rows.len() * count);
        let mut limits = Vec::with_capacity(rows.len() * count);
        for &b in &rows {
            let mut p = trajs[b].prefix.clone();
            p.extend_from_slice(&trajs[b].tokens[..=k]);
            for _ in 0..count {
                prefixes.push(p.clone());
                limits.push(max_new[b] - (k + 1));
            }
        }
        let done = gen.sample_batch(&prefixes, &limits, temperature, Some(eos), rng)?;
        let seqs: Vec<Vec<usize>> = done.iter().map(Trajectory::full_sequence).collect();
        let scores = scorer.score_batch(&seqs)?;
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Diverged("non-finite rollout reward".into()));
        }
        for (i, &b) in rows.iter().enumerate() {
            let chunk = &scores[i * count..(i + 1) * count];
            rewards[b][k] = chunk.iter().sum::<f64>() / count as f64;
        }
    }
    Ok(rewards)
}

/// One policy-gradient generator update.
///
/// Samples a trajectory per prefix (row `b` draws at most `max_new[b]`
/// tokens), scores each complete sequence with `scorer`, and minimises
/// `-(1/B) sum_b (R_b - baseline) sum_k log p(token_bk)`. With
/// `rollout_count > 0` each step uses its own Monte-Carlo reward. The
/// generator runs without dropout. The baseline is updated with the batch's
/// mean reward after the step.
#[allow(clippy::too_many_arguments)]
pub fn creative_gan_generator_step<S: SequenceScorer + ?Sized, R: Rng + ?Sized>(
    gen: &mut GeneratorModel,
    adam: &mut AdamState,
    scorer: &S,
    baseline: &mut Baseline,
    prefixes: &[Vec<usize>],
    max_new: &[usize],
    eos: Option<usize>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(GenStepStats, Vec<Trajectory>)> {
    let mut trajs = gen.sample_batch(prefixes, max_new, cfg.sample_temperature, eos, rng)?;
    let seqs: Vec<Vec<usize>> = trajs.iter().map(Trajectory::full_sequence).collect();
    let rewards = scorer.score_batch(&seqs)?;
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Diverged("non-finite reward".into()));
    }
    for (t, &r) in trajs.iter_mut().zip(&rewards) {
        t.reward = r;
        t.baseline_at_sample = baseline.value;
    }
    let weights: Vec<Vec<f64>> = if cfg.rollout_count > 0 {
        let eos = eos.ok_or_else(|| Error::InvalidInput("rollouts need an end-of-sequence id".into()))?;
        let per_step = rollout_rewards(gen, scorer, &trajs, max_new, cfg.rollout_count, cfg.sample_temperature, eos, rng)?;
        for (t, r) in trajs.iter_mut().zip(&per_step) {
            t.per_step_rewards = Some(r.clone());
        }
        per_step
            .iter()
            .map(|r| r.iter().map(|&x| x - baseline.value).collect())
            .collect()
    } else {
        trajs.iter().map(|t| vec![t.reward - baseline.value; t.tokens.len()]).collect()
    };
    let batch = trajs.len();
    let (loss, grads, vars) = {
        let mut g = Graph::new();
        let vars = gen.bind(&mut g, true);
        let wlp = gen.weighted_log_prob(&mut g, &vars, &trajs, &weights)?;
        let loss = policy_gradient_loss(&mut g, wlp, batch)?;
        let grads = g.backward(loss)?;
        (g.scalar(loss), grads, vars.all())
    };
    grads.accumulate_into(gen.params_mut(), &vars)?;
    clip_grad_norm(&mut gen.params_mut(), cfg.gan_clip);
    adam.step(&mut gen.params_mut())?;
    let mean_reward = rewards.iter().sum::<f64>() / batch as f64;
    baseline.update(mean_reward);
    Ok((GenStepStats { loss, mean_reward }, trajs))
}

/// Standard Gumbel noise `-ln(-ln u)`, `u ~ Uniform(0, 1)`.
pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = loop {
                let u = rng.gen::<f64>();
                if u > 0.0 {
                    break u;
                }
            };
            -(-u.ln()).ln()
        })
        .collect()
}

/// Relaxed one-hot sample `softmax((log_probs + g) / tau)` with fresh Gumbel
/// noise `g`, differentiable in `log_probs`.
pub fn relaxed_one_hot<R: Rng + ?Sized>(g: &mut Graph<'_>, log_probs: Var, tau: f64, rng: &mut R) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("gumbel temperature must be positive, got {tau}")));
    }
    let n = g.value(log_probs).len();
    let noise = gumbel_noise(n, rng);
    let x = g.add_const(log_probs, &noise)?;
    let x = g.scale(x, 1.0 / tau)?;
    Ok(g.softmax(x)?)
}

/// One Gumbel-softmax generator update: starting from `bos`, generate
/// `length` relaxed tokens, feeding each soft token back as the next input
/// (a probability-weighted embedding mix), score the relaxed sequence with
/// the frozen discriminator in eval mode, and minimise the negative mean
/// score. The generator runs without dropout.
#[allow(clippy::too_many_arguments)]
pub fn gumbel_generator_step<R: Rng + ?Sized>(
    gen: &mut GeneratorModel,
    adam: &mut AdamState,
    disc: &DiscriminatorModel,
    batch: usize,
    length: usize,
    bos: usize,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<GenStepStats> {
    if batch == 0 || length == 0 {
        return Err(Error::InvalidInput("gumbel step needs a positive batch and length".into()));
    }
    if disc.encoder.vocab_size() != gen.vocab_size() {
        return Err(Error::InvalidInput("generator and discriminator vocabularies differ".into()));
    }
    let v = gen.vocab_size();
    let none = DropoutMasks::none();
    let (loss, mean_score, grads, vars) = {
        let mut g = Graph::new();
        let gv = gen.bind(&mut g, true);
        let dv = disc.bind(&mut g, false);
        let mut onehot = vec![0.0; batch * v];
        for b in 0..batch {
            onehot[b * v + bos] = 1.0;
        }
        let first = g.constant(vec![batch, v], onehot)?;
        let mut soft = vec![first];
        let mut state = gen.zero_state(batch).bind(&mut g, &gen.encoder)?;
        let mut input = first;
        for _ in 0..length {
            let x = gen.encoder.embed_soft(&mut g, &gv.encoder, input, &none)?;
            let EncoderRun { top, state: next, .. } = gen.encoder.run(&mut g, &gv.encoder, x, 1, batch, &state, &none)?;
            state = next;
            let logits = gen.decode(&mut g, &gv, top)?;
            let lp = g.log_softmax(logits)?;
            let y = relaxed_one_hot(&mut g, lp, tau, rng)?;
            soft.push(y);
            input = y;
        }
        let out = disc.forward(&mut g, &dv, DiscInput::Soft(&soft), Mode::Eval)?;
        let score = g.sigmoid(out.logits)?;
        let mean = g.mean(score)?;
        let loss = g.scale(mean, -1.0)?;
        let grads = g.backward(loss)?;
        (g.scalar(loss), g.scalar(mean), grads, gv.all())
    };
    grads.accumulate_into(gen.params_mut(), &vars)?;
    clip_grad_norm(&mut gen.params_mut(), cfg.gan_clip);
    adam.step(&mut gen.params_mut())?;
    Ok(GenStepStats {
        loss,
        mean_reward: mean_score,
    })
}

/// Training documents (token ids without boundary markers) and the
/// validation stream used by [`adversarial_train`].
#[derive(Debug, Clone, Copy)]
pub struct GanData<'d> {
    pub train_docs: &'d [Vec<usize>],
    pub valid_stream: &'d [usize],
    pub specials: Specials,
}

/// Optimizer and schedule state carried across epochs (and checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct GanState {
    pub gen_adam: AdamState,
    pub disc_adam: AdamState,
    pub baseline: Baseline,
    pub tau: f64,
    /// Epochs completed so far.
    pub epoch: usize,
    pub step: usize,
}

impl GanState {
    pub fn new(gen: &GeneratorModel, disc: &DiscriminatorModel, cfg: &TrainConfig) -> Self {
        Self {
            gen_adam: AdamState::new(cfg.gen_adam(), &gen.params()),
            disc_adam: AdamState::new(cfg.disc_adam(), &disc.params()),
            baseline: Baseline::new(cfg.baseline_momentum),
            tau: cfg.gumbel_temperature,
            epoch: 0,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleStep {
    Disc,
    Gen,
    Mle,
}

impl ScheduleStep {
    pub fn letter(self) -> char {
        match self {
            Self::Disc => 'D',
            Self::Gen => 'G',
            Self::Mle => 'M',
        }
    }
}

/// Passed to the per-epoch callback of [`adversarial_train`]; holds
/// everything a checkpoint needs, including the random-number generator.
pub struct EpochEnd<'e, R: ?Sized> {
    pub epoch: usize,
    pub gen: &'e GeneratorModel,
    pub disc: &'e DiscriminatorModel,
    pub state: &'e GanState,
    pub rng: &'e R,
    pub valid_perplexity: f64,
    pub log_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanOutcome {
    pub schedule: Vec<ScheduleStep>,
    pub start_perplexity: f64,
    pub valid_perplexity: Vec<f64>,
    /// Mean discriminator accuracy per epoch.
    pub disc_accuracy: Vec<f64>,
    pub mean_reward: Vec<f64>,
    pub diverged: bool,
}

/// Real sequence for adversarial training: `bos + doc + eos`, cut to `cap`
/// tokens.
fn real_sequence(doc: &[usize], specials: Specials, cap: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(doc.len() + 2);
    s.push(specials.bos);
    s.extend_from_slice(doc);
    s.push(specials.eos);
    s.truncate(cap.max(2));
    s
}

fn real_batch<R: Rng + ?Sized>(data: &GanData<'_>, n: usize, cap: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let doc = &data.train_docs[rng.gen_range(0..data.train_docs.len())];
            real_sequence(doc, data.specials, cap)
        })
        .collect()
}

/// One teacher-forced LM step on a batch of real sequences.
fn mle_step(gen: &mut GeneratorModel, adam: &mut AdamState, real: &[Vec<usize>], cfg: &TrainConfig) -> Result<f64> {
    let trajs: Vec<Trajectory> = real
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| Trajectory {
            prefix: s[..1].to_vec(),
            tokens: s[1..].to_vec(),
            step_log_probs: Vec::new(),
            reward: 0.0,
            per_step_rewards: None,
            baseline_at_sample: 0.0,
        })
        .collect();
    let total: usize = trajs.iter().map(|t| t.tokens.len()).sum();
    let weights: Vec<Vec<f64>> = trajs.iter().map(|t| vec![1.0; t.tokens.len()]).collect();
    let (loss, grads, vars) = {
        let mut g = Graph::new();
        let vars = gen.bind(&mut g, true);
        let lp = gen.weighted_log_prob(&mut g, &vars, &trajs, &weights)?;
        let loss = g.scale(lp, -1.0 / total as f64)?;
        let grads = g.backward(loss)?;
        (g.scalar(loss), grads, vars.all())
    };
    grads.accumulate_into(gen.params_mut(), &vars)?;
    clip_grad_norm(&mut gen.params_mut(), cfg.mle_clip);
    adam.step(&mut gen.params_mut())?;
    Ok(loss)
}

/// Adversarial fine-tuning. Each generator iteration is preceded by
/// `disc_steps_per_gen_step` discriminator steps; an epoch is
/// `gan_iters_per_epoch` generator iterations. Every step is logged. At the
/// end of each epoch the validation perplexity is logged and `on_epoch` is
/// called (for checkpointing); the Gumbel temperature is annealed.
///
/// If validation perplexity exceeds 5x its starting value, training halts
/// and the generator and discriminator from the best epoch (or the start)
/// are restored.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_train<R: Rng + ?Sized>(
    gen: &mut GeneratorModel,
    disc: &mut DiscriminatorModel,
    state: &mut GanState,
    data: &GanData<'_>,
    cfg: &TrainConfig,
    rng: &mut R,
    log: &mut MetricsLog,
    on_epoch: &mut dyn FnMut(EpochEnd<'_, R>) -> Result<()>,
) -> Result<GanOutcome> {
    cfg.validate()?;
    if cfg.regime == Regime::Mle {
        return Err(Error::InvalidConfig("adversarial training needs a GAN regime".into()));
    }
    if data.train_docs.is_empty() {
        return Err(Error::InvalidInput("no training documents".into()));
    }
    let cap = gen.config.bptt_len;
    let iters = cfg
        .gan_iters_per_epoch
        .unwrap_or_else(|| data.train_docs.len().div_ceil(cfg.batch_size));
    let start = perplexity(gen, data.valid_stream)?;
    let mut outcome = GanOutcome {
        schedule: Vec::new(),
        start_perplexity: start,
        valid_perplexity: Vec::new(),
        disc_accuracy: Vec::new(),
        mean_reward: Vec::new(),
        diverged: false,
    };
    let mut best = (start, gen.clone(), disc.clone());
    let first_epoch = state.epoch + 1;
    for epoch in first_epoch..first_epoch + cfg.epochs {
        let (mut acc_sum, mut acc_n, mut rew_sum, mut rew_n) = (0.0, 0usize, 0.0, 0usize);
        for it in 0..iters {
            for _ in 0..cfg.disc_steps_per_gen_step {
                let real = real_batch(data, cfg.batch_size, cap, rng);
                let st = train_discriminator_step(disc, &mut state.disc_adam, gen, &real, data.specials, cfg, rng)?;
                state.step += 1;
                outcome.schedule.push(ScheduleStep::Disc);
                acc_sum += st.accuracy;
                acc_n += 1;
                let mut rec = MetricRecord::new("disc", epoch, state.step, st.loss, cfg.seed);
                rec.disc_accuracy = Some(st.accuracy);
                log.push(rec)?;
            }
            let stats = match cfg.regime {
                Regime::CreativeGan => {
                    let lengths = real_batch(data, cfg.batch_size, cap, rng);
                    let prefixes = vec![vec![data.specials.bos]; cfg.batch_size];
                    let limits: Vec<usize> = lengths.iter().map(|s| s.len().saturating_sub(1).max(1)).collect();
                    let disc_ref: &DiscriminatorModel = disc;
                    creative_gan_generator_step(
                        gen,
                        &mut state.gen_adam,
                        disc_ref,
                        &mut state.baseline,
                        &prefixes,
                        &limits,
                        Some(data.specials.eos),
                        cfg,
                        rng,
                    )?
                    .0
                }
                Regime::GumbelGan => {
                    let doc = &data.train_docs[rng.gen_range(0..data.train_docs.len())];
                    let length = real_sequence(doc, data.specials, cap).len() - 1;
                    gumbel_generator_step(
                        gen,
                        &mut state.gen_adam,
                        disc,
                        cfg.batch_size,
                        length,
                        data.specials.bos,
                        state.tau,
                        cfg,
                        rng,
                    )?
                }
                Regime::Mle => unreachable!("rejected above"),
            };
            state.step += 1;
            outcome.schedule.push(ScheduleStep::Gen);
            rew_sum += stats.mean_reward;
            rew_n += 1;
            let mut rec = MetricRecord::new("gen", epoch, state.step, stats.loss, cfg.seed);
            rec.mean_reward = Some(stats.mean_reward);
            log.push(rec)?;
            if cfg.mle_interleave_every > 0 && (it + 1) % cfg.mle_interleave_every == 0 {
                let real = real_batch(data, cfg.batch_size, cap, rng);
                let loss = mle_step(gen, &mut state.gen_adam, &real, cfg)?;
                state.step += 1;
                outcome.schedule.push(ScheduleStep::Mle);
                log.push(MetricRecord::new("mle", epoch, state.step, loss, cfg.seed))?;
            }
        }
        let ppl = perplexity(gen, data.valid_stream)?;
        let acc = acc_sum / acc_n.max(1) as f64;
        let rew = rew_sum / rew_n.max(1) as f64;
        outcome.valid_perplexity.push(ppl);
        outcome.disc_accuracy.push(acc);
        outcome.mean_reward.push(rew);
        let mut rec = MetricRecord::new("epoch", epoch, state.step, ppl.ln(), cfg.seed);
        rec.perplexity = Some(ppl);
        rec.disc_accuracy = Some(acc);
        rec.mean_reward = Some(rew);
        log.push(rec)?;
        state.epoch = epoch;
        if cfg.regime == Regime::GumbelGan {
            state.tau = (state.tau * cfg.gumbel_anneal).max(cfg.gumbel_floor);
        }
        if !ppl.is_finite() || ppl > 5.0 * start {
            *gen = best.1;
            *disc = best.2;
            outcome.diverged = true;
            let mut rec = MetricRecord::new("diverged", epoch, state.step, ppl.ln(), cfg.seed);
            rec.perplexity = Some(ppl);
            log.push(rec)?;
            return Ok(outcome);
        }
        if ppl < best.0 {
            best = (ppl, gen.clone(), disc.clone());
        }
        on_epoch(EpochEnd {
            epoch,
            gen,
            disc,
            state,
            rng: &*rng,
            valid_perplexity: ppl,
            log_len: log.len(),
        })?;
    }
    Ok(outcome)
}
