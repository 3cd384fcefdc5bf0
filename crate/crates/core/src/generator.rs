//! The generator: a language model built from an embedding, a stack of LSTM
//! layers and a decoder that reuses the embedding matrix as its output
//! projection.
//!
//! ```
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha8Rng;
//! use textgan::generator::{GeneratorConfig, GeneratorModel};
//!
//! let mut rng = ChaCha8Rng::seed_from_u64(1);
//! let cfg = GeneratorConfig::desk_small(20);
//! let model = GeneratorModel::new(cfg, &mut rng).unwrap();
//! let lp = model.sequence_log_prob(&[2, 7, 8]).unwrap();
//! assert!(lp < 0.0);
//! ```

use rand::Rng;

use crate::autodiff::{Graph, Parameterized, Tensor, Var};
use crate::corpus::IdMatrix;
use crate::encoder::{EncoderRun, EncoderVars};
use crate::{DropoutMasks, Dropouts, EncoderKind, Error, HiddenState, LstmEncoder, Mode, Result};

/// Temperatures below this decode greedily.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub kind: EncoderKind,
    pub vocab_size: usize,
    pub embedding_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub bptt_len: usize,
    pub dropouts: Dropouts,
}

impl GeneratorConfig {
    /// Small enough to train on one CPU core: embedding 64, hidden 128,
    /// 2 layers, BPTT 35.
    pub fn desk_small(vocab_size: usize) -> Self {
        Self {
            kind: EncoderKind::AwdLstm,
            vocab_size,
            embedding_size: 64,
            hidden_size: 128,
            num_layers: 2,
            bptt_len: 35,
            dropouts: Dropouts::default(),
        }
    }

    /// Full-scale AWD-LSTM shape: embedding 400, hidden 1150, 3 layers,
    /// BPTT 70.
    pub fn full_awd_lstm(vocab_size: usize) -> Self {
        Self {
            kind: EncoderKind::AwdLstm,
            vocab_size,
            embedding_size: 400,
            hidden_size: 1150,
            num_layers: 3,
            bptt_len: 70,
            dropouts: Dropouts::default(),
        }
    }

    /// Full-scale Transformer-XL shape (embedding 410, 12 layers, hidden
    /// 2100, BPTT 150). Loadable for reporting; models cannot be built from it.
    pub fn full_transformer_xl(vocab_size: usize) -> Self {
        Self {
            kind: EncoderKind::TransformerXl,
            vocab_size,
            embedding_size: 410,
            hidden_size: 2100,
            num_layers: 12,
            bptt_len: 150,
            dropouts: Dropouts::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embedding_size", self.embedding_size),
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("bptt_len", self.bptt_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        self.dropouts.validate()
    }

    /// `(input, output)` width of each LSTM layer. The top layer emits
    /// `embedding_size` features so the decoder can reuse the embedding.
    pub fn layer_sizes(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let input = if l == 0 { self.embedding_size } else { self.hidden_size };
                let output = if l + 1 == self.num_layers {
                    self.embedding_size
                } else {
                    self.hidden_size
                };
                (input, output)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub config: GeneratorConfig,
    pub encoder: LstmEncoder,
    /// `[vocab]`; the decoder weight is `encoder.embedding`.
    pub decoder_bias: Tensor,
}

impl Parameterized for GeneratorModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        v.push(&self.decoder_bias);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        v.push(&mut self.decoder_bias);
        v
    }
}

/// Graph handles for one forward pass, in [`Parameterized::params`] order.
#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub encoder: EncoderVars,
    pub decoder_bias: Var,
}

impl GeneratorVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        v.push(self.decoder_bias);
        v
    }
}

/// Result of [`GeneratorModel::lm_forward`].
#[derive(Debug, Clone)]
pub struct LmOutput {
    /// `[batch, time, vocab]`
    pub logits: Var,
    /// The same logits time-major, `[time * batch, vocab]`; row `t * batch + b`.
    pub logits_time_major: Var,
    /// Top-layer outputs per step, each `[batch, embedding]`.
    pub steps: Vec<Var>,
    /// Detached state after the last step.
    pub state: HiddenState,
}

/// A sampled continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Forced prefix, not part of the trajectory proper.
    pub prefix: Vec<usize>,
    /// Sampled tokens (includes the end-of-sequence token when one was drawn).
    pub tokens: Vec<usize>,
    /// Untempered model log-probability of each sampled token.
    pub step_log_probs: Vec<f64>,
    /// Discriminator score of `prefix + tokens`; zero until scored.
    pub reward: f64,
    /// Per-step rewards from Monte-Carlo rollouts, when used.
    pub per_step_rewards: Option<Vec<f64>>,
    pub baseline_at_sample: f64,
}

impl Trajectory {
    /// `prefix` followed by `tokens`.
    pub fn full_sequence(&self) -> Vec<usize> {
        let mut s = self.prefix.clone();
        s.extend_from_slice(&self.tokens);
        s
    }

    pub fn log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }
}

/// Ids of a `[batch, time]` matrix in time-major order.
pub fn time_major(ids: &IdMatrix) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.data.len());
    for t in 0..ids.cols {
        for b in 0..ids.rows {
            out.push(ids.get(b, t));
        }
    }
    out
}

/// Draws an index from `softmax(logits / temperature)`; greedy when the
/// temperature is below [`GREEDY_TEMPERATURE`].
pub fn sample_logits<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    if temperature < GREEDY_TEMPERATURE {
        return argmax(logits);
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| ((l - m) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if u < wi {
            return i;
        }
        u -= wi;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

impl GeneratorModel {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        if config.kind != EncoderKind::AwdLstm {
            return Err(Error::Unsupported(format!("{} encoder", config.kind.name())));
        }
        let encoder = LstmEncoder::new(&config, rng)?;
        let decoder_bias = Tensor::zeros(vec![config.vocab_size])?.with_requires_grad(true);
        Ok(Self {
            config,
            encoder,
            decoder_bias,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> GeneratorVars {
        let encoder = self.encoder.bind(g, trainable);
        let decoder_bias = if trainable {
            g.leaf(&self.decoder_bias)
        } else {
            g.frozen(&self.decoder_bias)
        };
        GeneratorVars { encoder, decoder_bias }
    }

    pub fn zero_state(&self, batch: usize) -> HiddenState {
        HiddenState::zeros(&self.encoder, batch)
    }

    /// Masks for one window: sampled in train mode, none in eval mode.
    pub fn masks<R: Rng + ?Sized>(&self, mode: Mode, batch: usize, rng: &mut R) -> DropoutMasks {
        match mode {
            Mode::Train => DropoutMasks::sample(&self.encoder, &self.config.dropouts, batch, true, rng),
            Mode::Eval => DropoutMasks::none(),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab_size()) {
            Some(&bad) => Err(Error::InvalidInput(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size()
            ))),
            None => Ok(()),
        }
    }

    /// Decoder over time-major top outputs `[n, embedding]` → `[n, vocab]`.
    pub fn decode(&self, g: &mut Graph<'_>, vars: &GeneratorVars, top: Var) -> Result<Var> {
        let logits = g.matmul_nt(top, vars.encoder.embedding)?;
        Ok(g.add_bias(logits, vars.decoder_bias)?)
    }

    /// Teacher-forced forward over a `[batch, time]` window.
    pub fn lm_forward(
        &self,
        g: &mut Graph<'_>,
        vars: &GeneratorVars,
        ids: &IdMatrix,
        state: &HiddenState,
        masks: &DropoutMasks,
    ) -> Result<LmOutput> {
        self.check_ids(&ids.data)?;
        if state.batch != ids.rows {
            return Err(Error::InvalidInput(format!(
                "hidden state batch {} does not match input batch {}",
                state.batch, ids.rows
            )));
        }
        let (batch, time) = (ids.rows, ids.cols);
        let x = self.encoder.embed_ids(g, &vars.encoder, ids, masks)?;
        let init = state.bind(g, &self.encoder)?;
        let EncoderRun { steps, top, state: st } = self.encoder.run(g, &vars.encoder, x, time, batch, &init, masks)?;
        let logits_tm = self.decode(g, vars, top)?;
        let logits = if time == 1 {
            g.reshape(logits_tm, vec![batch, 1, self.vocab_size()])?
        } else {
            let r = g.reshape(logits_tm, vec![time, batch, self.vocab_size()])?;
            g.transpose01(r)?
        };
        Ok(LmOutput {
            logits,
            logits_time_major: logits_tm,
            steps,
            state: HiddenState::detach(g, &st, batch),
        })
    }

    /// Mean cross-entropy of a BPTT window plus the state to carry forward.
    pub fn window_loss(
        &self,
        g: &mut Graph<'_>,
        vars: &GeneratorVars,
        inputs: &IdMatrix,
        targets: &IdMatrix,
        state: &HiddenState,
        masks: &DropoutMasks,
    ) -> Result<(Var, HiddenState)> {
        let out = self.lm_forward(g, vars, inputs, state, masks)?;
        let loss = g.cross_entropy(out.logits_time_major, &time_major(targets))?;
        Ok((loss, out.state))
    }

    /// Eval-mode negative log-likelihood of every `stream[i + 1]` given
    /// `stream[..=i]`, processed in windows of `window` tokens with the hidden
    /// state carried across windows.
    pub fn stream_nll(&self, stream: &[usize], window: usize) -> Result<Vec<f64>> {
        if stream.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 tokens to score a stream, got {}",
                stream.len()
            )));
        }
        if window == 0 {
            return Err(Error::InvalidInput("window must be positive".into()));
        }
        self.check_ids(stream)?;
        let mut state = self.zero_state(1);
        let mut nll = Vec::with_capacity(stream.len() - 1);
        let positions = stream.len() - 1;
        let mut start = 0;
        while start < positions {
            let len = window.min(positions - start);
            let inputs = IdMatrix::new(1, len, stream[start..start + len].to_vec())?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let out = self.lm_forward(&mut g, &vars, &inputs, &state, &DropoutMasks::none())?;
            let v = self.vocab_size();
            let logits = g.value(out.logits_time_major);
            for t in 0..len {
                let lp = log_softmax_row(&logits[t * v..(t + 1) * v]);
                nll.push(-lp[stream[start + t + 1]]);
            }
            state = out.state;
            start += len;
        }
        Ok(nll)
    }

    /// Eval-mode `log p(seq[1..] | seq[0])`; zero for a single token.
    pub fn sequence_log_prob(&self, seq: &[usize]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty sequence".into()));
        }
        if seq.len() == 1 {
            self.check_ids(seq)?;
            return Ok(0.0);
        }
        Ok(-self.stream_nll(seq, self.config.bptt_len)?.iter().sum::<f64>())
    }

    /// Eval-mode next-token logits after consuming `prefix`, with the state
    /// that produced them.
    pub fn next_logits(&self, prefix: &[usize], state: &HiddenState) -> Result<(Vec<f64>, HiddenState)> {
        let ids = IdMatrix::new(1, prefix.len(), prefix.to_vec())?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let out = self.lm_forward(&mut g, &vars, &ids, state, &DropoutMasks::none())?;
        let v = self.vocab_size();
        let logits = g.value(out.logits_time_major);
        Ok((logits[logits.len() - v..].to_vec(), out.state))
    }

    /// Samples continuations for a batch of equal-length prefixes in eval
    /// mode. Row `b` draws at most `max_new[b]` tokens and stops early after
    /// drawing `eos`. Tokens come from `softmax(logits / temperature)`; the
    /// recorded log-probabilities are those of the untempered model.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        prefixes: &[Vec<usize>],
        max_new: &[usize],
        temperature: f64,
        eos: Option<usize>,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        let batch = prefixes.len();
        if batch == 0 || max_new.len() != batch {
            return Err(Error::InvalidInput(format!(
                "{batch} prefixes with {} length limits",
                max_new.len()
            )));
        }
        let plen = prefixes[0].len();
        if plen == 0 || prefixes.iter().any(|p| p.len() != plen) {
            return Err(Error::InvalidInput("prefixes must be nonempty and of equal length".into()));
        }
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
        }
        if max_new.contains(&0) {
            return Err(Error::InvalidInput("max_len must be at least 1".into()));
        }
        let mut trajs: Vec<Trajectory> = prefixes
            .iter()
            .map(|p| Trajectory {
                prefix: p.clone(),
                tokens: Vec::new(),
                step_log_probs: Vec::new(),
                reward: 0.0,
                per_step_rewards: None,
                baseline_at_sample: 0.0,
            })
            .collect();
        let v = self.vocab_size();
        let mut state = self.zero_state(batch);
        let mut feed = IdMatrix::new(batch, plen, prefixes.concat())?;
        let mut active: Vec<bool> = vec![true; batch];
        let steps = *max_new.iter().max().unwrap_or(&0);
        for step in 0..steps {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let out = self.lm_forward(&mut g, &vars, &feed, &state, &DropoutMasks::none())?;
            state = out.state;
            let logits = g.value(out.logits_time_major);
            let last = &logits[logits.len() - batch * v..];
            let mut next = Vec::with_capacity(batch);
            for (b, tr) in trajs.iter_mut().enumerate() {
                let row = &last[b * v..(b + 1) * v];
                if !active[b] {
                    next.push(*tr.tokens.last().unwrap_or(&tr.prefix[plen - 1]));
                    continue;
                }
                let tok = sample_logits(row, temperature, rng);
                tr.step_log_probs.push(log_softmax_row(row)[tok]);
                tr.tokens.push(tok);
                if Some(tok) == eos || step + 1 >= max_new[b] {
                    active[b] = false;
                }
                next.push(tok);
            }
            if !active.iter().any(|&a| a) {
                break;
            }
            feed = IdMatrix::new(batch, 1, next)?;
        }
        Ok(trajs)
    }

    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        prefix: &[usize],
        max_len: usize,
        temperature: f64,
        eos: Option<usize>,
        rng: &mut R,
    ) -> Result<Trajectory> {
        let mut out = self.sample_batch(&[prefix.to_vec()], &[max_len], temperature, eos, rng)?;
        Ok(out.remove(0))
    }

    /// Teacher-forced, eval-mode log-probabilities of the sampled tokens,
    /// time-major `[time * batch]`, each scaled by `weight(b, k)` for the
    /// `k`-th sampled token of trajectory `b` (zero at padding and prefix
    /// positions).
    fn weighted_step_log_probs(
        &self,
        g: &mut Graph<'_>,
        vars: &GeneratorVars,
        trajs: &[Trajectory],
        weight: impl Fn(usize, usize) -> f64,
    ) -> Result<(Var, usize)> {
        let seqs: Vec<Vec<usize>> = trajs.iter().map(Trajectory::full_sequence).collect();
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if trajs.is_empty() || max_len < 2 || trajs.iter().any(|t| t.prefix.is_empty()) {
            return Err(Error::InvalidInput("trajectories need a prefix and sampled tokens".into()));
        }
        let batch = trajs.len();
        let time = max_len - 1;
        let mut inputs = Vec::with_capacity(batch * time);
        for s in &seqs {
            let mut row: Vec<usize> = s[..s.len() - 1].to_vec();
            row.resize(time, s[0]);
            inputs.extend(row);
        }
        let inputs = IdMatrix::new(batch, time, inputs)?;
        let mut targets = Vec::with_capacity(batch * time);
        let mut weights = Vec::with_capacity(batch * time);
        for t in 0..time {
            for (b, tr) in trajs.iter().enumerate() {
                // position t predicts full[t + 1]
                let k = (t + 1).checked_sub(tr.prefix.len());
                match k.filter(|&k| k < tr.tokens.len()) {
                    Some(k) => {
                        targets.push(tr.tokens[k]);
                        weights.push(weight(b, k));
                    }
                    None => {
                        targets.push(0);
                        weights.push(0.0);
                    }
                }
            }
        }
        let out = self.lm_forward(g, vars, &inputs, &self.zero_state(batch), &DropoutMasks::none())?;
        let lp = g.log_softmax(out.logits_time_major)?;
        let picked = g.pick(lp, &targets)?;
        Ok((g.mul_const(picked, weights)?, time))
    }

    /// Differentiable log-probability of each trajectory's sampled tokens,
    /// teacher-forced in eval mode. Returns a `[batch]` Var.
    pub fn trajectory_log_probs(&self, g: &mut Graph<'_>, vars: &GeneratorVars, trajs: &[Trajectory]) -> Result<Var> {
        let (picked, time) = self.weighted_step_log_probs(g, vars, trajs, |_, _| 1.0)?;
        let batch = trajs.len();
        let per_t = g.reshape(picked, vec![time, batch])?;
        let ones = g.constant(vec![1, time], vec![1.0; time])?;
        let sums = g.matmul(ones, per_t)?;
        Ok(g.reshape(sums, vec![batch])?)
    }

    /// Scalar `sum_b sum_k weights[b][k] * log p(tokens_b[k])`.
    pub fn weighted_log_prob(
        &self,
        g: &mut Graph<'_>,
        vars: &GeneratorVars,
        trajs: &[Trajectory],
        weights: &[Vec<f64>],
    ) -> Result<Var> {
        if weights.len() != trajs.len() || weights.iter().zip(trajs).any(|(w, t)| w.len() != t.tokens.len()) {
            return Err(Error::InvalidInput("one weight per sampled token is required".into()));
        }
        let (picked, _) = self.weighted_step_log_probs(g, vars, trajs, |b, k| weights[b][k])?;
        Ok(g.sum(picked)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: usize) -> GeneratorModel {
        let cfg = GeneratorConfig {
            embedding_size: 4,
            hidden_size: 5,
            num_layers: 2,
            bptt_len: 4,
            dropouts: Dropouts::NONE,
            ..GeneratorConfig::desk_small(vocab)
        };
        GeneratorModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn logits_shape() {
        let m = tiny(7);
        let ids = IdMatrix::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, true);
        let out = m.lm_forward(&mut g, &vars, &ids, &m.zero_state(2), &DropoutMasks::none()).unwrap();
        assert_eq!(g.shape(out.logits), &[2, 3, 7]);
        assert_eq!(out.steps.len(), 3);
    }

    #[test]
    fn batch_major_logits_match_time_major_rows() {
        let m = tiny(7);
        let ids = IdMatrix::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let out = m.lm_forward(&mut g, &vars, &ids, &m.zero_state(2), &DropoutMasks::none()).unwrap();
        let bm = g.value(out.logits);
        let tm = g.value(out.logits_time_major);
        for b in 0..2 {
            for t in 0..3 {
                assert_eq!(&bm[(b * 3 + t) * 7..(b * 3 + t + 1) * 7], &tm[(t * 2 + b) * 7..(t * 2 + b + 1) * 7]);
            }
        }
    }

    #[test]
    fn out_of_range_id_is_an_error() {
        let m = tiny(5);
        let ids = IdMatrix::new(1, 2, vec![0, 5]).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        assert!(m.lm_forward(&mut g, &vars, &ids, &m.zero_state(1), &DropoutMasks::none()).is_err());
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let m = tiny(5);
        let ids = IdMatrix::new(1, 3, vec![1, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let run = |masks: &DropoutMasks| {
            let mut g = Graph::new();
            let vars = m.bind(&mut g, false);
            let out = m.lm_forward(&mut g, &vars, &ids, &m.zero_state(1), masks).unwrap();
            g.value(out.logits).to_vec()
        };
        let train = m.masks(Mode::Train, 1, &mut rng);
        assert_eq!(run(&train), run(&DropoutMasks::none()));
    }

    #[test]
    fn single_token_is_log_one() {
        assert_eq!(tiny(5).sequence_log_prob(&[2]).unwrap(), 0.0);
    }

    #[test]
    fn greedy_sampling_matches_argmax() {
        let m = tiny(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tr = m.sample_sequence(&[2], 5, 1e-9, None, &mut rng).unwrap();
        let mut seq = vec![2];
        for &tok in &tr.tokens {
            let (logits, _) = m.next_logits(&seq, &m.zero_state(1)).unwrap();
            assert_eq!(tok, argmax(&logits));
            seq.push(tok);
        }
        assert_eq!(tr.tokens.len(), 5);
    }

    #[test]
    fn sampling_stops_at_eos() {
        let m = tiny(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let tr = m.sample_sequence(&[2], 30, 1.0, Some(3), &mut rng).unwrap();
            let pos = tr.tokens.iter().position(|&t| t == 3);
            if let Some(p) = pos {
                assert_eq!(p + 1, tr.tokens.len());
            } else {
                assert_eq!(tr.tokens.len(), 30);
            }
        }
    }

    #[test]
    fn trajectory_log_probs_match_recorded() {
        let m = tiny(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trajs = m
            .sample_batch(&[vec![2], vec![2], vec![2]], &[4, 2, 3], 1.0, Some(3), &mut rng)
            .unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, false);
        let lp = m.trajectory_log_probs(&mut g, &vars, &trajs).unwrap();
        for (b, tr) in trajs.iter().enumerate() {
            assert!((g.value(lp)[b] - tr.log_prob()).abs() < 1e-10);
            assert!((m.sequence_log_prob(&tr.full_sequence()).unwrap() - tr.log_prob()).abs() < 1e-10);
        }
    }

    #[test]
    fn transformer_xl_is_unsupported() {
        let cfg = GeneratorConfig::full_transformer_xl(10);
        assert!(matches!(
            GeneratorModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Unsupported(_))
        ));
    }
}
