//! The discriminator: a copy of the generator's encoder followed by concat
//! pooling and a small batch-normalized head. Scores lie in `(0, 1)`, higher
//! meaning "looks real".

use rand::Rng;

use crate::autodiff::{BatchStats, Graph, Parameterized, Tensor, Var};
use crate::corpus::IdMatrix;
use crate::encoder::EncoderVars;
use crate::generator::{GeneratorConfig, GeneratorModel};
use crate::{DropoutMasks, Error, LstmEncoder, Mode, Result};

/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    /// Shape the copied encoder must have.
    pub encoder: GeneratorConfig,
    /// Keep the encoder fixed during adversarial training.
    pub freeze_encoder: bool,
}

impl DiscriminatorConfig {
    pub fn for_generator(gen: &GeneratorConfig) -> Self {
        Self {
            encoder: gen.clone(),
            freeze_encoder: false,
        }
    }

    /// Widths `[3H, H, H/2, H/4]` of the head, `H` being the encoder output.
    pub fn head_widths(&self) -> [usize; 4] {
        let h = self.encoder.embedding_size;
        [3 * h, h, h / 2, h / 4]
    }
}

/// Dense → BatchNorm → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBnBlock {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl DenseBnBlock {
    fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(Self {
            weight: Tensor::uniform(vec![input, output], bound, rng)?.with_requires_grad(true),
            bias: Tensor::zeros(vec![output])?.with_requires_grad(true),
            gamma: Tensor::full(vec![output], 1.0)?.with_requires_grad(true),
            beta: Tensor::zeros(vec![output])?.with_requires_grad(true),
            running_mean: vec![0.0; output],
            running_var: vec![1.0; output],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub config: DiscriminatorConfig,
    pub encoder: LstmEncoder,
    pub blocks: Vec<DenseBnBlock>,
    /// `[H/4, 1]`
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

impl Parameterized for DiscriminatorModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.params();
        for b in &self.blocks {
            v.extend([&b.weight, &b.bias, &b.gamma, &b.beta]);
        }
        v.extend([&self.out_weight, &self.out_bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.params_mut();
        for b in &mut self.blocks {
            v.extend([&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta]);
        }
        v.extend([&mut self.out_weight, &mut self.out_bias]);
        v
    }
}

#[derive(Debug, Clone)]
pub struct BlockVars {
    pub weight: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorVars {
    pub encoder: EncoderVars,
    pub blocks: Vec<BlockVars>,
    pub out_weight: Var,
    pub out_bias: Var,
}

impl DiscriminatorVars {
    /// Handles in [`Parameterized::params`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        for b in &self.blocks {
            v.extend([b.weight, b.bias, b.gamma, b.beta]);
        }
        v.extend([self.out_weight, self.out_bias]);
        v
    }
}

/// What the discriminator reads.
#[derive(Debug, Clone, Copy)]
pub enum DiscInput<'i> {
    /// `[batch, time]` token ids with per-row lengths; positions past a
    /// row's length are ignored.
    Ids(&'i IdMatrix, &'i [usize]),
    /// One `[batch, vocab]` token distribution per time step.
    Soft(&'i [Var]),
}

/// Result of [`DiscriminatorModel::forward`].
#[derive(Debug, Clone)]
pub struct DiscOutput {
    /// `[batch, 1]` pre-sigmoid scores.
    pub logits: Var,
    /// `[batch, 3H]` pooled features.
    pub pooled: Var,
    /// Batch statistics of each block (train mode only).
    pub batch_stats: Vec<BatchStats>,
}

impl DiscriminatorModel {
    /// Copies the generator's encoder and attaches a freshly initialized head.
    pub fn init_from_generator<R: Rng + ?Sized>(
        gen: &GeneratorModel,
        config: DiscriminatorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (a, b) = (&gen.config, &config.encoder);
        let same = a.kind == b.kind
            && a.vocab_size == b.vocab_size
            && a.embedding_size == b.embedding_size
            && a.hidden_size == b.hidden_size
            && a.num_layers == b.num_layers;
        if !same {
            return Err(Error::InvalidConfig(format!(
                "discriminator expects encoder {}x{}x{} over {} tokens, generator has {}x{}x{} over {}",
                b.embedding_size,
                b.hidden_size,
                b.num_layers,
                b.vocab_size,
                a.embedding_size,
                a.hidden_size,
                a.num_layers,
                a.vocab_size
            )));
        }
        let encoder = gen.encoder.clone();
        let top = encoder.top_size();
        let widths = config.head_widths();
        if top < 4 || widths[0] != 3 * top {
            return Err(Error::InvalidConfig(format!(
                "discriminator head needs an encoder output of at least 4, got {top}"
            )));
        }
        let blocks = widths
            .windows(2)
            .map(|w| DenseBnBlock::new(w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        let last = widths[3];
        let bound = 1.0 / (last as f64).sqrt();
        Ok(Self {
            config,
            encoder,
            blocks,
            out_weight: Tensor::uniform(vec![last, 1], bound, rng)?.with_requires_grad(true),
            out_bias: Tensor::zeros(vec![1])?.with_requires_grad(true),
        })
    }

    /// Binds parameters. The encoder is frozen when `trainable` is false or
    /// the config freezes it.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> DiscriminatorVars {
        let encoder = self.encoder.bind(g, trainable && !self.config.freeze_encoder);
        let mut leaf = |t: &'a Tensor| if trainable { g.leaf(t) } else { g.frozen(t) };
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                weight: leaf(&b.weight),
                bias: leaf(&b.bias),
                gamma: leaf(&b.gamma),
                beta: leaf(&b.beta),
            })
            .collect();
        DiscriminatorVars {
            encoder,
            blocks,
            out_weight: leaf(&self.out_weight),
            out_bias: leaf(&self.out_bias),
        }
    }

    /// Top-layer encoder outputs per time step, with dropout disabled.
    pub fn encode(&self, g: &mut Graph<'_>, vars: &DiscriminatorVars, input: DiscInput<'_>) -> Result<Vec<Var>> {
        let none = DropoutMasks::none();
        let (x, time, batch) = match input {
            DiscInput::Ids(ids, lengths) => {
                if lengths.len() != ids.rows {
                    return Err(Error::InvalidInput(format!(
                        "{} lengths for a batch of {}",
                        lengths.len(),
                        ids.rows
                    )));
                }
                if let Some(&bad) = ids.data.iter().find(|&&i| i >= self.encoder.vocab_size()) {
                    return Err(Error::InvalidInput(format!(
                        "token id {bad} out of range for vocabulary of {}",
                        self.encoder.vocab_size()
                    )));
                }
                (self.encoder.embed_ids(g, &vars.encoder, ids, &none)?, ids.cols, ids.rows)
            }
            DiscInput::Soft(steps) => {
                let first = *steps.first().ok_or_else(|| Error::InvalidInput("empty time axis".into()))?;
                let batch = g.shape(first)[0];
                let embedded = steps
                    .iter()
                    .map(|&p| self.encoder.embed_soft(g, &vars.encoder, p, &none))
                    .collect::<Result<Vec<_>>>()?;
                let x = if embedded.len() == 1 {
                    embedded[0]
                } else {
                    g.concat(&embedded, 0)?
                };
                (x, steps.len(), batch)
            }
        };
        let zero = crate::HiddenState::zeros(&self.encoder, batch);
        let init = zero.bind(g, &self.encoder)?;
        Ok(self.encoder.run(g, &vars.encoder, x, time, batch, &init, &none)?.steps)
    }

    /// `[last ∥ max ∥ mean]` over each row's first `lengths[b]` steps.
    pub fn concat_pool(g: &mut Graph<'_>, steps: &[Var], lengths: Option<&[usize]>) -> Result<Var> {
        let last = g.last_over_time(steps, lengths)?;
        let max = g.max_over_time(steps, lengths)?;
        let mean = g.mean_over_time(steps, lengths)?;
        Ok(g.concat(&[last, max, mean], 1)?)
    }

    /// Full forward pass. In [`Mode::Train`] batch norm uses batch statistics
    /// (and needs a batch of at least 2); in [`Mode::Eval`] it uses the
    /// running statistics.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        vars: &DiscriminatorVars,
        input: DiscInput<'_>,
        mode: Mode,
    ) -> Result<DiscOutput> {
        let steps = self.encode(g, vars, input)?;
        let lengths = match input {
            DiscInput::Ids(_, l) => Some(l),
            DiscInput::Soft(_) => None,
        };
        let pooled = Self::concat_pool(g, &steps, lengths)?;
        let width = g.shape(pooled)[1];
        if width != 3 * self.encoder.top_size() || width != self.config.head_widths()[0] {
            return Err(Error::InvalidInput(format!(
                "pooled width {width} is not 3 x {}",
                self.encoder.top_size()
            )));
        }
        let mut h = pooled;
        let mut batch_stats = Vec::new();
        for (block, bv) in self.blocks.iter().zip(&vars.blocks) {
            let z = g.matmul(h, bv.weight)?;
            let z = g.add_bias(z, bv.bias)?;
            let z = match mode {
                Mode::Train => {
                    let (z, st) = g.batch_norm_train(z, bv.gamma, bv.beta, BN_EPS)?;
                    batch_stats.push(st);
                    z
                }
                Mode::Eval => {
                    g.batch_norm_eval(z, bv.gamma, bv.beta, &block.running_mean, &block.running_var, BN_EPS)?
                }
            };
            h = g.relu(z)?;
        }
        let logits = g.matmul(h, vars.out_weight)?;
        let logits = g.add_bias(logits, vars.out_bias)?;
        Ok(DiscOutput {
            logits,
            pooled,
            batch_stats,
        })
    }

    /// Folds train-mode batch statistics into the running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if stats.len() != self.blocks.len() {
            return Err(Error::InvalidInput(format!(
                "{} batch statistics for {} blocks",
                stats.len(),
                self.blocks.len()
            )));
        }
        for (b, st) in self.blocks.iter_mut().zip(stats) {
            for (r, &m) in b.running_mean.iter_mut().zip(&st.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            for (r, &v) in b.running_var.iter_mut().zip(&st.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
        Ok(())
    }

    /// Eval-mode scores of token sequences of any lengths.
    pub fn scores(&self, seqs: &[Vec<usize>]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            if chunk.iter().any(Vec::is_empty) {
                return Err(Error::InvalidInput("cannot score an empty sequence".into()));
            }
            let fill = chunk[0][0];
            let (ids, lengths) = IdMatrix::from_padded(chunk, fill)?;
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let o = self.forward(&mut g, &vars, DiscInput::Ids(&ids, &lengths), Mode::Eval)?;
            let s = g.sigmoid(o.logits)?;
            out.extend_from_slice(g.value(s));
        }
        Ok(out)
    }

    pub fn disc_score(&self, seq: &[usize]) -> Result<f64> {
        Ok(self.scores(&[seq.to_vec()])?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Dropouts;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (GeneratorModel, DiscriminatorModel) {
        let cfg = GeneratorConfig {
            embedding_size: 8,
            hidden_size: 6,
            num_layers: 2,
            dropouts: Dropouts::NONE,
            ..GeneratorConfig::desk_small(9)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gen = GeneratorModel::new(cfg.clone(), &mut rng).unwrap();
        let disc = DiscriminatorModel::init_from_generator(&gen, DiscriminatorConfig::for_generator(&cfg), &mut rng).unwrap();
        (gen, disc)
    }

    #[test]
    fn head_widths_taper() {
        let (_, d) = pair();
        assert_eq!(d.config.head_widths(), [24, 8, 4, 2]);
        assert_eq!(d.blocks.len(), 3);
        assert_eq!(d.blocks[0].weight.shape(), &[24, 8]);
    }

    #[test]
    fn hand_computed_concat_pool() {
        let mut g = Graph::new();
        let a = g.constant(vec![1, 2], vec![1.0, 4.0]).unwrap();
        let b = g.constant(vec![1, 2], vec![3.0, 2.0]).unwrap();
        let p = DiscriminatorModel::concat_pool(&mut g, &[a, b], None).unwrap();
        assert_eq!(g.value(p), &[3.0, 2.0, 3.0, 4.0, 2.0, 3.0]);
        let one = DiscriminatorModel::concat_pool(&mut g, &[a], None).unwrap();
        assert_eq!(g.value(one), &[1.0, 4.0, 1.0, 4.0, 1.0, 4.0]);
        assert!(DiscriminatorModel::concat_pool(&mut g, &[], None).is_err());
    }

    #[test]
    fn encoder_copy_matches_generator() {
        let (gen, disc) = pair();
        let ids = IdMatrix::new(2, 3, vec![2, 4, 5, 2, 6, 7]).unwrap();
        let mut g = Graph::new();
        let gv = gen.bind(&mut g, false);
        let out = gen.lm_forward(&mut g, &gv, &ids, &gen.zero_state(2), &DropoutMasks::none()).unwrap();
        let dv = disc.bind(&mut g, false);
        let steps = disc.encode(&mut g, &dv, DiscInput::Ids(&ids, &[3, 3])).unwrap();
        for (a, b) in out.steps.iter().zip(&steps) {
            assert_eq!(g.value(*a), g.value(*b));
        }
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let (gen, _) = pair();
        let mut cfg = DiscriminatorConfig::for_generator(&gen.config);
        cfg.encoder.hidden_size += 1;
        assert!(DiscriminatorModel::init_from_generator(&gen, cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn train_mode_rejects_single_example() {
        let (_, d) = pair();
        let ids = IdMatrix::new(1, 2, vec![2, 4]).unwrap();
        let mut g = Graph::new();
        let v = d.bind(&mut g, true);
        assert!(d.forward(&mut g, &v, DiscInput::Ids(&ids, &[2]), Mode::Train).is_err());
        assert!(d.disc_score(&[2, 4]).is_ok());
    }

    #[test]
    fn padded_batch_scores_equal_individual_scores() {
        let (_, d) = pair();
        let seqs = vec![vec![2, 4, 5, 6, 3], vec![2, 7], vec![2, 8, 8]];
        let batch = d.scores(&seqs).unwrap();
        for (s, b) in seqs.iter().zip(&batch) {
            let one = d.disc_score(s).unwrap();
            assert!((one - b).abs() < 1e-8);
            assert!(*b > 0.0 && *b < 1.0);
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let (_, mut d) = pair();
        let stats: Vec<BatchStats> = d
            .blocks
            .iter()
            .map(|b| BatchStats {
                mean: vec![1.0; b.running_mean.len()],
                var: vec![3.0; b.running_var.len()],
            })
            .collect();
        d.update_running_stats(&stats).unwrap();
        assert!((d.blocks[0].running_mean[0] - 0.1).abs() < 1e-15);
        assert!((d.blocks[0].running_var[0] - 1.2).abs() < 1e-15);
    }
}
