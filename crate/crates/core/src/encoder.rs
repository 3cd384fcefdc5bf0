use rand::Rng;

use crate::autodiff::{dropout_mask, Graph, Tensor, Var};
use crate::generator::GeneratorConfig;
use crate::{Error, Result};

/// Encoder architecture family. Only the LSTM encoder is implemented; the
/// Transformer-XL row exists so its configuration can be loaded and reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    AwdLstm,
    TransformerXl,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::AwdLstm => "awd-lstm",
            Self::TransformerXl => "transformer-xl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "awd-lstm" => Some(Self::AwdLstm),
            "transformer-xl" => Some(Self::TransformerXl),
            _ => None,
        }
    }
}

/// AWD-LSTM style dropout probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropouts {
    /// Drops whole vocabulary rows of the input embedding.
    pub embedding: f64,
    /// Variational dropout on the embedded inputs.
    pub input: f64,
    /// Variational dropout between LSTM layers.
    pub hidden: f64,
    /// Variational dropout on the top layer before the decoder.
    pub output: f64,
    /// DropConnect on the hidden-to-hidden matrices.
    pub weight_drop: f64,
}

impl Dropouts {
    pub const NONE: Self = Self {
        embedding: 0.0,
        input: 0.0,
        hidden: 0.0,
        output: 0.0,
        weight_drop: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("dropout_embedding", self.embedding),
            ("dropout_input", self.input),
            ("dropout_hidden", self.hidden),
            ("dropout_output", self.output),
            ("weight_drop", self.weight_drop),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

impl Default for Dropouts {
    fn default() -> Self {
        Self {
            embedding: 0.1,
            input: 0.65,
            hidden: 0.3,
            output: 0.4,
            weight_drop: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One LSTM layer with gates ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `[input, 4 * output]`
    pub w_ih: Tensor,
    /// `[output, 4 * output]`
    pub w_hh: Tensor,
    /// `[4 * output]`
    pub bias: Tensor,
}

impl LstmLayer {
    pub fn output_size(&self) -> usize {
        self.w_hh.shape()[0]
    }
}

/// Token embedding followed by a stack of LSTM layers. The top layer emits
/// `embedding_size` features so the embedding can double as the output
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmEncoder {
    /// `[vocab, embedding]`
    pub embedding: Tensor,
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embedding];
        for l in &self.layers {
            v.extend([l.w_ih, l.w_hh, l.bias]);
        }
        v
    }
}

/// Detached per-layer `(h, c)`, each `[batch, layer output]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub batch: usize,
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl HiddenState {
    pub fn zeros(encoder: &LstmEncoder, batch: usize) -> Self {
        Self {
            batch,
            layers: encoder
                .layers
                .iter()
                .map(|l| (vec![0.0; batch * l.output_size()], vec![0.0; batch * l.output_size()]))
                .collect(),
        }
    }

    pub(crate) fn bind(&self, g: &mut Graph<'_>, encoder: &LstmEncoder) -> Result<Vec<(Var, Var)>> {
        if self.layers.len() != encoder.layers.len() {
            return Err(Error::InvalidInput(format!(
                "hidden state has {} layers, encoder has {}",
                self.layers.len(),
                encoder.layers.len()
            )));
        }
        self.layers
            .iter()
            .zip(&encoder.layers)
            .map(|((h, c), l)| {
                let shape = vec![self.batch, l.output_size()];
                Ok((g.constant(shape.clone(), h.clone())?, g.constant(shape, c.clone())?))
            })
            .collect()
    }

    pub(crate) fn detach(g: &Graph<'_>, vars: &[(Var, Var)], batch: usize) -> Self {
        Self {
            batch,
            layers: vars.iter().map(|&(h, c)| (g.value(h).to_vec(), g.value(c).to_vec())).collect(),
        }
    }
}

/// Dropout masks for one forward window. Variational masks are sampled once
/// per window and reused at every time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutMasks {
    /// Per-vocabulary-row scale for the input embedding.
    pub embedding: Option<Vec<f64>>,
    /// `[batch, embedding]`
    pub input: Option<Vec<f64>>,
    /// One `[batch, layer output]` mask per layer below the top.
    pub hidden: Vec<Option<Vec<f64>>>,
    /// `[batch, embedding]` on the top layer output.
    pub output: Option<Vec<f64>>,
    /// One mask per layer over its hidden-to-hidden matrix.
    pub weight: Vec<Option<Vec<f64>>>,
}

impl DropoutMasks {
    /// No dropout anywhere (evaluation).
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng + ?Sized>(
        encoder: &LstmEncoder,
        dropouts: &Dropouts,
        batch: usize,
        weight_drop: bool,
        rng: &mut R,
    ) -> Self {
        let mut mask = |n: usize, p: f64| (p > 0.0).then(|| dropout_mask(n, p, rng));
        let (vocab, emb) = (encoder.vocab_size(), encoder.embedding_size());
        let top = encoder.layers.len() - 1;
        let embedding = mask(vocab, dropouts.embedding);
        let input = mask(batch * emb, dropouts.input);
        let hidden = encoder.layers[..top]
            .iter()
            .map(|l| mask(batch * l.output_size(), dropouts.hidden))
            .collect();
        let output = mask(batch * emb, dropouts.output);
        let weight = encoder
            .layers
            .iter()
            .map(|l| {
                let p = if weight_drop { dropouts.weight_drop } else { 0.0 };
                mask(l.w_hh.numel(), p)
            })
            .collect();
        Self {
            embedding,
            input,
            hidden,
            output,
            weight,
        }
    }
}

/// Output of [`LstmEncoder::run`].
#[derive(Debug, Clone)]
pub struct EncoderRun {
    /// Top-layer outputs per time step, each `[batch, embedding]`, before
    /// output dropout.
    pub steps: Vec<Var>,
    /// All top-layer outputs, time-major `[time * batch, embedding]`, after
    /// output dropout.
    pub top: Var,
    pub state: Vec<(Var, Var)>,
}

fn tile(mask: &[f64], times: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask.len() * times);
    for _ in 0..times {
        out.extend_from_slice(mask);
    }
    out
}

impl LstmEncoder {
    pub fn new<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = Tensor::uniform(vec![config.vocab_size, config.embedding_size], 0.1, rng)?.with_requires_grad(true);
        let mut layers = Vec::with_capacity(config.num_layers);
        for (input, output) in config.layer_sizes() {
            let bound = 1.0 / (output as f64).sqrt();
            layers.push(LstmLayer {
                w_ih: Tensor::uniform(vec![input, 4 * output], bound, rng)?.with_requires_grad(true),
                w_hh: Tensor::uniform(vec![output, 4 * output], bound, rng)?.with_requires_grad(true),
                bias: Tensor::uniform(vec![4 * output], bound, rng)?.with_requires_grad(true),
            });
        }
        Ok(Self { embedding, layers })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn embedding_size(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn top_size(&self) -> usize {
        self.layers.last().map_or(0, LstmLayer::output_size)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embedding];
        for l in &self.layers {
            v.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embedding];
        for l in &mut self.layers {
            v.extend([&mut l.w_ih, &mut l.w_hh, &mut l.bias]);
        }
        v
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, trainable: bool) -> EncoderVars {
        let mut leaf = |t: &'a Tensor| if trainable { g.leaf(t) } else { g.frozen(t) };
        let embedding = leaf(&self.embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                w_ih: leaf(&l.w_ih),
                w_hh: leaf(&l.w_hh),
                bias: leaf(&l.bias),
            })
            .collect();
        EncoderVars { embedding, layers }
    }

    /// Embeds a `[batch, time]` id matrix into time-major rows
    /// `[time * batch, embedding]`, applying the embedding-row mask.
    pub fn embed_ids(
        &self,
        g: &mut Graph<'_>,
        vars: &EncoderVars,
        ids: &crate::corpus::IdMatrix,
        masks: &DropoutMasks,
    ) -> Result<Var> {
        let mut tm = Vec::with_capacity(ids.data.len());
        for t in 0..ids.cols {
            for b in 0..ids.rows {
                tm.push(ids.get(b, t));
            }
        }
        let x = g.embedding(vars.embedding, &tm)?;
        match &masks.embedding {
            Some(m) => {
                let d = self.embedding_size();
                let factor = tm.iter().flat_map(|&i| std::iter::repeat_n(m[i], d)).collect();
                Ok(g.mul_const(x, factor)?)
            }
            None => Ok(x),
        }
    }

    /// Embeds a soft token distribution `[batch, vocab]` as the probability
    /// weighted mix of embedding rows.
    pub fn embed_soft(&self, g: &mut Graph<'_>, vars: &EncoderVars, probs: Var, masks: &DropoutMasks) -> Result<Var> {
        let table = match &masks.embedding {
            Some(m) => {
                let d = self.embedding_size();
                let factor = m.iter().flat_map(|&s| std::iter::repeat_n(s, d)).collect();
                g.mul_const(vars.embedding, factor)?
            }
            None => vars.embedding,
        };
        Ok(g.matmul(probs, table)?)
    }

    /// Runs the LSTM stack over time-major inputs `x: [time * batch,
    /// embedding]` starting from `state`.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        g: &mut Graph<'_>,
        vars: &EncoderVars,
        x: Var,
        time: usize,
        batch: usize,
        state: &[(Var, Var)],
        masks: &DropoutMasks,
    ) -> Result<EncoderRun> {
        let mut inp = match &masks.input {
            Some(m) => g.mul_const(x, tile(m, time))?,
            None => x,
        };
        let top = self.layers.len() - 1;
        let mut new_state = Vec::with_capacity(self.layers.len());
        let mut steps = Vec::new();
        for (l, (layer, lv)) in self.layers.iter().zip(&vars.layers).enumerate() {
            let h_size = layer.output_size();
            let w_hh = match masks.weight.get(l).and_then(Option::as_ref) {
                Some(m) => g.mul_const(lv.w_hh, m.clone())?,
                None => lv.w_hh,
            };
            let proj = g.matmul(inp, lv.w_ih)?;
            let proj = g.add_bias(proj, lv.bias)?;
            let (mut h, mut c) = state[l];
            let mut outs = Vec::with_capacity(time);
            for t in 0..time {
                let zx = if time == 1 { proj } else { g.narrow(proj, 0, t * batch, batch)? };
                let zh = g.matmul(h, w_hh)?;
                let z = g.add(zx, zh)?;
                let i = g.narrow(z, 1, 0, h_size)?;
                let i = g.sigmoid(i)?;
                let f = g.narrow(z, 1, h_size, h_size)?;
                let f = g.sigmoid(f)?;
                let cand = g.narrow(z, 1, 2 * h_size, h_size)?;
                let cand = g.tanh(cand)?;
                let o = g.narrow(z, 1, 3 * h_size, h_size)?;
                let o = g.sigmoid(o)?;
                let keep = g.mul(f, c)?;
                let write = g.mul(i, cand)?;
                c = g.add(keep, write)?;
                let tc = g.tanh(c)?;
                h = g.mul(o, tc)?;
                outs.push(h);
            }
            new_state.push((h, c));
            let all = if time == 1 { outs[0] } else { g.concat(&outs, 0)? };
            let mask = if l < top {
                masks.hidden.get(l).and_then(Option::as_ref)
            } else {
                masks.output.as_ref()
            };
            if l == top {
                steps = outs;
            }
            inp = match mask {
                Some(m) => g.mul_const(all, tile(m, time))?,
                None => all,
            };
        }
        Ok(EncoderRun {
            steps,
            top: inp,
            state: new_state,
        })
    }
}
