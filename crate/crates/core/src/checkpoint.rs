//! Versioned checkpoints.
//!
//! A checkpoint is a short text header followed by a binary payload:
//!
//! ```text
//! TEXTGAN-CHECKPOINT
//! format_version 1
//! phase finetuned
//! section config 0 812
//! section vocab 812 1034
//! ...
//! end
//! <payload>
//! ```
//!
//! Each `section <name> <offset> <length>` line locates a byte range of the
//! payload. `config` and `vocab` hold the text forms of the run configuration
//! and the vocabulary; the other sections are little-endian binary. Tensors
//! are written as `u64` rank, `u64` dimensions and `f64` values.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Parameterized, Tensor};
use crate::config::RunConfig;
use crate::corpus::Vocabulary;
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use crate::generator::GeneratorModel;
use crate::training::{Baseline, GanState};
use crate::{Error, Result};

pub const MAGIC: &str = "TEXTGAN-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrained,
    Finetuned,
    Gan,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrained => "pretrained",
            Self::Finetuned => "finetuned",
            Self::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrained" => Some(Self::Pretrained),
            "finetuned" => Some(Self::Finetuned),
            "gan" => Some(Self::Gan),
            _ => None,
        }
    }
}

/// Serializable position of a [`ChaCha8Rng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Adversarial-phase state beyond the two optimizers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanProgress {
    pub baseline: Baseline,
    pub tau: f64,
    pub epoch: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Resolved configuration; `generator.vocab_size` matches `vocab`.
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub generator: GeneratorModel,
    pub gen_adam: Option<AdamState>,
    pub discriminator: Option<DiscriminatorModel>,
    pub disc_adam: Option<AdamState>,
    pub gan: Option<GanProgress>,
    pub rng: RngState,
    /// Number of metric records written before this checkpoint.
    pub metrics_cursor: u64,
}

impl Checkpoint {
    /// Rebuilds the full adversarial state when present.
    pub fn gan_state(&self) -> Option<GanState> {
        let (g, d, p) = (self.gen_adam.clone()?, self.disc_adam.clone()?, self.gan?);
        Some(GanState {
            gen_adam: g,
            disc_adam: d,
            baseline: p.baseline,
            tau: p.tau,
            epoch: p.epoch,
            step: p.step,
        })
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.shape().len() as u64);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
    fn adam(&mut self, a: &AdamState) {
        self.u64(a.step_count);
        for x in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
            self.f64(x);
        }
        self.u64(a.first_moment.len() as u64);
        for (m, v) in a.first_moment.iter().zip(&a.second_moment) {
            self.f64s(m);
            self.f64s(v);
        }
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
    section: &'static str,
}

impl<'b> Reader<'b> {
    fn new(buf: &'b [u8], section: &'static str) -> Self {
        Self { buf, pos: 0, section }
    }

    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("section {} is truncated", self.section)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} too large in {}", self.section)))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(format!("section {} is truncated", self.section)));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor_into(&mut self, t: &mut Tensor) -> Result<()> {
        let rank = self.usize()?;
        let shape = (0..rank).map(|_| self.usize()).collect::<Result<Vec<_>>>()?;
        if shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "section {}: tensor shape {shape:?}, model expects {:?}",
                self.section,
                t.shape()
            )));
        }
        for x in t.data_mut() {
            *x = self.f64()?;
        }
        Ok(())
    }
    fn adam(&mut self) -> Result<AdamState> {
        let step_count = self.u64()?;
        let (learning_rate, beta1, beta2, epsilon) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let n = self.usize()?;
        let mut first_moment = Vec::new();
        let mut second_moment = Vec::new();
        for _ in 0..n {
            first_moment.push(self.f64s()?);
            second_moment.push(self.f64s()?);
        }
        Ok(AdamState {
            first_moment,
            second_moment,
            step_count,
            beta1,
            beta2,
            epsilon,
            learning_rate,
        })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "section {} has {} trailing bytes",
                self.section,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn params_section<M: Parameterized>(m: &M) -> Writer {
    let mut w = Writer::default();
    let ps = m.params();
    w.u64(ps.len() as u64);
    for p in ps {
        w.tensor(p);
    }
    w
}

fn read_params<M: Parameterized>(r: &mut Reader<'_>, m: &mut M) -> Result<()> {
    let n = r.usize()?;
    let mut ps = m.params_mut();
    if n != ps.len() {
        return Err(Error::Checkpoint(format!(
            "section {} holds {n} tensors, model has {}",
            r.section,
            ps.len()
        )));
    }
    for p in ps.iter_mut() {
        r.tensor_into(p)?;
    }
    Ok(())
}

fn check_adam<M: Parameterized>(a: &AdamState, m: &M, what: &str) -> Result<()> {
    let ps = m.params();
    let ok = a.first_moment.len() == ps.len()
        && ps
            .iter()
            .zip(a.first_moment.iter().zip(&a.second_moment))
            .all(|(p, (f, s))| f.len() == p.numel() && s.len() == p.numel());
    if ok {
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("{what} optimizer state does not match the model")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.config.generator.vocab_size != self.vocab.len() {
            return Err(Error::Checkpoint(format!(
                "config vocab_size {} differs from vocabulary size {}",
                self.config.generator.vocab_size,
                self.vocab.len()
            )));
        }
        let mut sections: Vec<(&str, Vec<u8>)> = vec![
            ("config", self.config.to_text().into_bytes()),
            ("vocab", self.vocab.to_text()?.into_bytes()),
            ("generator", params_section(&self.generator).0),
        ];
        if let Some(a) = &self.gen_adam {
            let mut w = Writer::default();
            w.adam(a);
            sections.push(("gen_adam", w.0));
        }
        if let Some(d) = &self.discriminator {
            let mut w = params_section(d);
            w.u8(d.config.freeze_encoder as u8);
            w.u64(d.blocks.len() as u64);
            for b in &d.blocks {
                w.f64s(&b.running_mean);
                w.f64s(&b.running_var);
            }
            sections.push(("discriminator", w.0));
        }
        if let Some(a) = &self.disc_adam {
            let mut w = Writer::default();
            w.adam(a);
            sections.push(("disc_adam", w.0));
        }
        if let Some(p) = &self.gan {
            let mut w = Writer::default();
            w.f64(p.baseline.value);
            w.f64(p.baseline.momentum);
            w.f64(p.tau);
            w.u64(p.epoch as u64);
            w.u64(p.step as u64);
            sections.push(("gan_state", w.0));
        }
        let mut w = Writer::default();
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.u128(self.rng.word_pos);
        sections.push(("rng", w.0));
        let mut w = Writer::default();
        w.u64(self.metrics_cursor);
        sections.push(("metrics", w.0));

        let mut header = format!("{MAGIC}\nformat_version {FORMAT_VERSION}\nphase {}\n", self.phase.name());
        let mut offset = 0;
        for (name, bytes) in &sections {
            writeln!(header, "section {name} {offset} {}", bytes.len()).expect("writing to a String cannot fail");
            offset += bytes.len();
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        for (_, bytes) in sections {
            out.extend(bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad("missing header terminator".into()))?;
        let header =
            std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not valid UTF-8".into()))?;
        let payload = &bytes[end + 5..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version: u32 = lines
            .next()
            .and_then(|l| l.strip_prefix("format_version "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported format_version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let phase = lines
            .next()
            .and_then(|l| l.strip_prefix("phase "))
            .and_then(Phase::parse)
            .ok_or_else(|| bad("missing or unknown phase".into()))?;
        let mut sections: Vec<(String, &[u8])> = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(' ').collect();
            let (off, len) = match f.as_slice() {
                ["section", _, o, l] => (o.parse::<usize>().ok(), l.parse::<usize>().ok()),
                _ => (None, None),
            };
            let (Some(off), Some(len)) = (off, len) else {
                return Err(bad(format!("malformed header line {line:?}")));
            };
            let slice = payload
                .get(off..off.saturating_add(len))
                .ok_or_else(|| bad(format!("section {} lies outside the file", f[1])))?;
            sections.push((f[1].to_string(), slice));
        }
        let get = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, s)| *s);
        let need = |name: &str| get(name).ok_or_else(|| bad(format!("missing section {name}")));
        let text = |name: &str| -> Result<&str> {
            std::str::from_utf8(need(name)?).map_err(|_| bad(format!("section {name} is not UTF-8")))
        };

        let config = RunConfig::parse(text("config")?)?;
        let vocab = Vocabulary::from_text(text("vocab")?)?;
        if config.generator.vocab_size != vocab.len() {
            return Err(bad("config vocab_size differs from the stored vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = GeneratorModel::new(config.generator.clone(), &mut rng)?;
        let mut r = Reader::new(need("generator")?, "generator");
        read_params(&mut r, &mut generator)?;
        r.finish()?;

        let read_adam = |name: &'static str| -> Result<Option<AdamState>> {
            get(name)
                .map(|s| {
                    let mut r = Reader::new(s, name);
                    let a = r.adam()?;
                    r.finish()?;
                    Ok(a)
                })
                .transpose()
        };
        let gen_adam = read_adam("gen_adam")?;
        if let Some(a) = &gen_adam {
            check_adam(a, &generator, "generator")?;
        }
        let discriminator = match get("discriminator") {
            Some(s) => {
                let mut r = Reader::new(s, "discriminator");
                let mut dcfg = DiscriminatorConfig::for_generator(&config.generator);
                dcfg.freeze_encoder = config.freeze_disc_encoder;
                let mut d = DiscriminatorModel::init_from_generator(&generator, dcfg, &mut rng)?;
                read_params(&mut r, &mut d)?;
                d.config.freeze_encoder = r.u8()? != 0;
                let n = r.usize()?;
                if n != d.blocks.len() {
                    return Err(bad(format!("discriminator has {n} stored blocks, expected {}", d.blocks.len())));
                }
                for b in &mut d.blocks {
                    let (m, v) = (r.f64s()?, r.f64s()?);
                    if m.len() != b.running_mean.len() || v.len() != b.running_var.len() {
                        return Err(bad("discriminator running statistics have the wrong width".into()));
                    }
                    b.running_mean = m;
                    b.running_var = v;
                }
                r.finish()?;
                Some(d)
            }
            None => None,
        };
        let disc_adam = read_adam("disc_adam")?;
        if let (Some(a), Some(d)) = (&disc_adam, &discriminator) {
            check_adam(a, d, "discriminator")?;
        }
        let gan = match get("gan_state") {
            Some(s) => {
                let mut r = Reader::new(s, "gan_state");
                let p = GanProgress {
                    baseline: Baseline {
                        value: r.f64()?,
                        momentum: r.f64()?,
                    },
                    tau: r.f64()?,
                    epoch: r.usize()?,
                    step: r.usize()?,
                };
                r.finish()?;
                Some(p)
            }
            None => None,
        };
        let mut r = Reader::new(need("rng")?, "rng");
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let rng_state = RngState {
            seed,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        r.finish()?;
        let mut r = Reader::new(need("metrics")?, "metrics");
        let metrics_cursor = r.u64()?;
        r.finish()?;
        Ok(Self {
            phase,
            config,
            vocab,
            generator,
            gen_adam,
            discriminator,
            disc_adam,
            gan,
            rng: rng_state,
            metrics_cursor,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::training::TrainConfig;
    use crate::Dropouts;
    use rand::RngCore;

    fn sample() -> Checkpoint {
        let vocab = build_vocab(["a", "b", "c"], 1, 100).unwrap();
        let mut config = RunConfig::default();
        config.generator.vocab_size = vocab.len();
        config.generator.embedding_size = 8;
        config.generator.hidden_size = 6;
        config.generator.dropouts = Dropouts::NONE;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let generator = GeneratorModel::new(config.generator.clone(), &mut rng).unwrap();
        let disc =
            DiscriminatorModel::init_from_generator(&generator, DiscriminatorConfig::for_generator(&config.generator), &mut rng)
                .unwrap();
        let st = GanState::new(&generator, &disc, &TrainConfig::default());
        rng.next_u64();
        Checkpoint {
            phase: Phase::Gan,
            config,
            vocab,
            generator,
            gen_adam: Some(st.gen_adam),
            discriminator: Some(disc),
            disc_adam: Some(st.disc_adam),
            gan: Some(GanProgress {
                baseline: Baseline { value: 0.25, momentum: 0.9 },
                tau: 0.81,
                epoch: 2,
                step: 17,
            }),
            rng: RngState::capture(&rng),
            metrics_cursor: 42,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
    }

    #[test]
    fn rng_position_survives() {
        let ck = sample();
        let mut original = ck.rng.restore();
        let mut back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap().rng.restore();
        assert_eq!(original.next_u64(), back.next_u64());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("format_version 1", "format_version 9", 1);
        let mut tampered = bytes.clone();
        let at = bytes.windows(16).position(|w| w == b"format_version 1").unwrap();
        tampered[at + 15] = b'9';
        let err = Checkpoint::from_bytes(&tampered).unwrap_err().to_string();
        assert!(err.contains("format_version 9"), "{err}");
        assert!(text.contains("format_version 9"));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello").is_err());
    }
}
