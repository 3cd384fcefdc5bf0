//! Run configuration files.
//!
//! The format is one `key = value` pair per line; `#` starts a comment and
//! blank lines are ignored. `preset = <name>` applies a named preset at that
//! point, so later lines override it. Unknown keys and malformed values are
//! rejected with the offending line number.
//!
//! An empty file yields [`RunConfig::default`]: the `desk-small` model shape
//! and the `gutenberg-lm` schedule (20 epochs at learning rate 3e-3), batch
//! size 50, seed 0.
//!
//! ```
//! use textgan::config::RunConfig;
//! let cfg = RunConfig::parse("preset = poems-gan\nseed = 7\n").unwrap();
//! assert_eq!(cfg.train.epochs, 10);
//! assert_eq!(cfg.train.learning_rate, 3e-4);
//! assert_eq!(cfg.train.seed, 7);
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{DEFAULT_MAX_VOCAB, DEFAULT_MIN_FREQ};
use crate::generator::GeneratorConfig;
use crate::training::{training_preset, Regime, TrainConfig, TRAINING_PRESETS};
use crate::{EncoderKind, Error, Result};

/// Everything a run needs besides its data.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `vocab_size` is 0 until a vocabulary has been built.
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub min_freq: usize,
    pub max_vocab: usize,
    pub freeze_disc_encoder: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::desk_small(0),
            train: TrainConfig::default(),
            min_freq: DEFAULT_MIN_FREQ,
            max_vocab: DEFAULT_MAX_VOCAB,
            freeze_disc_encoder: false,
        }
    }
}

/// Names accepted by `preset = ...`.
pub fn preset_names() -> Vec<&'static str> {
    let mut v = vec!["full-awd-lstm", "full-transformer-xl", "desk-small"];
    v.extend(TRAINING_PRESETS.iter().map(|p| p.name));
    v
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as a number"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn parse_opt<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
    if v == "none" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn opt_text<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl RunConfig {
    pub fn apply_preset(&mut self, name: &str) -> std::result::Result<(), String> {
        let vocab = self.generator.vocab_size;
        let dropouts = self.generator.dropouts;
        match name {
            "full-awd-lstm" => self.generator = GeneratorConfig::full_awd_lstm(vocab),
            "full-transformer-xl" => self.generator = GeneratorConfig::full_transformer_xl(vocab),
            "desk-small" => self.generator = GeneratorConfig::desk_small(vocab),
            _ => {
                let p = training_preset(name).ok_or_else(|| {
                    format!("unknown preset {name:?} (known: {})", preset_names().join(", "))
                })?;
                self.train.regime = p.regime;
                self.train.epochs = p.epochs;
                self.train.learning_rate = p.learning_rate;
                return Ok(());
            }
        }
        self.generator.dropouts = dropouts;
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let g = &mut self.generator;
        let t = &mut self.train;
        match key {
            "preset" => self.apply_preset(v)?,
            "encoder" => g.kind = EncoderKind::parse(v).ok_or_else(|| format!("unknown encoder {v:?}"))?,
            "vocab_size" => g.vocab_size = parse_num(v)?,
            "embedding_size" => g.embedding_size = parse_num(v)?,
            "hidden_size" => g.hidden_size = parse_num(v)?,
            "num_layers" => g.num_layers = parse_num(v)?,
            "bptt_len" => g.bptt_len = parse_num(v)?,
            "dropout_embedding" => g.dropouts.embedding = parse_num(v)?,
            "dropout_input" => g.dropouts.input = parse_num(v)?,
            "dropout_hidden" => g.dropouts.hidden = parse_num(v)?,
            "dropout_output" => g.dropouts.output = parse_num(v)?,
            "weight_drop" => g.dropouts.weight_drop = parse_num(v)?,
            "regime" => t.regime = Regime::parse(v).ok_or_else(|| format!("unknown regime {v:?}"))?,
            "epochs" => t.epochs = parse_num(v)?,
            "learning_rate" => t.learning_rate = parse_num(v)?,
            "disc_learning_rate" => t.disc_learning_rate = parse_opt(v)?,
            "batch_size" => t.batch_size = parse_num(v)?,
            "disc_steps_per_gen_step" => t.disc_steps_per_gen_step = parse_num(v)?,
            "rollout_count" => t.rollout_count = parse_num(v)?,
            "gumbel_temperature" => t.gumbel_temperature = parse_num(v)?,
            "gumbel_anneal" => t.gumbel_anneal = parse_num(v)?,
            "gumbel_floor" => t.gumbel_floor = parse_num(v)?,
            "baseline_momentum" => t.baseline_momentum = parse_num(v)?,
            "seed" => t.seed = parse_num(v)?,
            "adam_beta1" => t.adam_beta1 = parse_num(v)?,
            "adam_beta2" => t.adam_beta2 = parse_num(v)?,
            "mle_clip" => t.mle_clip = parse_num(v)?,
            "gan_clip" => t.gan_clip = parse_num(v)?,
            "sample_temperature" => t.sample_temperature = parse_num(v)?,
            "gan_iters_per_epoch" => t.gan_iters_per_epoch = parse_opt(v)?,
            "mle_interleave_every" => t.mle_interleave_every = parse_num(v)?,
            "min_freq" => self.min_freq = parse_num(v)?,
            "max_vocab" => self.max_vocab = parse_num(v)?,
            "freeze_disc_encoder" => self.freeze_disc_encoder = parse_bool(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Applies config text on top of `self`.
    pub fn merge(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected key = value, got {content:?}"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|reason| Error::Config { line, reason })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Checks value ranges (vocabulary size excepted).
    pub fn validate(&self) -> Result<()> {
        let mut g = self.generator.clone();
        g.vocab_size = g.vocab_size.max(1);
        g.validate()?;
        self.train.validate()?;
        if self.min_freq == 0 {
            return Err(Error::InvalidConfig("min_freq must be at least 1".into()));
        }
        Ok(())
    }

    /// Fully resolved configuration in the same format; parsing it gives back
    /// an identical config.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("writing to a String cannot fail");
        kv("encoder", g.kind.name().into());
        kv("vocab_size", g.vocab_size.to_string());
        kv("embedding_size", g.embedding_size.to_string());
        kv("hidden_size", g.hidden_size.to_string());
        kv("num_layers", g.num_layers.to_string());
        kv("bptt_len", g.bptt_len.to_string());
        kv("dropout_embedding", g.dropouts.embedding.to_string());
        kv("dropout_input", g.dropouts.input.to_string());
        kv("dropout_hidden", g.dropouts.hidden.to_string());
        kv("dropout_output", g.dropouts.output.to_string());
        kv("weight_drop", g.dropouts.weight_drop.to_string());
        kv("regime", t.regime.name().into());
        kv("epochs", t.epochs.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("disc_learning_rate", opt_text(t.disc_learning_rate));
        kv("batch_size", t.batch_size.to_string());
        kv("disc_steps_per_gen_step", t.disc_steps_per_gen_step.to_string());
        kv("rollout_count", t.rollout_count.to_string());
        kv("gumbel_temperature", t.gumbel_temperature.to_string());
        kv("gumbel_anneal", t.gumbel_anneal.to_string());
        kv("gumbel_floor", t.gumbel_floor.to_string());
        kv("baseline_momentum", t.baseline_momentum.to_string());
        kv("seed", t.seed.to_string());
        kv("adam_beta1", t.adam_beta1.to_string());
        kv("adam_beta2", t.adam_beta2.to_string());
        kv("mle_clip", t.mle_clip.to_string());
        kv("gan_clip", t.gan_clip.to_string());
        kv("sample_temperature", t.sample_temperature.to_string());
        kv("gan_iters_per_epoch", opt_text(t.gan_iters_per_epoch));
        kv("mle_interleave_every", t.mle_interleave_every.to_string());
        kv("min_freq", self.min_freq.to_string());
        kv("max_vocab", self.max_vocab.to_string());
        kv("freeze_disc_encoder", self.freeze_disc_encoder.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.train.epochs, cfg.train.learning_rate, cfg.train.batch_size), (20, 3e-3, 50));
        assert_eq!(cfg.generator.embedding_size, 64);
    }

    #[test]
    fn model_presets() {
        let c = RunConfig::parse("preset = full-awd-lstm").unwrap();
        let g = &c.generator;
        assert_eq!((g.embedding_size, g.num_layers, g.hidden_size, g.bptt_len), (400, 3, 1150, 70));
        let c = RunConfig::parse("preset = full-transformer-xl").unwrap();
        let g = &c.generator;
        assert_eq!((g.embedding_size, g.num_layers, g.hidden_size, g.bptt_len), (410, 12, 2100, 150));
        assert_eq!(g.kind, EncoderKind::TransformerXl);
        let c = RunConfig::parse("preset = desk-small").unwrap();
        let g = &c.generator;
        assert_eq!((g.embedding_size, g.num_layers, g.hidden_size, g.bptt_len), (64, 2, 128, 35));
    }

    #[test]
    fn later_lines_override_presets() {
        let c = RunConfig::parse("epochs = 3\npreset = lyrics-lm\nlearning_rate = 0.01 # faster\n").unwrap();
        assert_eq!(c.train.epochs, 15);
        assert_eq!(c.train.learning_rate, 0.01);
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = RunConfig::parse("epochs = many\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = RunConfig::parse("just words\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        assert!(RunConfig::parse("preset = nope").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::parse("preset = metaphors-gan\nrollout_count = 2\ngan_iters_per_epoch = 4\nlearning_rate = 0.1\n").unwrap();
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }
}
