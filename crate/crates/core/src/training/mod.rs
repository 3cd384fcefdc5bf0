//! Maximum-likelihood language-model training and the two adversarial
//! fine-tuning regimes.
//!
//! - [`train_lm`] runs truncated BPTT over a token stream (pretraining and
//!   fine-tuning share it).
//! - [`creative_gan_generator_step`] is a REINFORCE update on the
//!   discriminator's score with a moving-average baseline.
//! - [`gumbel_generator_step`] backpropagates the discriminator's score
//!   through Gumbel-softmax relaxed samples.
//! - [`adversarial_train`] alternates `disc_steps_per_gen_step`
//!   discriminator updates with one generator update.

mod adversarial;
mod mle;

pub use adversarial::{
    adversarial_train, creative_gan_generator_step, discriminator_update, gumbel_generator_step,
    gumbel_noise, policy_gradient_loss, relaxed_one_hot, train_discriminator_step, Baseline, DiscStepStats,
    EpochEnd, FnScorer, GanData, GanOutcome, GanState, GenStepStats, ScheduleStep, SequenceScorer,
};
pub use mle::{train_lm, MleOutcome};

pub use crate::generator::Trajectory;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Parameterized};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Mle,
    CreativeGan,
    GumbelGan,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mle => "mle",
            Self::CreativeGan => "creative_gan",
            Self::GumbelGan => "gumbel_gan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mle" => Some(Self::Mle),
            "creative_gan" => Some(Self::CreativeGan),
            "gumbel_gan" => Some(Self::GumbelGan),
            _ => None,
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    /// Generator learning rate.
    pub learning_rate: f64,
    /// Discriminator learning rate; the generator's when unset.
    pub disc_learning_rate: Option<f64>,
    pub batch_size: usize,
    pub disc_steps_per_gen_step: usize,
    /// Monte-Carlo completions per prefix; 0 uses the terminal reward only.
    pub rollout_count: usize,
    pub gumbel_temperature: f64,
    /// Per-epoch multiplier on the Gumbel temperature.
    pub gumbel_anneal: f64,
    pub gumbel_floor: f64,
    pub baseline_momentum: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub mle_clip: f64,
    pub gan_clip: f64,
    /// Sampling temperature for fake sequences.
    pub sample_temperature: f64,
    /// Generator iterations per adversarial epoch; one pass over the training
    /// documents at `batch_size` when unset.
    pub gan_iters_per_epoch: Option<usize>,
    /// Insert one teacher-forced step every this many generator iterations;
    /// 0 disables.
    pub mle_interleave_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Mle,
            epochs: 20,
            learning_rate: 3e-3,
            disc_learning_rate: None,
            batch_size: 50,
            disc_steps_per_gen_step: 3,
            rollout_count: 0,
            gumbel_temperature: 1.0,
            gumbel_anneal: 0.9,
            gumbel_floor: 0.1,
            baseline_momentum: 0.9,
            seed: 0,
            adam_beta1: 0.7,
            adam_beta2: 0.8,
            mle_clip: 0.25,
            gan_clip: 1.0,
            sample_temperature: 1.0,
            gan_iters_per_epoch: None,
            mle_interleave_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        // false for NaN
        let pos = |x: f64| x > 0.0;
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if let Some(lr) = self.disc_learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("disc_learning_rate must be non-negative, got {lr}"));
            }
        }
        if self.regime != Regime::Mle && self.disc_steps_per_gen_step == 0 {
            return bad("disc_steps_per_gen_step must be at least 1 in adversarial regimes".into());
        }
        if !pos(self.gumbel_temperature) || !pos(self.gumbel_floor) {
            return bad(format!(
                "gumbel temperature and floor must be positive, got {} and {}",
                self.gumbel_temperature, self.gumbel_floor
            ));
        }
        if !pos(self.gumbel_anneal) || self.gumbel_anneal > 1.0 {
            return bad(format!("gumbel_anneal must be in (0, 1], got {}", self.gumbel_anneal));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return bad(format!("baseline_momentum must be in [0, 1), got {}", self.baseline_momentum));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !pos(b) || b >= 1.0 {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !pos(self.mle_clip) || !pos(self.gan_clip) {
            return bad("gradient clip norms must be positive".into());
        }
        if !pos(self.sample_temperature) {
            return bad(format!("sample_temperature must be positive, got {}", self.sample_temperature));
        }
        if self.gan_iters_per_epoch == Some(0) {
            return bad("gan_iters_per_epoch must be positive".into());
        }
        Ok(())
    }

    pub fn gen_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn disc_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.disc_learning_rate.unwrap_or(self.learning_rate),
            ..self.gen_adam()
        }
    }
}

/// Fresh optimizer state for `model` under `config`.
pub fn new_adam<M: Parameterized>(config: AdamConfig, model: &M) -> AdamState {
    AdamState::new(config, &model.params())
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub perplexity: Option<f64>,
    pub disc_accuracy: Option<f64>,
    pub mean_reward: Option<f64>,
    pub seed: u64,
}

impl MetricRecord {
    pub fn new(phase: &str, epoch: usize, step: usize, loss: f64, seed: u64) -> Self {
        Self {
            phase: phase.to_string(),
            epoch,
            step,
            loss,
            perplexity: None,
            disc_accuracy: None,
            mean_reward: None,
            seed,
        }
    }
}

/// Append-only metrics log. Records are kept in memory and, when a sink is
/// attached, written out as JSON lines as they arrive.
#[derive(Default)]
pub struct MetricsLog {
    records: Vec<MetricRecord>,
    sink: Option<Box<dyn Write>>,
}

impl std::fmt::Debug for MetricsLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsLog")
            .field("records", &self.records.len())
            .field("sink", &self.sink.is_some())
            .finish()
    }
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(sink: Box<dyn Write>) -> Self {
        Self {
            records: Vec::new(),
            sink: Some(sink),
        }
    }

    pub fn push(&mut self, record: MetricRecord) -> Result<()> {
        if let Some(s) = &mut self.sink {
            let line = serde_json::to_string(&record).expect("metric records serialize");
            writeln!(s, "{line}")?;
            s.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("metric records serialize") + "\n")
            .collect()
    }
}

/// Published per-dataset training schedules, selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPreset {
    pub name: &'static str,
    pub regime: Regime,
    pub epochs: usize,
    pub learning_rate: f64,
}

pub const TRAINING_PRESETS: [TrainingPreset; 10] = [
    TrainingPreset { name: "gutenberg-lm", regime: Regime::Mle, epochs: 20, learning_rate: 3e-3 },
    TrainingPreset { name: "poems-lm", regime: Regime::Mle, epochs: 8, learning_rate: 3e-3 },
    TrainingPreset { name: "metaphors-lm", regime: Regime::Mle, epochs: 8, learning_rate: 3e-4 },
    TrainingPreset { name: "lyrics-lm", regime: Regime::Mle, epochs: 15, learning_rate: 3e-4 },
    TrainingPreset { name: "poems-gan", regime: Regime::CreativeGan, epochs: 10, learning_rate: 3e-4 },
    TrainingPreset { name: "metaphors-gan", regime: Regime::CreativeGan, epochs: 10, learning_rate: 3e-4 },
    TrainingPreset { name: "lyrics-gan", regime: Regime::CreativeGan, epochs: 12, learning_rate: 3e-4 },
    TrainingPreset { name: "poems-gumbel", regime: Regime::GumbelGan, epochs: 10, learning_rate: 3e-4 },
    TrainingPreset { name: "metaphors-gumbel", regime: Regime::GumbelGan, epochs: 10, learning_rate: 3e-4 },
    TrainingPreset { name: "lyrics-gumbel", regime: Regime::GumbelGan, epochs: 12, learning_rate: 3e-4 },
];

pub fn training_preset(name: &str) -> Option<TrainingPreset> {
    TRAINING_PRESETS.iter().copied().find(|p| p.name == name)
}
