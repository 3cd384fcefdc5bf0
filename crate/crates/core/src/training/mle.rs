use rand::Rng;

use super::{MetricRecord, MetricsLog, TrainConfig};
use crate::autodiff::{clip_grad_norm, AdamState, AutodiffError, Graph, Parameterized};
use crate::corpus::make_bptt_batches;
use crate::eval::perplexity;
use crate::generator::GeneratorModel;
use crate::{Error, Mode, Result};

/// Summary of a [`train_lm`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome {
    /// Mean train-mode cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Eval-mode validation perplexity per epoch (empty without a valid set).
    pub valid_perplexity: Vec<f64>,
    /// Epoch (1-based) whose weights were kept; the last epoch without a
    /// valid set.
    pub best_epoch: usize,
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Autodiff(AutodiffError::NonFinite { .. } | AutodiffError::NonFiniteGradient(_))
    )
}

/// Truncated-BPTT language-model training over `train`, one epoch being one
/// pass over the stream cut into `batch_size` parallel columns. The hidden
/// state is carried (detached) from window to window. Gradients are clipped
/// to `mle_clip` before each Adam step.
///
/// With a validation stream the weights of the best validation epoch are
/// kept. A non-finite loss or gradient restores the last good weights and
/// returns [`Error::Diverged`].
#[allow(clippy::too_many_arguments)]
pub fn train_lm<R: Rng + ?Sized>(
    gen: &mut GeneratorModel,
    adam: &mut AdamState,
    train: &[usize],
    valid: Option<&[usize]>,
    cfg: &TrainConfig,
    phase: &str,
    rng: &mut R,
    log: &mut MetricsLog,
) -> Result<MleOutcome> {
    cfg.validate()?;
    let batches = make_bptt_batches(train, cfg.batch_size, gen.config.bptt_len)?;
    let mut outcome = MleOutcome {
        train_loss: Vec::new(),
        valid_perplexity: Vec::new(),
        best_epoch: 0,
    };
    let mut best = gen.clone();
    let mut best_ppl = f64::INFINITY;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut state = gen.zero_state(cfg.batch_size);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in &batches {
            let masks = gen.masks(Mode::Train, cfg.batch_size, rng);
            let result = (|| {
                let mut g = Graph::new();
                let vars = gen.bind(&mut g, true);
                let (loss, next) = gen.window_loss(&mut g, &vars, &batch.inputs, &batch.targets, &state, &masks)?;
                let value = g.scalar(loss);
                let grads = g.backward(loss)?;
                Ok::<_, Error>((value, next, grads, vars.all()))
            })()
            .and_then(|(value, next, grads, vars)| {
                grads.accumulate_into(gen.params_mut(), &vars)?;
                Ok((value, next))
            });
            let (value, next) = match result {
                Ok(v) => v,
                Err(e) if is_numeric_failure(&e) => return Err(restore(gen, &best, e)),
                Err(e) => return Err(e),
            };
            clip_grad_norm(&mut gen.params_mut(), cfg.mle_clip);
            if let Err(e) = adam.step(&mut gen.params_mut()) {
                gen.zero_grads();
                return Err(restore(gen, &best, e.into()));
            }
            state = next;
            let n = batch.inputs.data.len();
            total += value * n as f64;
            count += n;
            step += 1;
        }
        let train_loss = total / count as f64;
        outcome.train_loss.push(train_loss);
        let mut rec = MetricRecord::new(phase, epoch, step, train_loss, cfg.seed);
        match valid {
            Some(v) => {
                let ppl = perplexity(gen, v)?;
                rec.perplexity = Some(ppl);
                outcome.valid_perplexity.push(ppl);
                if !ppl.is_finite() {
                    return Err(restore(gen, &best, Error::Diverged(format!("validation perplexity {ppl}"))));
                }
                if ppl < best_ppl {
                    best_ppl = ppl;
                    best = gen.clone();
                    outcome.best_epoch = epoch;
                }
            }
            None => {
                rec.perplexity = Some(train_loss.exp());
                best = gen.clone();
                outcome.best_epoch = epoch;
            }
        }
        log.push(rec)?;
    }
    if valid.is_some() && outcome.best_epoch > 0 {
        *gen = best;
    }
    Ok(outcome)
}

fn restore(gen: &mut GeneratorModel, best: &GeneratorModel, cause: Error) -> Error {
    *gen = best.clone();
    Error::Diverged(format!("training stopped, last good weights restored: {cause}"))
}
