//! Perplexity, distinct-n and side-by-side reports.
//!
//! Perplexity is `exp` of the mean per-token negative log-likelihood in nats.
//!
//! ```
//! use textgan::eval::{distinct_n, perplexity_from_nll};
//! assert!((perplexity_from_nll(&[10f64.ln(); 4]).unwrap() - 10.0).abs() < 1e-12);
//! let d = distinct_n(&[vec!["a", "b", "a", "b"]], 2).unwrap();
//! assert!((d - 2.0 / 3.0).abs() < 1e-12);
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hash;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Vocabulary;
use crate::generator::GeneratorModel;
use crate::{Error, Result};

/// Anything that assigns a negative log-likelihood to each next token of a
/// stream: element `i` scores `stream[i + 1]` given `stream[..=i]`.
pub trait TokenScorer {
    fn token_nll(&self, stream: &[usize]) -> Result<Vec<f64>>;
}

impl TokenScorer for GeneratorModel {
    fn token_nll(&self, stream: &[usize]) -> Result<Vec<f64>> {
        self.stream_nll(stream, self.config.bptt_len)
    }
}

pub fn perplexity_from_nll(nll: &[f64]) -> Result<f64> {
    if nll.is_empty() {
        return Err(Error::InvalidInput("perplexity of an empty stream".into()));
    }
    Ok((nll.iter().sum::<f64>() / nll.len() as f64).exp())
}

/// Perplexity over every predicted token of `stream`, unknown tokens included.
pub fn perplexity<M: TokenScorer + ?Sized>(model: &M, stream: &[usize]) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "perplexity needs at least 2 tokens, got {}",
            stream.len()
        )));
    }
    perplexity_from_nll(&model.token_nll(stream)?)
}

/// Perplexity skipping positions whose target is `exclude` (typically the
/// unknown-token id). The excluded tokens still condition later predictions.
pub fn perplexity_excluding<M: TokenScorer + ?Sized>(model: &M, stream: &[usize], exclude: usize) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "perplexity needs at least 2 tokens, got {}",
            stream.len()
        )));
    }
    let nll = model.token_nll(stream)?;
    let kept: Vec<f64> = nll
        .iter()
        .zip(&stream[1..])
        .filter(|(_, &t)| t != exclude)
        .map(|(&x, _)| x)
        .collect();
    perplexity_from_nll(&kept)
}

/// Unique n-grams over total n-grams, counted inside each sample (n-grams
/// never straddle two samples).
pub fn distinct_n<S, T>(samples: &[S], n: usize) -> Result<f64>
where
    S: AsRef<[T]>,
    T: Eq + Hash,
{
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for s in samples {
        for w in s.as_ref().windows(n) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidInput(format!("no {n}-grams in the samples")));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// One row of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub perplexity: f64,
    pub distinct_1: f64,
    pub distinct_2: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Lowest perplexity in its report.
    pub best: bool,
}

/// How samples for distinct-n are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSettings {
    pub count: usize,
    pub max_len: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            count: 20,
            max_len: 30,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Draws `settings.count` samples starting from the beginning-of-sequence
/// token. Returned sequences exclude that token and any end-of-sequence token.
pub fn draw_samples(model: &GeneratorModel, vocab: &Vocabulary, settings: &SampleSettings) -> Result<Vec<Vec<usize>>> {
    let sp = vocab.specials();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let prefixes = vec![vec![sp.bos]; settings.count];
    let limits = vec![settings.max_len; settings.count];
    let trajs = model.sample_batch(&prefixes, &limits, settings.temperature, Some(sp.eos), &mut rng)?;
    Ok(trajs
        .into_iter()
        .map(|t| t.tokens.into_iter().filter(|&x| x != sp.eos).collect())
        .collect())
}

fn distinct_or_zero(samples: &[Vec<usize>], n: usize) -> f64 {
    distinct_n(samples, n).unwrap_or(0.0)
}

/// Scores each named model on `test` and draws samples for distinct-n. All
/// models must share `vocab`. The row with the lowest perplexity is flagged.
pub fn compare_report(
    models: &[(String, &GeneratorModel, &Vocabulary)],
    vocab: &Vocabulary,
    test: &[usize],
    dataset_id: &str,
    settings: &SampleSettings,
) -> Result<Vec<EvalReport>> {
    let mut rows = Vec::with_capacity(models.len());
    for (id, model, v) in models {
        if *v != vocab || model.vocab_size() != vocab.len() {
            return Err(Error::InvalidInput(format!("model {id} uses a different vocabulary")));
        }
        let samples = draw_samples(model, vocab, settings)?;
        rows.push(EvalReport {
            model_id: id.clone(),
            dataset_id: dataset_id.to_string(),
            perplexity: perplexity(*model, test)?,
            distinct_1: distinct_or_zero(&samples, 1),
            distinct_2: distinct_or_zero(&samples, 2),
            sample_count: samples.len(),
            seed: settings.seed,
            best: false,
        });
    }
    flag_best(&mut rows);
    Ok(rows)
}

/// Sets `best` on the first row holding the minimum perplexity.
pub fn flag_best(rows: &mut [EvalReport]) {
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.perplexity.total_cmp(&b.1.perplexity))
        .map(|(i, _)| i);
    for (i, r) in rows.iter_mut().enumerate() {
        r.best = Some(i) == best;
    }
}

/// One JSON object per line.
pub fn report_jsonl(rows: &[EvalReport]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("report rows serialize") + "\n")
        .collect()
}

/// Aligned text table; the best row is marked with `*`.
pub fn report_table(rows: &[EvalReport]) -> String {
    let header = ["model", "dataset", "perplexity", "distinct-1", "distinct-2", "samples", "seed"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                format!("{}{}", r.model_id, if r.best { " *" } else { "" }),
                r.dataset_id.clone(),
                format!("{:.2}", r.perplexity),
                format!("{:.3}", r.distinct_1),
                format!("{:.3}", r.distinct_2),
                r.sample_count.to_string(),
                r.seed.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, row: &[&str]| {
        let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", parts.join("  ").trim_end()).expect("writing to a String cannot fail");
    };
    line(&mut out, &header);
    for row in &cells {
        let r: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &r);
    }
    out
}

/// A published full-scale perplexity. These come from models trained on
/// corpora and at sizes far beyond what this crate trains, so they are
/// reference points only, not reproducible here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedPerplexity {
    pub encoder: &'static str,
    pub method: &'static str,
    pub poetry: f64,
    pub metaphors: f64,
    pub lyrics: f64,
}

pub const PUBLISHED_FULL_SCALE: [PublishedPerplexity; 6] = [
    PublishedPerplexity {
        encoder: "awd-lstm",
        method: "lm",
        poetry: 50.73,
        metaphors: 63.59,
        lyrics: 20.08,
    },
    PublishedPerplexity {
        encoder: "awd-lstm",
        method: "gumbel-gan",
        poetry: 55.03,
        metaphors: 68.72,
        lyrics: 22.19,
    },
    PublishedPerplexity {
        encoder: "awd-lstm",
        method: "creative-gan",
        poetry: 49.40,
        metaphors: 51.84,
        lyrics: 17.11,
    },
    PublishedPerplexity {
        encoder: "transformer-xl",
        method: "lm",
        poetry: 47.46,
        metaphors: 62.76,
        lyrics: 16.11,
    },
    PublishedPerplexity {
        encoder: "transformer-xl",
        method: "gumbel-gan",
        poetry: 46.27,
        metaphors: 63.43,
        lyrics: 12.58,
    },
    PublishedPerplexity {
        encoder: "transformer-xl",
        method: "creative-gan",
        poetry: 42.45,
        metaphors: 65.35,
        lyrics: 9.02,
    },
];

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform(usize);

    impl TokenScorer for Uniform {
        fn token_nll(&self, stream: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![(self.0 as f64).ln(); stream.len() - 1])
        }
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let p = perplexity(&Uniform(10), &[0, 1, 2, 3]).unwrap();
        assert!((p - 10.0).abs() < 1e-9);
        assert!(perplexity(&Uniform(10), &[1]).is_err());
    }

    #[test]
    fn excluding_targets() {
        struct Fixed;
        impl TokenScorer for Fixed {
            fn token_nll(&self, _: &[usize]) -> Result<Vec<f64>> {
                Ok(vec![0.0, 5.0, 0.0])
            }
        }
        assert_eq!(perplexity_excluding(&Fixed, &[1, 2, 0, 2], 0).unwrap(), 1.0);
        assert!(perplexity(&Fixed, &[1, 2, 0, 2]).unwrap() > 1.0);
    }

    #[test]
    fn distinct_counts() {
        assert!((distinct_n(&[vec![1, 2, 1, 2]], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((distinct_n(&[vec![7; 5]], 1).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(distinct_n(&[vec![1, 2, 3]], 1).unwrap(), 1.0);
        assert!(distinct_n(&[vec![1]], 2).is_err());
    }

    #[test]
    fn duplicated_samples_halve_distinct() {
        let s = vec![vec![1, 2, 3, 1], vec![4, 4]];
        let mut twice = s.clone();
        twice.extend(s.clone());
        for n in 1..=2 {
            let a = distinct_n(&s, n).unwrap();
            let b = distinct_n(&twice, n).unwrap();
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    fn row(id: &str, ppl: f64) -> EvalReport {
        EvalReport {
            model_id: id.into(),
            dataset_id: "d".into(),
            perplexity: ppl,
            distinct_1: 0.5,
            distinct_2: 0.5,
            sample_count: 1,
            seed: 0,
            best: false,
        }
    }

    #[test]
    fn best_flag_is_argmin() {
        let mut rows = vec![row("a", 3.0), row("b", 2.0), row("c", 4.0)];
        flag_best(&mut rows);
        assert_eq!(rows.iter().map(|r| r.best).collect::<Vec<_>>(), [false, true, false]);
        let table = report_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("b *"));
        assert_eq!(report_jsonl(&rows).lines().count(), 3);
    }

    #[test]
    fn published_rows() {
        let lm = PUBLISHED_FULL_SCALE[0];
        let cg = PUBLISHED_FULL_SCALE[2];
        assert_eq!((lm.method, lm.poetry), ("lm", 50.73));
        assert_eq!((cg.method, cg.poetry), ("creative-gan", 49.40));
    }
}
