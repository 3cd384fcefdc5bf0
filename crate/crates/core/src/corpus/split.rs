use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::CorpusError;

/// Document-level train/valid/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
    pub split_seed: u64,
}

/// Shuffles documents with a seeded RNG and reserves `floor(n / 10)` for test
/// and another `floor(n / 10)` for validation; the rest is training data.
pub fn split_corpus<T: Clone>(docs: &[T], seed: u64) -> Result<SplitCorpus<T>, CorpusError> {
    if docs.len() < 10 {
        return Err(CorpusError::TooFewDocuments { got: docs.len() });
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = docs.len() / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&i| docs[i].clone()).collect::<Vec<T>>();
    Ok(SplitCorpus {
        test: pick(&order[..tenth]),
        valid: pick(&order[tenth..2 * tenth]),
        train: pick(&order[2 * tenth..]),
        split_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_docs_split_80_10_10() {
        let docs: Vec<u32> = (0..100).collect();
        let s = split_corpus(&docs, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn ten_docs_split_8_1_1() {
        let docs: Vec<u32> = (0..10).collect();
        let s = split_corpus(&docs, 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn fewer_than_ten_is_an_error() {
        let docs: Vec<u32> = (0..9).collect();
        assert_eq!(split_corpus(&docs, 0).unwrap_err(), CorpusError::TooFewDocuments { got: 9 });
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_and_reproducible(n in 10usize..300, seed in any::<u64>()) {
            let docs: Vec<usize> = (0..n).collect();
            let a = split_corpus(&docs, seed).unwrap();
            let b = split_corpus(&docs, seed).unwrap();
            prop_assert_eq!(&a, &b);
            let mut all: Vec<usize> = a.train.iter().chain(&a.valid).chain(&a.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, docs);
            prop_assert_eq!(a.test.len(), n / 10);
            prop_assert_eq!(a.valid.len(), n / 10);
        }
    }
}
