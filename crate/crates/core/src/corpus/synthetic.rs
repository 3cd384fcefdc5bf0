//! Small generated corpora for smoke tests and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tokenize;

const DETERMINERS: &[&str] = &["the", "a", "every", "my"];
const ADJECTIVES: &[&str] = &["silver", "quiet", "old", "bright", "cold", "golden", "wild", "gentle"];
const NOUNS: &[&str] = &[
    "moon", "river", "heart", "song", "night", "bird", "rose", "wind", "star", "sea", "road", "dream",
];
const NAMES: &[&str] = &["Mara", "Juno", "Eli"];
const VERBS: &[&str] = &["sings", "holds", "follows", "remembers", "carries", "finds", "loves", "breaks"];
const ADVERBS: &[&str] = &["softly", "slowly", "again", "alone"];
const PREPOSITIONS: &[&str] = &["over", "under", "beyond", "through", "into"];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("word lists are non-empty")
}

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
    if rng.gen_bool(0.15) {
        out.push(pick(rng, NAMES));
        return;
    }
    out.push(pick(rng, DETERMINERS));
    if rng.gen_bool(0.5) {
        out.push(pick(rng, ADJECTIVES));
    }
    out.push(pick(rng, NOUNS));
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let mut words = Vec::new();
    noun_phrase(rng, &mut words);
    words.push(pick(rng, VERBS));
    match rng.gen_range(0..3) {
        0 => noun_phrase(rng, &mut words),
        1 => words.push(pick(rng, ADVERBS)),
        _ => {
            words.push(pick(rng, PREPOSITIONS));
            noun_phrase(rng, &mut words);
        }
    }
    let mut line = words.join(" ");
    if let Some(first) = line.get(..1) {
        line.replace_range(..1, &first.to_uppercase());
    }
    line.push(if rng.gen_bool(0.8) { '.' } else { ',' });
    line
}

/// Short verse-like documents from a fixed probabilistic grammar, separated by
/// blank lines, generated until the text tokenizes to at least
/// `target_tokens` tokens.
pub fn grammar_corpus(seed: u64, target_tokens: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs: Vec<String> = Vec::new();
    let mut count = 0;
    while count < target_tokens {
        let lines: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| sentence(&mut rng)).collect();
        let doc = lines.join("\n");
        count += tokenize(&doc).len();
        docs.push(doc);
    }
    let mut text = docs.join("\n\n");
    text.push('\n');
    text
}

/// `pattern` repeated until `n_tokens` space-separated tokens are produced.
pub fn cyclic_corpus(pattern: &[&str], n_tokens: usize) -> String {
    pattern.iter().cycle().take(n_tokens).copied().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_documents;

    #[test]
    fn grammar_corpus_is_deterministic_and_sized() {
        let a = grammar_corpus(3, 2_000);
        assert_eq!(a, grammar_corpus(3, 2_000));
        let per_doc: usize = split_documents(&a).iter().map(|d| tokenize(d).len()).sum();
        assert!((2_000..2_100).contains(&per_doc), "{per_doc}");
        assert!(split_documents(&a).len() > 50);
    }

    #[test]
    fn bundled_corpus_matches_generator() {
        let bundled = include_str!("../../data/grammar.txt");
        assert_eq!(bundled, grammar_corpus(crate::corpus::GRAMMAR_SEED, crate::corpus::GRAMMAR_TOKENS));
    }

    #[test]
    fn cyclic_corpus_repeats() {
        assert_eq!(cyclic_corpus(&["a", "b", "c"], 5), "a b c a b");
    }
}
