//! Regenerates `data/grammar.txt`.
use textgan::corpus::{synthetic::grammar_corpus, GRAMMAR_SEED, GRAMMAR_TOKENS};

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/grammar.txt");
    std::fs::write(path, grammar_corpus(GRAMMAR_SEED, GRAMMAR_TOKENS))
}
