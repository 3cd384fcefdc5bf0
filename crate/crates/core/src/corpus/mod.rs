//! Corpus ingestion: tokenization, vocabularies, document splits and
//! truncated-BPTT batching.

mod batch;
mod split;
pub mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{make_bptt_batches, BpttBatch, IdMatrix};
pub use split::{split_corpus, SplitCorpus};
pub use tokenize::{detokenize, split_documents, tokenize, tokenize_bytes};
pub use vocab::{build_vocab, Specials, Vocabulary};

use thiserror::Error;

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
/// Marks a capitalized word.
pub const MAJ: &str = "<maj>";
/// Marks an all-caps word.
pub const UP: &str = "<up>";
/// A line break inside a document.
pub const NL: &str = "<nl>";

/// Reserved tokens in id order.
pub const SPECIALS: [&str; 7] = [UNK, PAD, BOS, EOS, MAJ, UP, NL];

pub const DEFAULT_MIN_FREQ: usize = 2;
pub const DEFAULT_MAX_VOCAB: usize = 30_000;

/// Seed and size of the bundled `data/grammar.txt` corpus.
pub const GRAMMAR_SEED: u64 = 20_191_207;
pub const GRAMMAR_TOKENS: usize = 50_000;

/// The bundled synthetic-grammar corpus (about 50k tokens).
pub fn bundled_grammar_corpus() -> &'static str {
    include_str!("../../data/grammar.txt")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("need at least 10 documents to split, got {got}")]
    TooFewDocuments { got: usize },
    #[error("stream of {len} tokens is too short for batch size {batch_size} and bptt length {bptt_len}")]
    StreamTooShort {
        len: usize,
        batch_size: usize,
        bptt_len: usize,
    },
    #[error("id {id} is outside the vocabulary of size {vocab_size}")]
    UnknownId { id: usize, vocab_size: usize },
    #[error("vocabulary line {line}: {reason}")]
    VocabFormat { line: usize, reason: String },
    #[error("{0}")]
    InvalidArgument(String),
}

/// Wraps every document as `<bos> doc <eos>` and concatenates them into one
/// language-modeling stream.
pub fn join_documents(docs: &[Vec<usize>], specials: Specials) -> Vec<usize> {
    let mut out = Vec::with_capacity(docs.iter().map(|d| d.len() + 2).sum());
    for d in docs {
        out.push(specials.bos);
        out.extend_from_slice(d);
        out.push(specials.eos);
    }
    out
}

/// Tokenizes and encodes each document.
pub fn encode_documents<S: AsRef<str>>(docs: &[S], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    docs.iter().map(|d| vocab.encode(&tokenize(d.as_ref()))).collect()
}
