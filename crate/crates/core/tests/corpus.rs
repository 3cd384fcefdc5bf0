use proptest::prelude::*;
use textgan::corpus::{
    build_vocab, bundled_grammar_corpus, detokenize, join_documents, make_bptt_batches, split_corpus,
    split_documents, tokenize, Vocabulary, UNK,
};

const WORDS: [&str; 6] = ["moon", "river", "sings", "softly", "over", "the"];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(0..WORDS.len(), 1..12).prop_map(|ix| ix.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn decode_encode_is_identity_in_vocabulary(text in sentence()) {
        let vocab = build_vocab(WORDS.iter(), 1, 100).unwrap();
        let tokens = tokenize(&text);
        let back = vocab.decode(&vocab.encode(&tokens)).unwrap();
        prop_assert_eq!(&back, &tokens);
        prop_assert_eq!(detokenize(&back), text);
    }

    #[test]
    fn out_of_vocabulary_tokens_become_unknown(text in sentence()) {
        let vocab = build_vocab(WORDS[..3].iter(), 1, 100).unwrap();
        let tokens = tokenize(&text);
        let back = vocab.decode(&vocab.encode(&tokens)).unwrap();
        for (orig, got) in tokens.iter().zip(&back) {
            if WORDS[..3].contains(&orig.as_str()) {
                prop_assert_eq!(orig, got);
            } else {
                prop_assert_eq!(got.as_str(), UNK);
            }
        }
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_repeatable(n in 10usize..200, seed in any::<u64>()) {
        let docs: Vec<usize> = (0..n).collect();
        let s = split_corpus(&docs, seed).unwrap();
        prop_assert_eq!(s.test.len(), n / 10);
        prop_assert_eq!(s.valid.len(), n / 10);
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, docs.clone());
        prop_assert_eq!(split_corpus(&docs, seed).unwrap(), s);
    }

    #[test]
    fn batch_columns_reproduce_the_stream(len in 20usize..400, batch in 1usize..5, bptt in 1usize..9) {
        prop_assume!(len > batch * (bptt + 1));
        let ids: Vec<usize> = (0..len).collect();
        let batches = make_bptt_batches(&ids, batch, bptt).unwrap();
        let column = len / batch;
        for b in 0..batch {
            let mut joined: Vec<usize> = Vec::new();
            for w in &batches {
                joined.extend_from_slice(w.inputs.row(b));
                prop_assert_eq!(w.targets.row(b), &ids[b * column + joined.len() - w.inputs.cols + 1..][..w.inputs.cols]);
            }
            prop_assert_eq!(&joined[..], &ids[b * column..b * column + joined.len()]);
        }
    }
}

#[test]
fn long_window_arithmetic() {
    let ids: Vec<usize> = (0..141).collect();
    let batches = make_bptt_batches(&ids, 1, 70).unwrap();
    assert_eq!(batches.len(), 2);
    assert!(batches.iter().all(|b| b.inputs.cols == 70));
}

#[test]
fn bundled_corpus_prepares_end_to_end() {
    let docs = split_documents(bundled_grammar_corpus());
    assert!(docs.len() > 1000);
    let total: usize = docs.iter().map(|d| tokenize(d).len()).sum();
    assert!((50_000..51_000).contains(&total), "{total}");
    let s = split_corpus(&docs, 0).unwrap();
    let vocab = build_vocab(s.train.iter().flat_map(|d| tokenize(d)), 2, 30_000).unwrap();
    let text = vocab.to_text().unwrap();
    assert_eq!(Vocabulary::from_text(&text).unwrap(), vocab);
    let encoded: Vec<Vec<usize>> = s.train.iter().map(|d| vocab.encode(&tokenize(d))).collect();
    let stream = join_documents(&encoded, vocab.specials());
    assert_eq!(stream.len(), encoded.iter().map(|d| d.len() + 2).sum::<usize>());
    assert_eq!(stream[0], vocab.specials().bos);
}
