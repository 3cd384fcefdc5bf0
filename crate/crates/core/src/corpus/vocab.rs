use std::collections::HashMap;
use std::fmt::Write as _;

use super::{CorpusError, SPECIALS};

/// Ids of the reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials {
    pub unk: usize,
    pub pad: usize,
    pub bos: usize,
    pub eos: usize,
}

impl Default for Specials {
    fn default() -> Self {
        Self {
            unk: 0,
            pad: 1,
            bos: 2,
            eos: 3,
        }
    }
}

const VOCAB_MAGIC: &str = "textgan-vocab";
const VOCAB_VERSION: u32 = 1;

/// Bijection between token strings and dense ids. The reserved tokens in
/// [`SPECIALS`] always hold ids `0..SPECIALS.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    specials: Specials,
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn with_specials() -> Self {
        let id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            token_to_id,
            id_to_token,
            specials: Specials::default(),
        }
    }

    fn push(&mut self, token: String) {
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Out-of-vocabulary tokens map to the unknown id.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(self.specials.unk))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>, CorpusError> {
        ids.iter()
            .map(|&i| {
                self.token(i).map(str::to_string).ok_or(CorpusError::UnknownId {
                    id: i,
                    vocab_size: self.len(),
                })
            })
            .collect()
    }

    /// Line-oriented text form: a header line with the format version and the
    /// special ids, then one `token<TAB>id` line per entry in id order.
    pub fn to_text(&self) -> Result<String, CorpusError> {
        let s = self.specials;
        let mut out = format!(
            "{VOCAB_MAGIC} {VOCAB_VERSION} unk={} pad={} bos={} eos={}\n",
            s.unk, s.pad, s.bos, s.eos
        );
        for (id, tok) in self.id_to_token.iter().enumerate() {
            if tok.contains(['\t', '\n', '\r']) {
                return Err(CorpusError::VocabFormat {
                    line: id + 2,
                    reason: format!("token {tok:?} contains a tab or newline"),
                });
            }
            writeln!(out, "{tok}\t{id}").expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines();
        let bad = |line: usize, reason: String| CorpusError::VocabFormat { line, reason };
        let header = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 6 || fields[0] != VOCAB_MAGIC {
            return Err(bad(1, format!("unrecognized header {header:?}")));
        }
        if fields[1] != VOCAB_VERSION.to_string() {
            return Err(bad(1, format!("unsupported vocabulary format version {}", fields[1])));
        }
        let mut parsed = [0usize; 4];
        for (slot, (field, key)) in parsed.iter_mut().zip(fields[2..].iter().zip(["unk", "pad", "bos", "eos"])) {
            *slot = field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(1, format!("expected {key}=<id>, got {field:?}")))?;
        }
        let specials = Specials {
            unk: parsed[0],
            pad: parsed[1],
            bos: parsed[2],
            eos: parsed[3],
        };
        if specials != Specials::default() {
            return Err(bad(1, format!("special ids {specials:?} differ from the reserved layout")));
        }
        let mut vocab = Self {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
            specials,
        };
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| bad(lineno, "expected token<TAB>id".into()))?;
            let id: usize = id.parse().map_err(|_| bad(lineno, format!("bad id {id:?}")))?;
            if id != vocab.len() {
                return Err(bad(lineno, format!("expected id {}, got {id}", vocab.len())));
            }
            if vocab.token_to_id.contains_key(tok) {
                return Err(bad(lineno, format!("duplicate token {tok:?}")));
            }
            vocab.push(tok.to_string());
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if vocab.token(i) != Some(s) {
                return Err(bad(i + 2, format!("reserved id {i} must hold {s:?}")));
            }
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from a token stream.
///
/// Reserved tokens come first. Remaining tokens seen at least `min_freq`
/// times are ordered by descending frequency, ties broken by first
/// occurrence, and truncated so the whole vocabulary holds at most
/// `max_size` entries (never fewer than the reserved tokens).
pub fn build_vocab<I, S>(tokens: I, min_freq: usize, max_size: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if min_freq == 0 {
        return Err(CorpusError::InvalidArgument("min_freq must be at least 1".into()));
    }
    let mut vocab = Vocabulary::with_specials();
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (pos, tok) in tokens.into_iter().enumerate() {
        let tok = tok.as_ref();
        if vocab.id(tok).is_some() {
            continue;
        }
        counts.entry(tok.to_string()).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_freq)
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let room = max_size.saturating_sub(vocab.len());
    for (tok, _, _) in ranked.into_iter().take(room) {
        vocab.push(tok);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn min_freq_filters_rare_tokens() {
        let v = build_vocab(["a", "b", "a", "a"], 2, 100).unwrap();
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
        assert_eq!(v.encode(&["b"]), vec![v.specials().unk]);
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let v = build_vocab(["b", "a", "a"], 1, SPECIALS.len() + 1).unwrap();
        assert_eq!(v.len(), SPECIALS.len() + 1);
        assert!(v.id("a").is_some());
        assert!(v.id("b").is_none());
    }

    #[test]
    fn ties_break_by_first_occurrence_and_builds_are_deterministic() {
        let stream = ["z", "y", "x", "y", "z", "x"];
        let a = build_vocab(stream, 1, 100).unwrap();
        let b = build_vocab(stream, 1, 100).unwrap();
        assert_eq!(a, b);
        let n = SPECIALS.len();
        assert_eq!(&a.tokens()[n..], ["z", "y", "x"]);
    }

    #[test]
    fn zero_min_freq_is_rejected() {
        assert!(build_vocab(["a"], 0, 10).is_err());
    }

    #[test]
    fn text_form_round_trips_and_keeps_specials() {
        let v = build_vocab(["hello", "world", "hello"], 1, 100).unwrap();
        let text = v.to_text().unwrap();
        assert!(text.starts_with("textgan-vocab 1 unk=0 pad=1 bos=2 eos=3\n"));
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text().unwrap(), text);
    }

    #[test]
    fn malformed_text_is_rejected() {
        assert!(Vocabulary::from_text("").is_err());
        assert!(Vocabulary::from_text("textgan-vocab 2 unk=0 pad=1 bos=2 eos=3\n").is_err());
        let v = Vocabulary::with_specials().to_text().unwrap();
        assert!(Vocabulary::from_text(&format!("{v}word\t99\n")).is_err());
        let swapped = v.replacen("<unk>\t0", "<pad>\t0", 1);
        assert!(Vocabulary::from_text(&swapped).is_err());
    }

    #[test]
    fn decode_rejects_unknown_ids() {
        let v = Vocabulary::with_specials();
        assert!(v.decode(&[1000]).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(words in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let v = build_vocab(&words, 1, 1000).unwrap();
            let ids = v.encode(&words);
            let back = v.decode(&ids).unwrap();
            prop_assert_eq!(&back, &words);
            prop_assert_eq!(v.encode(&back), ids);
        }
    }
}
