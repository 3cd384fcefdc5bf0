use super::{CorpusError, MAJ, NL, UP};

fn flush(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
    let all_upper = letters.len() > 1 && letters.iter().all(|c| c.is_uppercase());
    if all_upper {
        out.push(UP.to_string());
    } else if word.chars().next().is_some_and(char::is_uppercase) {
        out.push(MAJ.to_string());
    }
    out.push(word.to_lowercase());
    word.clear();
}

/// Word-level tokenization.
///
/// Words are maximal alphanumeric runs (an apostrophe between two
/// alphanumerics stays inside the word). Every other non-space character is
/// its own token, and each newline becomes [`NL`]. Words are lowercased; a
/// capitalized word is preceded by [`MAJ`] and an all-caps word by [`UP`].
///
/// ```
/// use textgan::corpus::tokenize;
/// assert_eq!(tokenize("The cat."), ["<maj>", "the", "cat", "."]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        let inner_apostrophe = c == '\'' && !word.is_empty() && chars.peek().is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || inner_apostrophe {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            if c == '\n' {
                out.push(NL.to_string());
            } else if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    flush(&mut word, &mut out);
    out
}

/// [`tokenize`] over raw bytes, rejecting invalid UTF-8 with the offset of the
/// first bad byte.
pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<String>, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize(text))
}

/// Best-effort inverse of [`tokenize`] for display.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut pending: Option<&str> = None;
    let mut at_line_start = true;
    for tok in tokens {
        let tok = tok.as_ref();
        match tok {
            MAJ | UP => {
                pending = Some(if tok == MAJ { MAJ } else { UP });
                continue;
            }
            NL => {
                out.push('\n');
                at_line_start = true;
                pending = None;
                continue;
            }
            _ => {}
        }
        if !at_line_start {
            out.push(' ');
        }
        match pending.take() {
            Some(UP) => out.push_str(&tok.to_uppercase()),
            Some(_) => {
                let mut cs = tok.chars();
                if let Some(first) = cs.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(cs.as_str());
                }
            }
            None => out.push_str(tok),
        }
        at_line_start = false;
    }
    out
}

/// Splits ingest text into documents at blank lines. Leading and trailing
/// whitespace of each document is trimmed; empty documents are dropped.
pub fn split_documents(text: &str) -> Vec<String> {
    let mut docs = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                docs.push(cur.join("\n"));
                cur.clear();
            }
        } else {
            cur.push(line.trim_end());
        }
    }
    if !cur.is_empty() {
        docs.push(cur.join("\n"));
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capitalized_sentence() {
        assert_eq!(tokenize("The cat."), ["<maj>", "the", "cat", "."]);
    }

    #[test]
    fn empty_and_repeated() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("a a a"), ["a", "a", "a"]);
    }

    #[test]
    fn newlines_punctuation_and_case_markers() {
        let toks = tokenize("NASA said: don't\nGo!");
        assert_eq!(
            toks,
            ["<up>", "nasa", "said", ":", "don't", "<nl>", "<maj>", "go", "!"]
        );
    }

    #[test]
    fn fixture_matches_hand_tokenization() {
        let fixture = "Roses are red,\nViolets are BLUE.\n\nI  wrote this\tpoem -- it's 2 lines.";
        let hand = [
            "<maj>", "roses", "are", "red", ",", "<nl>", "<maj>", "violets", "are", "<up>", "blue", ".", "<nl>",
            "<nl>", "<maj>", "i", "wrote", "this", "poem", "-", "-", "it's", "2", "lines", ".",
        ];
        assert_eq!(tokenize(fixture), hand);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        let bytes = b"abc \xff def";
        assert_eq!(tokenize_bytes(bytes).unwrap_err(), CorpusError::InvalidUtf8 { offset: 4 });
        assert_eq!(tokenize_bytes(b"ok").unwrap(), ["ok"]);
    }

    #[test]
    fn detokenize_restores_simple_text() {
        let text = "The cat sat\nOn the MAT";
        assert_eq!(detokenize(&tokenize(text)), text);
    }

    #[test]
    fn documents_split_on_blank_lines() {
        let docs = split_documents("a b\nc\n\n  \nd\n\n\ne f\n");
        assert_eq!(docs, ["a b\nc", "d", "e f"]);
        assert!(split_documents("\n\n").is_empty());
    }
}
