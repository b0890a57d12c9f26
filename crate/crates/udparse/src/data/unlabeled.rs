//! Plain-text unlabeled corpora: one pretokenized sentence per line,
//! whitespace-separated tokens, optional "form/UPOS" tagging.

use crate::error::{Result, UdError};

use super::{PunctPolicy, Sentence, Token, UNK_POS};

/// Load sentences with strictly more than `min_words` tokens, in file
/// order. Bare forms get the unknown-POS sentinel; "form/UPOS" carries a
/// tag. Blank lines are skipped silently; undecodable bytes are an error
/// naming the line.
pub fn load_unlabeled(bytes: &[u8], min_words: usize, punct: &PunctPolicy) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (ln0, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw)
            .map_err(|_| UdError::syntax(ln0 + 1, "undecodable (non-UTF-8) bytes"))?;
        let tokens: Vec<Token> = line
            .split_whitespace()
            .map(|tok| {
                let (form, upos) = split_tagged(tok);
                Token {
                    form: form.to_string(),
                    upos: upos.to_string(),
                    head: None,
                    deprel: None,
                    is_punct: punct.is_punct(upos),
                }
            })
            .collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() > min_words {
            out.push(Sentence::new(tokens));
        }
    }
    Ok(out)
}

/// "form/UPOS" splits at the last slash; if either side would be empty the
/// whole token is a bare form.
fn split_tagged(tok: &str) -> (&str, &str) {
    match tok.rfind('/') {
        Some(i) if i > 0 && i + 1 < tok.len() => (&tok[..i], &tok[i + 1..]),
        _ => (tok, UNK_POS),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, min_words: usize) -> Vec<Sentence> {
        load_unlabeled(text.as_bytes(), min_words, &PunctPolicy::default()).unwrap()
    }

    #[test]
    fn threshold_is_strict() {
        let ten = (0..10).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let eleven = (0..11).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        assert!(load(&ten, 10).is_empty());
        let got = load(&eleven, 10);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].len(), 11);
    }

    #[test]
    fn empty_stream_gives_empty_list() {
        assert!(load("", 10).is_empty());
        assert!(load("\n \n\t\n", 0).is_empty());
    }

    #[test]
    fn tagged_and_bare_forms() {
        let got = load("the/DET dog barks/VERB ./PUNCT", 0);
        let s = &got[0];
        assert_eq!(s.tokens[0].form, "the");
        assert_eq!(s.tokens[0].upos, "DET");
        assert_eq!(s.tokens[1].form, "dog");
        assert_eq!(s.tokens[1].upos, UNK_POS);
        assert!(s.tokens[3].is_punct);
        assert!(s.tokens.iter().all(|t| t.head.is_none() && t.deprel.is_none()));
    }

    #[test]
    fn pathological_slashes_stay_bare() {
        let got = load("/ a/ /X km/h", 0);
        let forms: Vec<&str> = got[0].tokens.iter().map(|t| t.form.as_str()).collect();
        assert_eq!(forms, vec!["/", "a/", "/X", "km"]);
        assert_eq!(got[0].tokens[3].upos, "h");
    }

    #[test]
    fn bad_bytes_error_names_line() {
        let mut bytes = b"good line here\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        let err = load_unlabeled(&bytes, 0, &PunctPolicy::default()).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn file_order_is_preserved() {
        let got = load("b b b\na a a a", 2);
        assert_eq!(got[0].tokens[0].form, "b");
        assert_eq!(got[1].tokens[0].form, "a");
    }
}
