//! CoNLL-U reading and writing. Ten tab-separated columns
//! (ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC), comments starting
//! with '#', sentences separated by blank lines. Only ID/FORM/UPOS/HEAD/
//! DEPREL are interpreted; the round trip is byte-exact on those five.

use crate::error::{Result, UdError};

use super::{PunctPolicy, Sentence, Split, Token, Treebank, UNK_POS};

pub fn parse_conllu(text: &str) -> Result<Treebank> {
    parse_conllu_with_policy(text, &PunctPolicy::default())
}

pub fn parse_conllu_with_policy(text: &str, punct: &PunctPolicy) -> Result<Treebank> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut token_lines: Vec<usize> = Vec::new();
    let mut block_start = 0usize;

    for (ln0, raw) in text.lines().enumerate() {
        let lineno = ln0 + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            if !tokens.is_empty() {
                sentences.push(finish_sentence(
                    std::mem::take(&mut tokens),
                    &std::mem::take(&mut token_lines),
                    block_start,
                )?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(UdError::syntax(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        // Multiword-token ranges ("3-4") and empty nodes ("5.1") carry no
        // head and are skipped.
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id_num: usize = id
            .parse()
            .map_err(|_| UdError::syntax(lineno, format!("bad token id {id:?}")))?;
        if tokens.is_empty() {
            block_start = lineno;
        }
        if id_num != tokens.len() + 1 {
            return Err(UdError::syntax(
                lineno,
                format!("token id {} out of sequence, expected {}", id_num, tokens.len() + 1),
            ));
        }
        let upos = if cols[3] == "_" { UNK_POS.to_string() } else { cols[3].to_string() };
        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| {
                UdError::syntax(lineno, format!("non-integer HEAD {h:?}"))
            })?),
        };
        let deprel = match cols[7] {
            "_" => None,
            d => Some(d.to_string()),
        };
        let is_punct = punct.is_punct(&upos);
        tokens.push(Token { form: cols[1].to_string(), upos, head, deprel, is_punct });
        token_lines.push(lineno);
    }
    if !tokens.is_empty() {
        sentences.push(finish_sentence(tokens, &token_lines, block_start)?);
    }
    Ok(Treebank::new(sentences, Split::Train))
}

fn finish_sentence(tokens: Vec<Token>, lines: &[usize], block_start: usize) -> Result<Sentence> {
    let l = tokens.len();
    let headed = tokens.iter().filter(|t| t.head.is_some()).count();
    if headed != 0 && headed != l {
        return Err(UdError::syntax(
            block_start,
            "sentence mixes annotated and unannotated HEAD columns",
        ));
    }
    for (t, &lineno) in tokens.iter().zip(lines) {
        if let Some(h) = t.head {
            if h > l {
                return Err(UdError::syntax(
                    lineno,
                    format!("HEAD {h} out of range for sentence of length {l}"),
                ));
            }
        }
    }
    let sentence = Sentence::new(tokens);
    if headed == l {
        sentence
            .validate_tree()
            .map_err(|e| UdError::syntax(block_start, e.to_string()))?;
    }
    Ok(sentence)
}

/// Render a fully annotated treebank. Every sentence must carry heads and
/// labels (e.g. gold or teacher-annotated data).
pub fn serialize_conllu(tb: &Treebank) -> Result<String> {
    let mut out = String::new();
    for (si, sentence) in tb.sentences.iter().enumerate() {
        for (i, t) in sentence.tokens.iter().enumerate() {
            let head = t.head.ok_or_else(|| {
                UdError::invalid(format!("sentence {}: token {} has no head", si + 1, i + 1))
            })?;
            let deprel = t.deprel.as_deref().ok_or_else(|| {
                UdError::invalid(format!("sentence {}: token {} has no deprel", si + 1, i + 1))
            })?;
            let upos = if t.upos == UNK_POS { "_" } else { &t.upos };
            out.push_str(&format!(
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                t.form,
                upos,
                head,
                deprel
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TOKENS: &str =
        "1\tHe\t_\tPRON\t_\t_\t2\tnsubj\t_\t_\n2\tran\t_\tVERB\t_\t_\t0\troot\t_\t_\n";

    #[test]
    fn parses_basic_block() {
        let tb = parse_conllu(TWO_TOKENS).unwrap();
        assert_eq!(tb.len(), 1);
        let s = &tb.sentences[0];
        assert_eq!(s.len(), 2);
        assert_eq!(s.heads().unwrap(), vec![2, 0]);
        assert_eq!(s.tokens[0].deprel.as_deref(), Some("nsubj"));
        assert_eq!(s.tokens[1].deprel.as_deref(), Some("root"));
    }

    #[test]
    fn empty_input_gives_empty_treebank() {
        assert_eq!(parse_conllu("").unwrap().len(), 0);
        assert_eq!(parse_conllu("\n\n").unwrap().len(), 0);
    }

    #[test]
    fn range_lines_are_skipped() {
        let text = "1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n\
                    2\tb\t_\tX\t_\t_\t0\troot\t_\t_\n\
                    3-4\tcd\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    3\tc\t_\tX\t_\t_\t2\tdep\t_\t_\n\
                    4\td\t_\tX\t_\t_\t2\tdep\t_\t_\n";
        let tb = parse_conllu(text).unwrap();
        assert_eq!(tb.sentences[0].len(), 4);
        assert_eq!(tb.sentences[0].heads().unwrap(), vec![2, 0, 2, 2]);
    }

    #[test]
    fn empty_node_lines_are_skipped() {
        let text = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n1.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let tb = parse_conllu(text).unwrap();
        assert_eq!(tb.sentences[0].len(), 1);
    }

    #[test]
    fn comments_are_ignored() {
        let text = format!("# sent_id = 1\n# text = He ran\n{TWO_TOKENS}");
        assert_eq!(parse_conllu(&text).unwrap().len(), 1);
    }

    #[test]
    fn bad_column_count_names_line() {
        let text = "1\tonly\tfour\tcols\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
        assert!(err.to_string().contains("10"), "{err}");
    }

    #[test]
    fn non_integer_head_is_rejected() {
        let text = "1\ta\t_\tX\t_\t_\tx\tdep\t_\t_\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(err.to_string().contains("non-integer HEAD"), "{err}");
    }

    #[test]
    fn out_of_range_head_is_rejected() {
        let text = "1\ta\t_\tX\t_\t_\t5\tdep\t_\t_\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn self_head_is_rejected() {
        let text = "1\ta\t_\tX\t_\t_\t1\tdep\t_\t_\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn cycles_are_rejected() {
        let text = "1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn underscore_head_and_deprel_are_absent() {
        let text = "1\ta\t_\tX\t_\t_\t_\t_\t_\t_\n";
        let tb = parse_conllu(text).unwrap();
        assert_eq!(tb.sentences[0].tokens[0].head, None);
        assert_eq!(tb.sentences[0].tokens[0].deprel, None);
    }

    #[test]
    fn round_trip_identity() {
        let tb = parse_conllu(TWO_TOKENS).unwrap();
        let text = serialize_conllu(&tb).unwrap();
        let back = parse_conllu(&text).unwrap();
        assert_eq!(tb.sentences, back.sentences);
        // A second render is byte-identical.
        assert_eq!(text, serialize_conllu(&back).unwrap());
    }

    #[test]
    fn serialize_empty_treebank_is_empty_stream() {
        let tb = Treebank::new(vec![], Split::Train);
        assert_eq!(serialize_conllu(&tb).unwrap(), "");
    }

    #[test]
    fn serialize_single_root_token() {
        let tb = Treebank::new(
            vec![Sentence::new(vec![Token::new("hi", "INTJ").with_arc(0, "root")])],
            Split::Train,
        );
        let text = serialize_conllu(&tb).unwrap();
        assert_eq!(text, "1\thi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n\n");
    }

    #[test]
    fn serialize_headless_sentence_fails() {
        let tb = Treebank::new(vec![Sentence::new(vec![Token::new("a", "X")])], Split::Train);
        assert!(serialize_conllu(&tb).is_err());
    }

    #[test]
    fn punct_flag_follows_policy() {
        let text = "1\t!\t_\tPUNCT\t_\t_\t0\troot\t_\t_\n";
        let tb = parse_conllu(text).unwrap();
        assert!(tb.sentences[0].tokens[0].is_punct);
        let policy = PunctPolicy { extra_tags: vec!["SYM".into()] };
        let text2 = "1\t$\t_\tSYM\t_\t_\t0\troot\t_\t_\n";
        let tb2 = parse_conllu_with_policy(text2, &policy).unwrap();
        assert!(tb2.sentences[0].tokens[0].is_punct);
        assert!(!parse_conllu(text2).unwrap().sentences[0].tokens[0].is_punct);
    }
}
