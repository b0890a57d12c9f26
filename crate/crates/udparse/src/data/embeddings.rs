//! Pretrained-vector files: word embeddings ("form v1 .. vd" per line, an
//! optional "count dim" first line) and precomputed per-token contextual
//! vectors (blank-line separated blocks aligned to a corpus file).

use std::collections::HashMap;

use crate::error::{Result, UdError};

/// Returns the embedding dimension and a form -> vector table.
pub fn load_word_embeddings(text: &str) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let mut table = HashMap::new();
    let mut dim: Option<usize> = None;
    for (ln0, line) in text.lines().enumerate() {
        let lineno = ln0 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // Auto-detected "count dim" header.
        if lineno == 1
            && fields.len() == 2
            && fields.iter().all(|f| f.parse::<usize>().is_ok())
        {
            continue;
        }
        if fields.len() < 2 {
            return Err(UdError::syntax(lineno, "expected a form and at least one value"));
        }
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| UdError::syntax(lineno, format!("bad float: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(UdError::syntax(
                    lineno,
                    format!("dimension {} differs from established {}", values.len(), d),
                ))
            }
            _ => {}
        }
        table.insert(fields[0].to_string(), values);
    }
    let dim = dim.ok_or_else(|| UdError::invalid("embedding file holds no vectors"))?;
    Ok((dim, table))
}

/// Per-sentence blocks of per-token float rows, blank-line separated.
/// Returns (dim, per-sentence token vectors).
pub fn load_contextual_vectors(text: &str) -> Result<(usize, Vec<Vec<Vec<f64>>>)> {
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (ln0, line) in text.lines().enumerate() {
        let lineno = ln0 + 1;
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| UdError::syntax(lineno, format!("bad float: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(UdError::syntax(
                    lineno,
                    format!("dimension {} differs from established {}", values.len(), d),
                ))
            }
            _ => {}
        }
        current.push(values);
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    let dim = dim.ok_or_else(|| UdError::invalid("contextual-vector file holds no vectors"))?;
    Ok((dim, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_plain_embedding_file() {
        let (dim, table) = load_word_embeddings("cat 1 2 3\ndog 4 5 6\n").unwrap();
        assert_eq!(dim, 3);
        assert_eq!(table["cat"], vec![1.0, 2.0, 3.0]);
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn header_line_is_auto_detected() {
        let (dim, table) = load_word_embeddings("2 3\ncat 1 2 3\ndog 4 5 6\n").unwrap();
        assert_eq!(dim, 3);
        assert_eq!(table.len(), 2);
        // A two-token first line that is not numeric is a 1-d entry.
        let (dim2, table2) = load_word_embeddings("cat 7\n").unwrap();
        assert_eq!(dim2, 1);
        assert_eq!(table2["cat"], vec![7.0]);
    }

    #[test]
    fn inconsistent_dims_error_with_line() {
        let err = load_word_embeddings("cat 1 2\ndog 3\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn contextual_blocks_align_per_sentence() {
        let (dim, blocks) = load_contextual_vectors("1 2\n3 4\n\n5 6\n").unwrap();
        assert_eq!(dim, 2);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].len(), 2);
        assert_eq!(blocks[1], vec![vec![5.0, 6.0]]);
    }
}
