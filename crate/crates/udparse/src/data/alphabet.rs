//! Bidirectional symbol<->index maps for words, characters, POS tags and
//! dependency labels, with fixed reserved slots.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UdError};

use super::{Sentence, Treebank};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const ROOT: usize = 3;
/// Number of reserved indices at the front of every map.
pub const RESERVED: usize = 4;

const RESERVED_STRINGS: [&str; RESERVED] = ["<pad>", "<unk>", "<mask>", "<root>"];
const RESERVED_CHARS: [char; RESERVED] = ['\u{0}', '\u{1}', '\u{2}', '\u{3}'];

/// A bijection between symbols and dense indices. Indices 0..4 are the
/// reserved PAD/UNK/MASK/ROOT entries.
#[derive(Debug, Clone)]
pub struct SymbolMap<T: Clone + Eq + Hash> {
    symbols: Vec<T>,
    index: HashMap<T, usize>,
}

impl<T: Clone + Eq + Hash> SymbolMap<T> {
    fn with_reserved(reserved: [T; RESERVED]) -> SymbolMap<T> {
        let mut map = SymbolMap { symbols: Vec::new(), index: HashMap::new() };
        for r in reserved {
            map.get_or_insert(r);
        }
        map
    }

    fn get_or_insert(&mut self, symbol: T) -> usize {
        if let Some(&i) = self.index.get(&symbol) {
            return i;
        }
        let i = self.symbols.len();
        self.symbols.push(symbol.clone());
        self.index.insert(symbol, i);
        i
    }

    pub fn get(&self, symbol: &T) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, idx: usize) -> &T {
        &self.symbols[idx]
    }

    /// Total size including the reserved entries.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn non_reserved(&self) -> usize {
        self.symbols.len() - RESERVED
    }

    fn from_symbols(symbols: Vec<T>) -> SymbolMap<T> {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        SymbolMap { symbols, index }
    }
}

impl<T: Clone + Eq + Hash> PartialEq for SymbolMap<T> {
    fn eq(&self, other: &Self) -> bool {
        self.symbols == other.symbols
    }
}

/// The four maps shared by every model component. Two models may be
/// ensembled only when their alphabets compare equal.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabets {
    pub words: SymbolMap<String>,
    pub chars: SymbolMap<char>,
    pub pos: SymbolMap<String>,
    pub labels: SymbolMap<String>,
}

impl Alphabets {
    /// Word lookup is case-preserving with a lowercase fallback before UNK.
    pub fn word_index(&self, form: &str) -> usize {
        if let Some(i) = self.words.index.get(form) {
            return *i;
        }
        let lower = form.to_lowercase();
        self.words.index.get(&lower).copied().unwrap_or(UNK)
    }

    pub fn char_indices(&self, form: &str) -> Vec<usize> {
        form.chars()
            .map(|c| self.chars.get(&c).unwrap_or(UNK))
            .collect()
    }

    pub fn pos_index(&self, upos: &str) -> usize {
        self.pos.get(&upos.to_string()).unwrap_or(UNK)
    }

    /// Number of real dependency labels (the biaffine class count).
    pub fn n_label_classes(&self) -> usize {
        self.labels.non_reserved()
    }

    /// Dense class in 0..n_label_classes for a deprel string.
    pub fn label_class(&self, deprel: &str) -> Option<usize> {
        self.labels.get(&deprel.to_string()).map(|i| i - RESERVED)
    }

    pub fn class_label(&self, class: usize) -> &str {
        self.labels.symbol(class + RESERVED)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = AlphabetsFile {
            words: self.words.symbols.clone(),
            chars: self.chars.symbols.clone(),
            pos: self.pos.symbols.clone(),
            labels: self.labels.symbols.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Alphabets> {
        let file: AlphabetsFile = serde_json::from_str(text)?;
        for (name, head) in [
            ("words", &file.words[..RESERVED.min(file.words.len())]),
            ("pos", &file.pos[..RESERVED.min(file.pos.len())]),
            ("labels", &file.labels[..RESERVED.min(file.labels.len())]),
        ] {
            if head.len() < RESERVED || head.iter().zip(RESERVED_STRINGS).any(|(a, b)| a != b) {
                return Err(UdError::invalid(format!(
                    "alphabet file: `{name}` is missing its reserved entries"
                )));
            }
        }
        Ok(Alphabets {
            words: SymbolMap::from_symbols(file.words),
            chars: SymbolMap::from_symbols(file.chars),
            pos: SymbolMap::from_symbols(file.pos),
            labels: SymbolMap::from_symbols(file.labels),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct AlphabetsFile {
    words: Vec<String>,
    chars: Vec<char>,
    pos: Vec<String>,
    labels: Vec<String>,
}

/// Build alphabets from the source training split plus unlabeled text.
/// The word map keeps the `max_vocab` most frequent forms across both
/// corpora (ties broken by first occurrence); characters and POS tags cover
/// everything seen; labels cover exactly the deprels of `labeled`.
pub fn build_alphabets(
    labeled: &Treebank,
    unlabeled: &[Sentence],
    max_vocab: usize,
) -> Result<Alphabets> {
    if labeled.is_empty() {
        return Err(UdError::invalid("cannot build alphabets from an empty treebank"));
    }

    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut chars = SymbolMap::with_reserved(RESERVED_CHARS);
    let mut pos = SymbolMap::with_reserved(RESERVED_STRINGS.map(String::from));
    let mut labels = SymbolMap::with_reserved(RESERVED_STRINGS.map(String::from));

    let all_sentences = labeled.sentences.iter().chain(unlabeled.iter());
    for sentence in all_sentences {
        for token in &sentence.tokens {
            let entry = counts.entry(token.form.as_str()).or_insert((0, order));
            entry.0 += 1;
            order += 1;
            for c in token.form.chars() {
                chars.get_or_insert(c);
            }
            pos.get_or_insert(token.upos.clone());
        }
    }
    for sentence in &labeled.sentences {
        for token in &sentence.tokens {
            if let Some(deprel) = &token.deprel {
                labels.get_or_insert(deprel.clone());
            }
        }
    }

    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let mut words = SymbolMap::with_reserved(RESERVED_STRINGS.map(String::from));
    for (form, _) in ranked.into_iter().take(max_vocab) {
        words.get_or_insert(form.to_string());
    }

    Ok(Alphabets { words, chars, pos, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Split, Token};

    fn tb(sentences: Vec<Sentence>) -> Treebank {
        Treebank::new(sentences, Split::Train)
    }

    fn sent(words: &[(&str, &str, usize, &str)]) -> Sentence {
        Sentence::new(
            words
                .iter()
                .map(|(f, p, h, d)| Token::new(*f, *p).with_arc(*h, *d))
                .collect(),
        )
    }

    #[test]
    fn label_map_covers_exactly_training_deprels() {
        let labeled = tb(vec![sent(&[("He", "PRON", 2, "nsubj"), ("ran", "VERB", 0, "root")])]);
        let a = build_alphabets(&labeled, &[], 100).unwrap();
        assert_eq!(a.n_label_classes(), 2);
        assert_eq!(a.labels.len(), 2 + RESERVED);
        assert_eq!(a.label_class("nsubj"), Some(0));
        assert_eq!(a.label_class("root"), Some(1));
        assert_eq!(a.class_label(1), "root");
        assert_eq!(a.label_class("obj"), None);
    }

    #[test]
    fn max_vocab_keeps_most_frequent() {
        let labeled = tb(vec![sent(&[
            ("a", "X", 2, "dep"),
            ("a", "X", 0, "root"),
            ("b", "X", 2, "dep"),
        ])]);
        let a = build_alphabets(&labeled, &[], 1).unwrap();
        assert_eq!(a.words.non_reserved(), 1);
        assert_eq!(a.word_index("a"), RESERVED);
        assert_eq!(a.word_index("b"), UNK);
    }

    #[test]
    fn frequency_ties_break_by_first_occurrence() {
        let labeled = tb(vec![sent(&[("z", "X", 2, "dep"), ("y", "X", 0, "root")])]);
        let a = build_alphabets(&labeled, &[], 2).unwrap();
        assert_eq!(a.word_index("z"), RESERVED);
        assert_eq!(a.word_index("y"), RESERVED + 1);
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let labeled = tb(vec![
            sent(&[("the", "DET", 2, "det"), ("cat", "NOUN", 0, "root")]),
            sent(&[("a", "DET", 2, "det"), ("dog", "NOUN", 0, "root")]),
        ]);
        let unlabeled = vec![Sentence::new(vec![Token::new("wow", "INTJ")])];
        let a = build_alphabets(&labeled, &unlabeled, 100).unwrap();
        let b = build_alphabets(&labeled, &unlabeled, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_labeled_treebank_is_an_error() {
        assert!(build_alphabets(&tb(vec![]), &[], 10).is_err());
    }

    #[test]
    fn lowercase_fallback_before_unk() {
        let labeled = tb(vec![sent(&[("cat", "NOUN", 0, "root")])]);
        let a = build_alphabets(&labeled, &[], 10).unwrap();
        assert_eq!(a.word_index("Cat"), a.word_index("cat"));
        assert_eq!(a.word_index("doge"), UNK);
    }

    #[test]
    fn unlabeled_contributes_words_chars_pos() {
        let labeled = tb(vec![sent(&[("x", "X", 0, "root")])]);
        let unlabeled = vec![Sentence::new(vec![Token::new("über", "ADJ")])];
        let a = build_alphabets(&labeled, &unlabeled, 10).unwrap();
        assert_ne!(a.word_index("über"), UNK);
        assert_ne!(a.pos_index("ADJ"), UNK);
        assert_ne!(a.chars.get(&'ü'), None);
    }

    #[test]
    fn json_round_trip_is_stable() {
        let labeled = tb(vec![sent(&[("He", "PRON", 2, "nsubj"), ("ran", "VERB", 0, "root")])]);
        let a = build_alphabets(&labeled, &[], 100).unwrap();
        let b = Alphabets::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.word_index("He"), a.word_index("He"));
    }
}
