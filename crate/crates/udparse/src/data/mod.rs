//! Treebank ingestion: CoNLL-U reading/writing, plain-text unlabeled
//! corpora, symbol alphabets, and pretrained-vector files. Everything here
//! is immutable after construction and safe to share across workers.

mod alphabet;
mod conllu;
mod embeddings;
mod unlabeled;

pub use alphabet::{build_alphabets, Alphabets, SymbolMap, MASK, PAD, RESERVED, ROOT, UNK};
pub use conllu::{parse_conllu, parse_conllu_with_policy, serialize_conllu};
pub use embeddings::{load_contextual_vectors, load_word_embeddings};
pub use unlabeled::load_unlabeled;

/// Sentinel UPOS stored for tokens whose tag is unknown ("_" in CoNLL-U, or
/// bare forms in unlabeled text).
pub const UNK_POS: &str = "<unk>";

/// One word of a sentence. `head` is 0 for ROOT attachment and 1-based
/// otherwise; absent on unlabeled data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub upos: String,
    pub head: Option<usize>,
    pub deprel: Option<String>,
    pub is_punct: bool,
}

impl Token {
    pub fn new(form: impl Into<String>, upos: impl Into<String>) -> Token {
        let upos = upos.into();
        let is_punct = upos == "PUNCT";
        Token { form: form.into(), upos, head: None, deprel: None, is_punct }
    }

    pub fn with_arc(mut self, head: usize, deprel: impl Into<String>) -> Token {
        self.head = Some(head);
        self.deprel = Some(deprel.into());
        self
    }
}

/// Which UPOS tags count as punctuation. "PUNCT" always does; corpora with
/// other conventions can add their own tags.
#[derive(Debug, Clone, Default)]
pub struct PunctPolicy {
    pub extra_tags: Vec<String>,
}

impl PunctPolicy {
    pub fn is_punct(&self, upos: &str) -> bool {
        upos == "PUNCT" || self.extra_tags.iter().any(|t| t == upos)
    }
}

/// A tokenized sentence. A virtual ROOT occupies position 0 and is not a
/// member of `tokens`; token i lives at position i+1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Sentence {
        Sentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_fully_headed(&self) -> bool {
        self.tokens.iter().all(|t| t.head.is_some())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.tokens.iter().all(|t| t.head.is_some() && t.deprel.is_some())
    }

    /// Head positions (1-based dependents in order), when all present.
    pub fn heads(&self) -> Option<Vec<usize>> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    /// Check that present heads form a tree rooted at position 0: every
    /// token reaches ROOT without revisiting itself.
    pub fn validate_tree(&self) -> crate::error::Result<()> {
        let l = self.len();
        let heads = match self.heads() {
            Some(h) => h,
            None => return Ok(()),
        };
        for (i, &h) in heads.iter().enumerate() {
            if h > l {
                return Err(crate::error::UdError::invalid(format!(
                    "token {} has head {} beyond sentence length {}",
                    i + 1,
                    h,
                    l
                )));
            }
            if h == i + 1 {
                return Err(crate::error::UdError::invalid(format!(
                    "token {} is its own head",
                    i + 1
                )));
            }
        }
        for start in 1..=l {
            let mut at = start;
            let mut steps = 0;
            while at != 0 {
                at = heads[at - 1];
                steps += 1;
                if steps > l {
                    return Err(crate::error::UdError::invalid(format!(
                        "cycle through token {start}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A list of sentences from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
    pub split: Split,
}

impl Treebank {
    pub fn new(sentences: Vec<Sentence>, split: Split) -> Treebank {
        Treebank { sentences, split }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}
