use thiserror::Error;

pub type Result<T> = std::result::Result<T, UdError>;

#[derive(Debug, Error)]
pub enum UdError {
    /// A malformed input file; `line` is 1-based.
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    /// An input that parses but violates a contract (bad tree, empty
    /// treebank, mismatched alphabets, ...).
    #[error("{0}")]
    Invalid(String),
    /// Two resources that must align sentence-by-sentence do not.
    #[error("sentence {index}: {msg}")]
    Alignment { index: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] numkernel::KernelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl UdError {
    pub fn syntax(line: usize, msg: impl Into<String>) -> UdError {
        UdError::Syntax { line, msg: msg.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> UdError {
        UdError::Invalid(msg.into())
    }
}
