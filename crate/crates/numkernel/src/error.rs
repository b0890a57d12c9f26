use thiserror::Error;

/// Errors surfaced by the kernel at runtime. Shape mismatches inside the op
/// graph are programming errors and panic instead, naming the op and shapes.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`; optimizer step aborted")]
    NonFiniteGrad(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}
