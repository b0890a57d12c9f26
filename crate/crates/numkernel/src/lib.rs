//! Minimal dense-array numerical kernel with reverse-mode automatic
//! differentiation, just large enough to train BiLSTM sequence models.
//!
//! Values are f64 n-dimensional arrays that record the operation which
//! produced them; calling [`Value::backward`] on a scalar loss accumulates
//! gradients into every trainable leaf reachable from it. Parameters are
//! ordinary [`Value`]s created with [`Value::param`], so a forward pass
//! references parameter storage directly instead of copying it per step.

mod checkpoint;
mod error;
mod gradcheck;
mod optim;
mod value;

pub use checkpoint::{
    read_checkpoint, restore_into, snapshot_of, write_checkpoint, Snapshot, CKPT_HEADER,
};
pub use error::KernelError;
pub use gradcheck::{check_gradients, max_grad_error};
pub use optim::{zero_grads, AdamConfig, Optimizer};
pub use value::{
    concat1, concat_cols, concat_rows, dropout, embed_lookup, stack_rows, Value,
};
