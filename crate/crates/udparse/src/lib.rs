//! Cross-lingual universal dependency parsing toolkit.
//!
//! A deep biaffine graph parser is trained jointly with masked-language-
//! modeling and word-ordering objectives over a shared BiLSTM encoder, then
//! transferred from one labeled source treebank to unlabeled target corpora
//! by ensemble-teacher self-training. See the `udparse` binary for the
//! command-line entry points.

pub mod data;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod selftrain;
pub mod trainer;

pub use error::{Result, UdError};

/// Deterministic derivation of per-purpose RNG seeds from one base seed
/// (splitmix64 step). Distinct streams keep the objectives' randomness
/// independent, so e.g. disabling one objective cannot shift another's
/// trajectory.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
