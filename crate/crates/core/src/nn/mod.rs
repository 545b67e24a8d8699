//! Minimal dense neural-network substrate shared by the perception and
//! policy networks: named parameter tensors, a record-and-replay tape for
//! reverse-mode gradients, the Adam optimizer, and a checksummed
//! checkpoint container.
//!
//! Everything is 64-bit and single-threaded per network instance, which
//! keeps gradient checks tight and training bit-reproducible under a
//! fixed seed.

mod adam;
mod checkpoint;
mod params;
mod tape;
#[cfg(test)]
pub(crate) mod test_support;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use params::{
    clip_global_norm, gaussian_vec, orthogonal_init, ParamId, ParamStore, ParamTensor,
};
pub use tape::{log_softmax, matvec, softmax, Activation, NodeId, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("backward called without a recorded forward pass")]
    NoRecordedForward,
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0}")]
    UnknownParam(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint checksum mismatch or truncated file")]
    ChecksumFail,
}
