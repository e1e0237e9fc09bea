//! Recovery of dropped gradient fragments and a small training harness for
//! measuring how model quality reacts to drops.

mod hadamard;
mod training;
mod xor;

use thiserror::Error;

pub use hadamard::{decode, encode, fwht, zero_fill, Decoded, DropMask, EncodedPayload};
pub use training::{
    train_with_drops, BlobsConfig, ModelKind, PairedMse, RecoveryMode, TrainConfig, TrainReport,
};
pub use xor::{xor_decode, xor_encode, XorCoded, XorRecovery};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("transform length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("fragment size {fragment_size} does not divide padded length {padded}")]
    FragmentSize { fragment_size: usize, padded: usize },
    #[error("mask covers {mask} fragments but the payload has {fragments}")]
    MaskLength { mask: usize, fragments: usize },
    #[error("XOR group size must be at least 1")]
    GroupSize,
    #[error("invalid training field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}
