//! Dual-channel motion video retrieval, VQ motion tokenization, and a
//! preference-trained autoregressive motion-token policy, with the evaluation
//! metrics used to score them.

pub mod codec;
pub mod embedstore;
pub mod encoders;
pub mod error;
pub mod fusion;
mod mat;
pub mod mcdpo;
pub mod metrics;
pub mod numerics;
pub mod policy;
pub mod opt;
pub mod tensors;

pub use error::{Error, Result};
