//! Sparsity-invariant operators, a hierarchical multi-scale encoder-decoder
//! built from them, and the tooling to train and evaluate it on sparse depth.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod oracle;
pub mod selftest;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{canonicalize, Array3, Mask2, MaskedMap, EPS};
