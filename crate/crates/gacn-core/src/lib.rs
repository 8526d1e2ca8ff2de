//! GACN: adversarially generated graph views for contrastive node-embedding
//! training, with evaluation for node classification and link prediction.
//!
//! The crate is generic over the scalar type (`f32`/`f64`); the aliases at
//! the root pin the common instantiations.

pub mod diff;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod ssl;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default-precision aliases.
pub type Tensor64 = diff::Tensor<f64>;
pub type Tape64 = diff::Tape<f64>;
pub type SparseMatrix64 = diff::SparseMatrix<f64>;
pub type EmbeddingTable64 = encoder::EmbeddingTable<f64>;

/// Single-precision aliases.
pub type Tensor32 = diff::Tensor<f32>;
pub type Tape32 = diff::Tape<f32>;
pub type SparseMatrix32 = diff::SparseMatrix<f32>;
