//! Training and evaluation engine for multimodal item recommendation.
//!
//! The engine mines latent item-item graphs from per-modality feature
//! matrices, propagates item embeddings over those graphs, fuses the
//! modalities with an attention mechanism plus a contrastive auxiliary
//! objective, and plugs the resulting item representations into
//! collaborative-filtering backbones (matrix factorization or a
//! LightGCN-style user-item propagation model).
//!
//! All numeric kernels are generic over the scalar type via
//! [`Scalar`]; tests and gradient checks run at 64-bit precision,
//! production runs may select 32-bit through the trainer config.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Row-major dense matrix at the default (test) precision.
pub type Mat64 = numerics::DenseMatrix<f64>;
/// Row-major dense matrix at reduced precision for production runs.
pub type Mat32 = numerics::DenseMatrix<f32>;
/// CSR sparse matrix at the default (test) precision.
pub type Sparse64 = numerics::SparseMatrix<f64>;
/// CSR sparse matrix at reduced precision.
pub type Sparse32 = numerics::SparseMatrix<f32>;
