//! Dense/sparse linear algebra, initialization, Adam, reverse-mode
//! differentiation, and the finite-difference gradient checker.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod sparse;
pub mod tape;

pub use adam::{AdamConfig, AdamMoments, AdamState};
pub use dense::DenseMatrix;
pub use gradcheck::{finite_difference_check, GradCheckReport, ParamVec};
pub use init::{xavier_init, xavier_init_with};
pub use sparse::{CsrStructure, SparseMatrix};
pub use tape::{BlendPlan, Gradients, NodeId, Tape};
