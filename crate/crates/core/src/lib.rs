//! Cross-channel budget coordination.
//!
//! Campaign budgets are transported onto channels with entropy-regularized
//! optimal transport, and the resulting per-channel caps are evaluated by
//! replaying logged traffic through a generalized second-price auction.

pub mod auction;
pub mod cost_model;
pub mod data_gen;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod oracle;
pub mod ot;
pub mod sinkhorn;
pub mod strategies;

pub use error::{Error, ErrorCategory, Result};
pub use matrix::DenseMatrix;
