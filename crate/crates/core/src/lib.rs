//! Model-X knockoffs constructed by matching feature co-moments.
//!
//! The pipeline fits a Gaussian copula to the features, draws a second-order
//! Gaussian knockoff as a starting point, then minimizes a penalized
//! objective so that every pairwise correlation, coskewness and cokurtosis
//! involving a knockoff matches the corresponding feature-feature value,
//! while each knockoff stays as uncorrelated as possible with its own feature.

pub mod copula;
pub mod error;
pub mod harness;
pub mod kstest;
pub mod marginals;
pub mod matrix;
pub mod moments;
pub mod optimizer;
pub mod synth;

pub use error::{KnockoffError, Result};
pub use matrix::DataMatrix;
