//! Variational Bayesian inversion with structured Gaussian posteriors and
//! prior replacement.
//!
//! The workflow has two stages. A prior-specific inversion (`psi`) fits a
//! transformed Gaussian with a sparse Cholesky factor to the posterior of a
//! forward problem by maximizing the evidence lower bound. Prior replacement
//! (`vpr`) then swaps the prior embedded in that result for a new one by
//! minimizing a KL divergence against the surrogate target
//! `log q_old + log p_new - log p_old`, which requires no further forward
//! simulations.

pub mod banded;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod forward;
pub mod gaussian;
pub mod io;
pub mod math;
pub mod priors;
pub mod transforms;
pub mod vi;
pub mod vpr;

pub use error::{Error, Result};
pub use field::Field2;
pub use forward::{ricker, SimCounter, Survey, VelocityField, WaveformData};
pub use gaussian::{GaussianVariational, SparsityPattern, StructuredCholesky};
pub use priors::{PriorSpec, SmoothingOperator, WindowedGaussianPrior};
pub use transforms::BoundedBox;
