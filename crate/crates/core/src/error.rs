//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by inversion, prior construction, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("domain error in {context}: {message}")]
    Domain { context: &'static str, message: String },

    #[error("value at index {index} is outside its bounds: {value} not in ({lower}, {upper})")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("size guard exceeded in {context}: n = {n} > {limit}")]
    SizeGuard {
        context: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("matrix not positive definite after jitter up to {max_jitter:e}")]
    NotSpd { max_jitter: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("CFL stability violated: v_max*dt/dx = {cfl:.4} exceeds bound {bound:.4}")]
    Stability { cfl: f64, bound: f64 },

    #[error("zero standard deviation at cell {cell}")]
    ZeroStd { cell: usize },

    #[error("degenerate support: all {n_samples} samples scored -inf under the target")]
    DegenerateSupport { n_samples: usize },

    #[error(
        "non-finite gradient at iteration {iteration}, sample {sample} (stream seed {stream_seed})"
    )]
    NonFiniteGradient {
        iteration: u64,
        sample: usize,
        stream_seed: u64,
    },

    #[error("new-prior support is not nested in old-prior support at indices {indices:?}")]
    SupportViolation { indices: Vec<usize> },

    #[error("forward-simulation counter is {count} at end of a prior-replacement run (must be 0)")]
    CounterNotZero { count: u64 },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("file format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
