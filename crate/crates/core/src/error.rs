use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("degenerate metric: alpha = {alpha:e} is too close to zero for the dual")]
    DegenerateDual { alpha: f64 },
    #[error("kernel size must be odd and positive, got {0}")]
    EvenKernel(usize),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("unit ball polygon is not convex")]
    NotConvex,
    #[error("origin is not strictly inside the unit ball polygon")]
    OriginOutside,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image of {pixels} pixels exceeds the budget of {budget} pixels")]
    BudgetExceeded { pixels: usize, budget: usize },
    #[error("training diverged at iteration {iteration}: mse {mse:e} (initial {initial:e})")]
    Diverged { iteration: usize, mse: f64, initial: f64 },
    #[error("every learning-rate candidate diverged: {0}")]
    AllCandidatesDiverged(String),
    #[error("image format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
