use thiserror::Error;

/// Errors raised by the simulation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollapseError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate state: norm {norm:e} below {threshold:e}")]
    DegenerateState { norm: f64, threshold: f64 },
    #[error("step-size error: {0}")]
    StepSize(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unit error: {0}")]
    Unit(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("horizon error: {0}")]
    Horizon(String),
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("ensemble failed: {failed} of {total} trajectories errored (first: {first})")]
    Ensemble { failed: usize, total: usize, first: String },
}

pub type Result<T> = std::result::Result<T, CollapseError>;
