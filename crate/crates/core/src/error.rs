//! Error type shared by every module of the engine.

use thiserror::Error;

/// Failures reported by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weights must be positive and nondecreasing, got {0:?}")]
    InvalidWeights(Vec<u32>),
    #[error("dilation parameter must be positive, got {0}")]
    NonPositiveDilation(f64),
    #[error("vector fields fail to span the tangent space at {point:?} (smallest singular value {sigma:e})")]
    NotSpanning { point: Vec<f64>, sigma: f64 },
    #[error("exponential coordinate {norm} exceeds the chart radius {epsilon}")]
    OutsideChart { norm: f64, epsilon: f64 },
    #[error("trajectory left the admissible region at {0:?}")]
    LeftDomain(Vec<f64>),
    #[error("integration error estimate {estimate:e} exceeds budget {budget:e}")]
    StepUnderflow { estimate: f64, budget: f64 },
    #[error("differential of the exponential map is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("chart radius too large: quasi-metric is infinite for sampled points")]
    ChartTooLarge,
    #[error("fiber tracking failed: {0}")]
    TrackingFailed(String),
    #[error("Gram matrix is singular (condition number {0:e})")]
    SingularGram(f64),
    #[error("flow left the ball of radius {radius} (reached {norm})")]
    FlowEscaped { norm: f64, radius: f64 },
    #[error("profile is not marked mean-zero")]
    NotMeanZero,
    #[error("profile marked mean-zero has |∫ f(x, z, 0) dz| = {0:e}")]
    MeanNonzero(f64),
    #[error("profile validation failed: {0}")]
    InvalidProfile(String),
    #[error("order must have negative real part, got {0}")]
    NonNegativeOrder(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(v: &[f64], expected: usize) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got: v.len() })
    }
}
