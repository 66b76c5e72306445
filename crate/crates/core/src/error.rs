use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("non-positive sigma at layer {layer}, unit {unit}: {value}")]
    NonPositiveSigma { layer: usize, unit: usize, value: f64 },
    #[error("missing batch-norm parameters for layer {0}")]
    MissingBatchNorm(usize),
    #[error("degenerate statistic at layer {layer}, unit {unit}: variance {variance:e}")]
    DegenerateStatistic { layer: usize, unit: usize, variance: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("region budget of {budget} exceeded; use a smaller network or box")]
    RegionBudget { budget: usize },
    #[error("search did not converge: {0}")]
    NoConvergence(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("point lies within {margin:e} of an activation kink; retry with another point")]
    NearKink { margin: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by numerically degenerate data rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateStatistic { .. }
                | Error::NonPositiveSigma { .. }
                | Error::NoConvergence(_)
                | Error::Diverged { .. }
                | Error::RegionBudget { .. }
        )
    }
}
