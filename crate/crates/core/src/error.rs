use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Singular values `upper` (index `index`) and `lower` (index `index + 1`)
    /// are too close for the split to define unique projectors.
    #[error("degenerate spectrum at split {index}: singular values {upper} and {lower} are tied")]
    DegenerateSpectrum { index: usize, upper: f64, lower: f64 },

    #[error("covariance is singular or ill-conditioned (condition number {condition:e})")]
    SingularGamma { condition: f64 },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    OptimizerDidNotConverge { gradient_norm: f64, iterations: usize },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("constraint jacobian is rank deficient at the constrained point")]
    NonsingularityViolated,

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("cannot form {slices} slices from {distinct} distinct responses")]
    DegenerateSlicing { distinct: usize, slices: usize },

    #[error("campaign cell {cell} unstable: {failed} of {reps} replications failed")]
    CampaignUnstable { cell: String, failed: usize, reps: usize },

    #[error("data error at row {row}, column {column}: {message}")]
    Data { row: usize, column: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Numerical failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_) | Error::Data { .. } | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
