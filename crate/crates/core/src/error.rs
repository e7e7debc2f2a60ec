use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("SVD of a {rows}x{cols} matrix did not converge after {sweeps} sweeps")]
    SvdNoConvergence { rows: usize, cols: usize, sweeps: usize },
    #[error("no nonzero singular value")]
    NoNonzeroSingularValue,
    #[error(
        "E[D^2] has non-positive entry {value} at row {index}; data point {index} is never active and should be removed"
    )]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("invalid weighting scheme: {0}")]
    InvalidScheme(String),
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("explicit step schedule exhausted at k = {k} (length {len})")]
    ScheduleExhausted { k: usize, len: usize },
    #[error("assumption violated: {name} ({detail})")]
    AssumptionViolated { name: String, detail: String },
    #[error("step size {alpha} violates the variance step bound {bound}")]
    StepBound { alpha: f64, bound: f64 },
    #[error("enumeration needs {required} outcomes, budget is {cap}")]
    BudgetExceeded { required: u128, cap: u128 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures of the theoretical guards rather than malformed input.
    pub fn is_guard_failure(&self) -> bool {
        matches!(
            self,
            Error::AssumptionViolated { .. } | Error::StepBound { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
