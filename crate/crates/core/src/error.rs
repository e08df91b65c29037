use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("the two matrices share fewer than two sample ids ({0} in common)")]
    EmptyIntersection(usize),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch of {0} rows is too small for batch statistics")]
    BatchTooSmall(usize),

    #[error("training diverged at epoch {epoch}: {term} is not finite")]
    Divergence { epoch: usize, term: String },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("no score recorded for scenario {0:?}")]
    MissingScenario(String),

    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),

    #[error("could not generate a feasible scene after {attempts} attempts (scene seed {seed})")]
    Infeasible { seed: u64, attempts: usize },

    #[error("unsupported format version {found:?}, expected {expected:?}")]
    Version { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that come from the numbers themselves rather than
    /// from malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::DegenerateInput(_)
        )
    }
}
