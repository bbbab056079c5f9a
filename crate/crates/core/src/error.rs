use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration diverged: non-finite value reached from state {state:?}")]
    Divergence { state: Vec<f64> },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("observable {index} evaluated to non-finite value {value} at x={x:?}")]
    Evaluation { index: usize, value: f64, x: Vec<f64> },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Training {
        epoch: usize,
        loss: f64,
        history: Vec<f64>,
    },

    #[error("non-finite integrand for entry ({i}, {j}) at x={x:?}")]
    Integrand { i: usize, j: usize, x: Vec<f64> },

    #[error("the map leaves its finite region on {rejected} of {total} quadrature nodes")]
    DomainEscape { rejected: usize, total: usize },

    #[error("degenerate dictionary: every singular value of R fell below the truncation threshold")]
    DegenerateDictionary,

    #[error("eigen-solver did not converge (n={dim})")]
    EigenNonConvergent { dim: usize },

    #[error(
        "matrix is defective within tolerance (reconstruction residual {residual:e}); \
         consider raising svd_tol upstream"
    )]
    Defective { residual: f64 },

    #[error("step {step} out of range (available: {available})")]
    StepOutOfRange { step: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Divergence { .. } => "divergence",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Evaluation { .. } => "evaluation",
            Error::Shape { .. } => "shape",
            Error::Precondition(_) => "precondition",
            Error::Training { .. } => "training",
            Error::Integrand { .. } => "integrand",
            Error::DomainEscape { .. } => "domain-escape",
            Error::DegenerateDictionary => "degenerate-dictionary",
            Error::EigenNonConvergent { .. } => "eigen-nonconvergent",
            Error::Defective { .. } => "defective",
            Error::StepOutOfRange { .. } => "step-out-of-range",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
