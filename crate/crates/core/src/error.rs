use thiserror::Error;

pub type Result<T, E = GpcmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GpcmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("response {value} of person {person} on item {item} outside 0..{n_categories}")]
    ResponseOutOfRange {
        person: usize,
        item: usize,
        value: i64,
        n_categories: usize,
    },

    /// Every observed response to the item falls in a single category.
    #[error("item {item} is degenerate: all responses fall in one category")]
    ItemDegenerate { item: usize },

    #[error("singular Hessian in M-step for item {item}")]
    SingularHessian { item: usize },

    #[error("sampler did not converge: worst PSRF {psrf:.4} on {parameter} after {retries} retries")]
    Nonconvergence {
        parameter: String,
        psrf: f64,
        retries: usize,
    },

    /// A chain with zero within-chain variance, usually a stuck sampler.
    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    #[error("no Fleishman solution for skewness {skewness} and excess kurtosis {kurtosis}")]
    Infeasible { skewness: f64, kurtosis: f64 },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GpcmError {
    /// Process exit code for the CLI: 2 usage/config, 3 data, 4 nonconvergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            GpcmError::Config(_) => 2,
            GpcmError::Nonconvergence { .. } => 4,
            _ => 3,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            GpcmError::InvalidInput(_) => "invalid_input",
            GpcmError::DimensionMismatch { .. } => "dimension_mismatch",
            GpcmError::ResponseOutOfRange { .. } => "response_out_of_range",
            GpcmError::ItemDegenerate { .. } => "item_degenerate",
            GpcmError::SingularHessian { .. } => "singular_hessian",
            GpcmError::Nonconvergence { .. } => "nonconvergence",
            GpcmError::Diagnostic(_) => "diagnostic",
            GpcmError::Infeasible { .. } => "infeasible",
            GpcmError::Parse { .. } => "parse",
            GpcmError::Config(_) => "config",
            GpcmError::Io(_) => "io",
            GpcmError::Csv(_) => "csv",
            GpcmError::Json(_) => "json",
        }
    }
}
