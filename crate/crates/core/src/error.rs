use thiserror::Error;

pub type Result<T> = std::result::Result<T, GvarError>;

#[derive(Debug, Error)]
pub enum GvarError {
    #[error("parameter out of range: {0}")]
    Domain(String),

    #[error("matrix is not symmetric: |V[{row},{col}] - V[{col},{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("matrix is not nonnegative definite: eigenvalue {eigenvalue:e} (largest {largest:e})")]
    NotPsd { eigenvalue: f64, largest: f64 },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient sample: n = {n}, need at least {required}")]
    InsufficientSample { n: usize, required: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("enumeration too large: {count} subsets exceeds limit {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl GvarError {
    /// Stable kebab-case tag, used by the CLI for machine-parsable failures.
    pub fn code(&self) -> &'static str {
        match self {
            GvarError::Domain(_) => "domain",
            GvarError::NotSymmetric { .. } | GvarError::NotPsd { .. } | GvarError::InvalidMatrix(_) => {
                "invalid-matrix"
            }
            GvarError::Singular(_) => "singular",
            GvarError::InsufficientSample { .. } => "insufficient-sample",
            GvarError::InvalidSample(_) => "invalid-sample",
            GvarError::InvalidMeasure(_) => "invalid-measure",
            GvarError::DegenerateMeasure(_) => "degenerate-measure",
            GvarError::DegenerateInput(_) => "degenerate-input",
            GvarError::TooLarge { .. } => "too-large",
            GvarError::Io(_) => "io",
            GvarError::Csv(_) => "csv",
            GvarError::Json(_) => "json",
            GvarError::Parse(_) => "parse",
        }
    }
}
