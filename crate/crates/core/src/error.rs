use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DselError>;

#[derive(Debug, Error)]
pub enum DselError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: expected {expected}, found {found} (row {row})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        row: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} out of range for {n_categories} categories")]
    LabelOutOfRange { label: i64, n_categories: usize },
    #[error("category {0} has no instances")]
    EmptyCategory(usize),
    #[error("labels required but the set is unlabeled")]
    Unlabeled,
    #[error("missing weight for category {0}")]
    MissingWeight(usize),
    #[error("invalid weight for category {category}: {value}")]
    InvalidWeight { category: usize, value: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),
    #[error("infeasible marginals: source mass {source_mass}, target mass {target_mass}")]
    InfeasibleMarginals { source_mass: f64, target_mass: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("empty input")]
    EmptyInput,
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl DselError {
    /// Stable numeric code per error class.
    pub fn code(&self) -> u32 {
        match self {
            DselError::Io { .. } => 10,
            DselError::MalformedHeader(_) => 11,
            DselError::DimensionMismatch { .. } => 12,
            DselError::NonFinite { .. } => 13,
            DselError::LabelOutOfRange { .. } => 14,
            DselError::EmptyCategory(_) => 15,
            DselError::Unlabeled => 16,
            DselError::MissingWeight(_) => 20,
            DselError::InvalidWeight { .. } => 21,
            DselError::InvalidArgument(_) => 30,
            DselError::ZeroNorm(_) => 31,
            DselError::InfeasibleMarginals { .. } => 40,
            DselError::ShapeMismatch(_) => 41,
            DselError::AllZeroWeights => 50,
            DselError::EmptyInput => 51,
            DselError::Diverged { .. } => 60,
            DselError::Serde(_) => 70,
        }
    }

    /// True when the error stems from user-supplied input rather than an internal fault.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, DselError::Diverged { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DselError::Io {
            path: path.into(),
            source,
        }
    }
}
