use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RasperError>;

#[derive(Debug, Error)]
pub enum RasperError {
    #[error("dataset is empty or has too few rows ({0})")]
    EmptyData(usize),

    #[error("column `{0}` has zero variance and must be dropped")]
    ConstantColumn(String),

    #[error("external score at row {0} is not finite")]
    NonFiniteScore(usize),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Parse(String),

    #[error("column `{0}` named in the schema is absent from the data")]
    SchemaMismatch(String),

    #[error("missing value in column `{column}` at data row {row}")]
    MissingValue { column: String, row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all pair weights are zero; the external ranking carries no ordering information")]
    DegenerateWeights,

    #[error("concordance measure is not positive ({0})")]
    NonpositiveConcordance(f64),

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("MM system matrix is not positive definite")]
    NonSpdSystem,

    #[error("trace system is singular")]
    SingularSystem,

    #[error("invalid grid bounds: {0}")]
    InvalidBounds(String),

    #[error("{failed} of {total} leave-one-out folds failed: {first}")]
    FoldFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("zero variance input to rank correlation")]
    ZeroVariance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
