use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid survey weight {value} at observation {index}; weights must be positive and finite")]
    InvalidWeight { index: usize, value: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("negative Hessian is singular (minimum eigenvalue {min_eigenvalue:e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error(
        "functional Jacobian is rank deficient: minimum eigenvalue of J'J is {min_eigenvalue:e} \
         (inference requires it to be bounded away from zero)"
    )]
    RankDeficientJacobian { min_eigenvalue: f64 },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    #[error("csv error at row {row}, column '{column}': {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    CsvParse(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag, used by the CLI's machine-parsable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Domain(_) => "domain",
            Error::InvalidWeight { .. } => "invalid_weight",
            Error::InvalidInput(_) => "invalid_input",
            Error::SingularHessian { .. } => "singular_hessian",
            Error::RankDeficientJacobian { .. } => "rank_deficient_jacobian",
            Error::NotConverged(_) => "not_converged",
            Error::CrossValidation(_) => "cross_validation",
            Error::Csv { .. } => "csv",
            Error::MissingColumn(_) => "missing_column",
            Error::Io(_) => "io",
            Error::CsvParse(_) => "csv_parse",
            Error::Json(_) => "json",
        }
    }
}
