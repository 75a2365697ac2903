use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("point {value} outside domain [{lo}, {hi}] on the {axis} axis")]
    OutOfDomain {
        axis: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{} record(s) outside the grid: {}", ids.len(), ids.join(", "))]
    RecordsOutsideGrid { ids: Vec<String> },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("{} point(s) outside the model domain: {}", points.len(), points.join(", "))]
    PointsOutOfDomain { points: Vec<String> },

    #[error("hazard for cause {cause} is unidentified: no events")]
    NoEvents { cause: usize },

    #[error("no iterate converged after {iterations} iterations (relative score norm {score_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        last_coefficients: Vec<f64>,
    },

    #[error("no convergent fit among {candidates} smoothing candidates")]
    SearchExhausted { candidates: usize },

    #[error("matrix is not positive definite: {0}")]
    Singular(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::SearchExhausted { .. } => 3,
            Error::InvalidInput(_)
            | Error::OutOfDomain { .. }
            | Error::PointsOutOfDomain { .. }
            | Error::RecordsOutsideGrid { .. }
            | Error::Data { .. }
            | Error::NoEvents { .. }
            | Error::DimensionMismatch(_)
            | Error::Csv(_) => 2,
            _ => 1,
        }
    }
}
