use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown family tag `{0}`")]
    UnknownFamily(String),
    #[error("degenerate covering: {0}")]
    DegenerateCovering(String),
    #[error("point outside covering: {0}")]
    OutsideCovering(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Input problems (as opposed to numerical breakdowns or I/O).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::InvalidMeasure(_)
                | Error::InvalidParameter(_)
                | Error::LengthMismatch { .. }
                | Error::GridMismatch(_)
                | Error::UnknownFamily(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
