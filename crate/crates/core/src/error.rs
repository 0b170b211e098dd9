use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input data violates a documented contract.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{context}: value out of range at index {index}: {detail}")]
    OutOfRange {
        context: &'static str,
        index: usize,
        detail: String,
    },

    /// Design matrix does not have full column rank.
    #[error("{context}: rank-deficient design (column {column} is (nearly) a combination of the others; singular value ratio {ratio:.3e})")]
    RankDeficient {
        context: &'static str,
        column: usize,
        ratio: f64,
    },

    #[error("{context}: singular system (condition number estimate {condition:.3e})")]
    Singular { context: &'static str, condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors raised by the linear algebra rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. } | Error::Singular { .. } | Error::Numerical(_)
        )
    }
}
