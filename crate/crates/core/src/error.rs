use thiserror::Error;

use crate::matfun::CriticalTimes;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix of order 0")]
    Empty,

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("matrix has a real negative eigenvalue {0}; no square root with eigenvalues in the open right half-plane")]
    RealNegativeEigenvalue(f64),

    #[error("matrix is singular (smallest eigenvalue modulus {0:e})")]
    Singular(f64),

    #[error("matrix {what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("no Nash equilibrium at T = {horizon}: f(QT) is singular (critical horizons {critical})")]
    NoEquilibrium {
        horizon: f64,
        critical: CriticalTimes,
    },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("Sylvester equation is unsolvable: A and B share the eigenvalue {0}")]
    SharedEigenvalue(num_complex::Complex64),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("collocation system is singular (pivot {pivot:e} at row {row})")]
    SingularCollocation { row: usize, pivot: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}
