use nalgebra::DVector;
use thiserror::Error;

/// Errors produced anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model is not fully actuated (n_u = {n_u}, n_c = {n_c})")]
    NotFullyActuated { n_u: usize, n_c: usize },

    #[error("unactuated constraint Jacobian is singular (|det J_u| = {det:e})")]
    SingularJu {
        det: f64,
        last_iterate: DVector<f64>,
    },

    #[error("inverse kinematics did not converge (residual {residual:e})")]
    NoConvergence {
        residual: f64,
        last_iterate: DVector<f64>,
    },

    #[error("sample {index}: {source}")]
    AtSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no feasible point: {0}")]
    NoFeasiblePoint(String),

    #[error("stage mismatch: expected {expected}, found {found}")]
    StageMismatch { expected: String, found: String },

    #[error("singular KKT matrix (reciprocal condition estimate {rcond:e})")]
    SingularKkt { rcond: f64 },

    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
}

impl Error {
    pub(crate) fn at_sample(index: usize, err: Error) -> Error {
        Error::AtSample {
            index,
            source: Box::new(err),
        }
    }

    /// True for failures of the numerical machinery as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularJu { .. }
            | Error::NoConvergence { .. }
            | Error::DegenerateData(_)
            | Error::NoFeasiblePoint(_)
            | Error::SingularKkt { .. }
            | Error::Integration { .. } => true,
            Error::AtSample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
