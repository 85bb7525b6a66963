use thiserror::Error;

use crate::dynamics::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid Lie algebra: {0}")]
    InvalidAlgebra(String),

    #[error("invalid representation: {0}")]
    InvalidRepresentation(String),

    #[error("invalid Kaluza-Klein data: {0}")]
    InvalidMetric(String),

    #[error("singular gain: 1 + C A0* has reciprocal condition {rcond:.3e}")]
    SingularGain { rcond: f64 },

    #[error("gamma = {gamma} out of range: 1 - gamma I0 A0 mu^-1 A0* has reciprocal condition {rcond:.3e}")]
    GammaOutOfRange { gamma: f64, rcond: f64 },

    #[error("operator {name} is singular (reciprocal condition {rcond:.3e})")]
    SingularOperator { name: &'static str, rcond: f64 },

    #[error("S is not equivariant: commutator residual {residual:.3e}")]
    NonEquivariant { residual: f64 },

    #[error("k = 1 is a pole of the feedback law")]
    GainPole,

    #[error("invalid satellite parameters: {0}")]
    InvalidParams(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid integration request: {0}")]
    InvalidIntegration(String),

    #[error("state blew up after t = {last_valid_time}")]
    BlowUp {
        last_valid_time: f64,
        partial: Box<Trajectory>,
    },

    #[error("group reconstruction unavailable: {0}")]
    NoGroupTracking(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
