use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has empty support")]
    EmptySupport,

    #[error("not absolutely continuous: mass at point {index} where the reference has none")]
    NotAbsolutelyContinuous { index: usize },

    #[error("support mismatch: {0}")]
    SupportMismatch(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid model space: {0}")]
    InvalidSpace(String),

    #[error("cumulant diverged (log-normalizer is {value})")]
    CumulantDiverged { value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("radius {gamma} unreachable (gamma_max = {gamma_max})")]
    RadiusUnreachable { gamma: f64, gamma_max: f64 },

    #[error("bracket [{lo_kl}, {hi_kl}] does not straddle gamma = {gamma}")]
    BracketExhausted { gamma: f64, lo_kl: f64, hi_kl: f64 },

    #[error("relative entropy is not decreasing in lambda at lambda = {lambda}")]
    NonMonotone { lambda: f64 },

    #[error("invalid config at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("serialization error at `{field}`: {message}")]
    Serialization { field: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("precondition unmet: {0}")]
    PreconditionUnmet(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpd(String),

    #[error("grid too coarse: bounds clip {clipped_mass:e} of posterior mass")]
    GridTooCoarse { clipped_mass: f64 },

    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_client(self, client: usize) -> Self {
        match self {
            e @ Error::Client { .. } => e,
            e => Error::Client {
                client,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn ser(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Serialization {
            field: field.into(),
            message: message.into(),
        }
    }
}
