//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the moderation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("annotation record has no votes")]
    EmptyAnnotations,

    #[error("value {value} outside domain: {reason}")]
    Domain { value: f64, reason: &'static str },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("class `{0}` absent from calibration data")]
    MissingClass(&'static str),

    #[error("calibration method mismatch: expected {expected}, found {found}")]
    CalibrationMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("no feasible risk threshold: alpha {alpha} too small for n = {n}")]
    InfeasibleRisk { alpha: f64, n: usize },

    #[error("schema error{}: {reason}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Schema { row: Option<usize>, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid probability{}: {reason}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    InvalidProbability { row: Option<usize>, reason: String },

    #[error("training diverged at epoch {epoch} (non-finite loss); lower the learning rate")]
    Divergence { epoch: usize },

    #[error("metric `{metric}` undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: &'static str,
    },

    #[error("target TPR {target} unreachable")]
    UnreachableTarget { target: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("duplicate id `{id}`{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    DuplicateId { id: String, row: Option<usize> },

    #[error("unsupported schema version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("item `{0}` not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn schema(row: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Schema {
            row,
            reason: reason.into(),
        }
    }

    /// Short machine-readable name of the variant, used in service responses.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyAnnotations => "EmptyAnnotations",
            Error::Domain { .. } => "DomainError",
            Error::EmptyCalibration => "EmptyCalibration",
            Error::MissingClass(_) => "MissingClass",
            Error::CalibrationMismatch { .. } => "CalibrationMismatch",
            Error::InfeasibleRisk { .. } => "InfeasibleRisk",
            Error::Schema { .. } => "SchemaError",
            Error::Config(_) => "ConfigError",
            Error::InvalidProbability { .. } => "InvalidProbability",
            Error::Divergence { .. } => "DivergenceError",
            Error::UndefinedMetric { .. } => "UndefinedMetric",
            Error::UnreachableTarget { .. } => "UnreachableTarget",
            Error::EmptyDataset => "EmptyDataset",
            Error::DuplicateId { .. } => "DuplicateId",
            Error::Version { .. } => "VersionError",
            Error::Integrity(_) => "IntegrityError",
            Error::Policy(_) => "PolicyError",
            Error::NotFound(_) => "NotFound",
            Error::Conflict(_) => "Conflict",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
