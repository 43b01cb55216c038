use thiserror::Error;

/// Errors raised while building or differentiating a computation tape.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: domain violation on input value {value}")]
    DomainViolation { op: &'static str, value: f64 },
    #[error("backward requires a scalar (1x1) loss, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("input is not an ancestor of the requested output")]
    NotAnAncestor,
    #[error("operands belong to different tapes")]
    TapeMismatch,
}

/// Errors raised by network construction and optimizer steps.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum NetsError {
    #[error("invalid mlp spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("gradient shape {got:?} does not match parameter {param} with shape {want:?}")]
    GradShapeMismatch {
        param: String,
        want: (usize, usize),
        got: (usize, usize),
    },
}

/// Errors raised when a loss configuration is invalid for the chosen
/// discriminator objective, e.g. label matching against an objective
/// that has no labels.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    InvalidPairing(String),
    #[error("{0}")]
    InvalidValue(String),
}

/// Top-level error for the library surface (training, IO, CLI).
#[derive(Debug, Error)]
pub enum GanlabError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Invalid(String),
}

impl GanlabError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        GanlabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        GanlabError::Json {
            path: path.into(),
            source,
        }
    }
}
