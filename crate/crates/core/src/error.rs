use thiserror::Error;

/// Errors produced anywhere in the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("node id {id} out of range (graph has {nodes} nodes)")]
    NodeOutOfRange { id: usize, nodes: usize },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown variant `{0}`")]
    UnknownVariant(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} out of range [{lo}, {hi}]")]
    OutOfRange { value: i64, lo: i64, hi: i64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value produced by primitive `{primitive}` at tape node {node}")]
    NonFinite { primitive: &'static str, node: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("enumeration over {nodes} nodes exceeds the cap of {cap}; raise the cap to override")]
    CapExceeded { nodes: usize, cap: usize },

    #[error("metrics are only defined for hard-mode traces")]
    SoftTrace,
}

pub type Result<T> = std::result::Result<T, Error>;
