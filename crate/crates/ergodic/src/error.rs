//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: String,
        expected: String,
        got: String,
    },

    #[error("integration diverged at step {step}{}", env_label(.env_id))]
    IntegrationDiverged { step: usize, env_id: Option<u32> },

    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("shape mismatch for {path}: metadata describes {expected} values, file holds {got}")]
    DataShape {
        path: String,
        expected: usize,
        got: usize,
    },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid config file: {0}")]
    ConfigFile(#[from] toml::de::Error),
}

fn env_label(env_id: &Option<u32>) -> String {
    match env_id {
        Some(id) => format!(" (env {id})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: configuration 2, data/IO 3, divergence 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::ConfigFile(_) => 2,
            Error::Io(_)
            | Error::Json(_)
            | Error::FormatVersion { .. }
            | Error::DataShape { .. }
            | Error::Truncated { .. } => 3,
            Error::IntegrationDiverged { .. }
            | Error::RolloutDiverged { .. }
            | Error::NonFiniteLoss { .. } => 4,
            Error::MissingGradient(_) => 1,
        }
    }
}
