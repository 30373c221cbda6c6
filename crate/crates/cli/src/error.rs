use std::fmt;

use hiertree_core::data::{DataError, EmbedError};
use hiertree_core::eval::EvalError;
use hiertree_core::gateway::GatewayError;
use hiertree_core::scoring::ScoreError;
use hiertree_core::tree::TreeError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;
pub const EXIT_CLASS_MISMATCH: i32 = 5;

/// A message plus the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, message)
    }

    pub fn provider(message: impl Into<String>) -> Self {
        Self::new(EXIT_PROVIDER, message)
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self::new(EXIT_CLASS_MISMATCH, message)
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self::new(EXIT_FAILURE, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        // unreadable or malformed inputs are configuration problems
        CliError::config(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::InvalidSpec(_) => CliError::config(e.to_string()),
            _ => CliError::provider(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidTemplate { .. } | GatewayError::InvalidInput(_) => {
                CliError::config(e.to_string())
            }
            _ => CliError::provider(e.to_string()),
        }
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        let msg = e.to_string();
        match e {
            TreeError::DegenerateClustering(_) => CliError::new(EXIT_DEGENERATE, msg),
            TreeError::Gateway { .. } | TreeError::Embedding { .. } => CliError::provider(msg),
            TreeError::UnknownClass(_) => CliError::mismatch(msg),
            TreeError::InvalidConfig(_)
            | TreeError::BadClassId(_)
            | TreeError::MissingEmbedding(_)
            | TreeError::DimensionMismatch { .. }
            | TreeError::Invalid(_) => CliError::config(msg),
            _ => CliError::other(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::ClassSetMismatch(_) | EvalError::ShapeMismatch(_) => CliError::mismatch(msg),
            EvalError::MissingEmbedding { kind: "label", .. } => CliError::mismatch(msg),
            EvalError::MissingEmbedding { .. } | EvalError::InvalidSpec(_) => CliError::config(msg),
            EvalError::Score(ScoreError::InvalidConfig(_)) => CliError::config(msg),
            _ => CliError::other(msg),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        EvalError::from(e).into()
    }
}
