//! CLI error type and exit-code policy: 0 success, 2 validation error,
//! 3 numerical failure.

use afm_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config, files, or shapes — nothing was computed.
    #[error("{0}")]
    Validation(String),
    /// The computation itself failed (non-finite values, divergence...).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }

    /// Wrap a core error, tagging the pipeline stage it came from.
    pub fn from_core(stage: &str, e: CoreError) -> Self {
        let msg = format!("{stage}: {e}");
        match e {
            CoreError::NonScalarLoss { .. }
            | CoreError::NonFiniteGradient { .. }
            | CoreError::NonFiniteLoss { .. }
            | CoreError::NonFiniteOdeState { .. }
            | CoreError::Divergence { .. }
            | CoreError::TooManyRejections { .. }
            | CoreError::CholeskyFailure { .. } => CliError::Runtime(msg),
            _ => CliError::Validation(msg),
        }
    }
}
