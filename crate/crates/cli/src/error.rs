use std::fmt;
use std::path::Path;

use clinreason_core::backend::BackendError;
use clinreason_core::corpus::CorpusError;
use clinreason_core::evaluation::EvalError;
use clinreason_core::pipeline::PipelineError;
use clinreason_core::prompting::PromptError;
use clinreason_core::verifier::VerifierError;

/// Failure class, doubling as the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitClass {
    Usage = 1,
    Data = 2,
    Backend = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Data, message: message.into() }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Backend, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::data(format!("{}: {err}", path.display()))
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, prefix: impl fmt::Display) -> Self {
        CliError { class: self.class, message: format!("{prefix}: {}", self.message) }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(_) | BackendError::InvalidParams(_) | BackendError::EmptyPrompt => CliError::data(e.to_string()),
            _ => CliError::backend(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Backend(b) => b.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(b) => b.into(),
            PipelineError::VerifierUnavailable(_) => CliError::backend(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<VerifierError> for CliError {
    fn from(e: VerifierError) -> Self {
        match e {
            VerifierError::Backend(b) => b.into(),
            VerifierError::Unavailable(_) => CliError::backend(e.to_string()),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::data(e.to_string())
    }
}
