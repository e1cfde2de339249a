use std::fmt;
use std::process::ExitCode;

use activity_hhmm::eval::EvalError;
use activity_hhmm::infer::InferError;
use activity_hhmm::ingest::IngestError;
use activity_hhmm::model::ModelError;
use activity_hhmm::train::TrainError;

/// Process exit statuses. Clap reports flag grammar errors with status 2 on
/// its own; `Usage` reuses that code for semantic misuse it cannot catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Usage = 2,
    Io = 3,
    Data = 4,
    Train = 5,
    ModelFormat = 6,
    Eval = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn new(status: Status, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Status::Usage, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.status as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let status = match e {
            IngestError::Io { .. } => Status::Io,
            _ => Status::Data,
        };
        Self::new(status, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::InvalidData => Status::ModelFormat,
            ModelError::Io { .. } => Status::Io,
            ModelError::SchemaVersionMismatch { .. } | ModelError::InvariantViolation(_) => Status::ModelFormat,
            ModelError::InvalidConfig(_) => Status::Data,
            _ => Status::Eval,
        };
        Self::new(status, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(ModelError::InvalidConfig(_)) => Self::new(Status::Data, e.to_string()),
            _ => Self::new(Status::Train, e.to_string()),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        Self::new(Status::Eval, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidSweep(_) => Self::usage(e.to_string()),
            EvalError::InvalidSpec(_) => Self::new(Status::Data, e.to_string()),
            EvalError::Train(inner) => (*inner).into(),
            _ => Self::new(Status::Eval, e.to_string()),
        }
    }
}
