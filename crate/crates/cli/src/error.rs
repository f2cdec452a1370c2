use std::path::PathBuf;

use cake::deployment::DeploymentError;
use cake::policy::DictionaryError;
use cake::scenario::ScenarioError;
use cake::service::{ErrorKind, ServiceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Deployment(#[from] DeploymentError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    BadInput { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("scenario report has mismatches")]
    ScenarioFailed,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn bad_input(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::BadInput { path: path.into(), message: message.to_string() }
    }

    /// 1 other, 2 usage or invalid input, 3 access denied, 4 policy parse, 5 authentication, 6 not found.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Service(e) => match e.kind() {
                ErrorKind::Auth => 5,
                ErrorKind::Parse => 4,
                ErrorKind::Denied => 3,
                ErrorKind::NotFound => 6,
                ErrorKind::Invalid => 2,
                ErrorKind::Internal => 1,
            },
            CliError::Deployment(DeploymentError::UnknownAccount(_)) => 6,
            CliError::Deployment(
                DeploymentError::AccountExists(_)
                | DeploymentError::BadAccountName(_)
                | DeploymentError::AlreadyInitialised(_)
                | DeploymentError::NotInitialised(_),
            ) => 2,
            CliError::Scenario(ScenarioError::Invalid(_) | ScenarioError::Load { .. }) => 2,
            CliError::Dictionary(_) | CliError::BadInput { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
