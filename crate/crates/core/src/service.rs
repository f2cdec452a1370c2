//! Errors and client-facing interfaces shared by the two manager services.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abe::AbeError;
use crate::auth::{AuthError, AuthProof, Challenge};
use crate::cas::{CasError, Locator};
use crate::codec::b64;
use crate::ledger::LedgerError;
use crate::pkcrypto::{AccountAddress, PkError};
use crate::policy::ParseError;

/// Coarse error class carried over the wire and mapped to CLI exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Auth,
    Parse,
    Denied,
    NotFound,
    Invalid,
    Internal,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("authentication failed: {0}")]
    Auth(#[from] AuthError),
    /// `index` is zero-based; the message counts slices from one.
    #[error("slice {}: {source}", index + 1)]
    Policy { index: usize, source: ParseError },
    #[error("access denied")]
    AccessDenied,
    #[error("message {0} is not registered")]
    UnknownMessage(u64),
    #[error("{0} has no registered attributes")]
    NoAttributes(AccountAddress),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("stored message is unusable: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Storage(#[from] CasError),
    #[error(transparent)]
    Ledger(LedgerError),
    #[error("{message}")]
    Remote { kind: ErrorKind, message: String },
    #[error("transport: {0}")]
    Transport(String),
}

impl From<LedgerError> for ServiceError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::UnknownMessage(id) => ServiceError::UnknownMessage(id),
            other => ServiceError::Ledger(other),
        }
    }
}

impl From<PkError> for ServiceError {
    fn from(e: PkError) -> Self {
        ServiceError::Corrupt(e.to_string())
    }
}

impl From<AbeError> for ServiceError {
    fn from(e: AbeError) -> Self {
        match e {
            AbeError::AccessDenied => ServiceError::AccessDenied,
            AbeError::Malformed(m) => ServiceError::Invalid(m.to_string()),
        }
    }
}

impl ServiceError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ServiceError::Auth(_) => ErrorKind::Auth,
            ServiceError::Policy { .. } => ErrorKind::Parse,
            ServiceError::AccessDenied => ErrorKind::Denied,
            ServiceError::UnknownMessage(_) | ServiceError::NoAttributes(_) => ErrorKind::NotFound,
            ServiceError::Invalid(_) => ErrorKind::Invalid,
            ServiceError::Corrupt(_) | ServiceError::Storage(_) | ServiceError::Ledger(_) | ServiceError::Transport(_) => {
                ErrorKind::Internal
            }
            ServiceError::Remote { kind, .. } => *kind,
        }
    }
}

/// One slice of an outgoing message: the plaintext and its policy text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceRequest {
    #[serde(with = "b64")]
    pub plaintext: Vec<u8>,
    pub policy: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyResponse {
    /// Encoded [`crate::abe::AbeSecretKey`].
    #[serde(with = "b64")]
    pub sk: Vec<u8>,
    pub locator: Locator,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveredSlice {
    pub slice_id: u64,
    #[serde(with = "b64")]
    pub plaintext: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub salt: [u8; 16],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessResponse {
    pub slices: Vec<RecoveredSlice>,
}

/// The data manager as seen by a data owner, local or remote.
pub trait DataManager {
    fn challenge(&self) -> Result<Challenge, ServiceError>;
    fn cipher(&self, proof: &AuthProof, slices: &[SliceRequest]) -> Result<u64, ServiceError>;
}

/// The key manager as seen by a reader, local or remote.
pub trait KeyManager {
    fn challenge(&self) -> Result<Challenge, ServiceError>;
    fn key(&self, proof: &AuthProof, message_id: u64) -> Result<KeyResponse, ServiceError>;
    fn access(&self, proof: &AuthProof, message_id: u64, sk: &[u8]) -> Result<AccessResponse, ServiceError>;
}
