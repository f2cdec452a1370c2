//! The stateless secure key manager.

use std::sync::Arc;

use crate::abe::{self, AbeCiphertext, AbeSecretKey};
use crate::auth::{AuthProof, Challenge, NonceTable};
use crate::cas::{ContentStore, Locator};
use crate::ledger::Registry;
use crate::message::{MessageFile, SharedSecret, SliceMetadata};
use crate::pkcrypto::KeyPair;
use crate::policy::AttributeId;
use crate::rng::SharedRng;
use crate::service::{AccessResponse, KeyManager, KeyResponse, RecoveredSlice, ServiceError};

/// Issues per-message keys from registry attributes and decrypts on behalf of readers.
///
/// Every request re-reads the registry and the stored file; nothing is cached.
pub struct SecureKeyManager {
    keys: KeyPair,
    store: Arc<dyn ContentStore>,
    registry: Arc<Registry>,
    nonces: NonceTable,
    rng: SharedRng,
}

struct OpenedMessage {
    locator: Locator,
    file: MessageFile,
    secret: SharedSecret,
}

impl SecureKeyManager {
    pub fn new(keys: KeyPair, store: Arc<dyn ContentStore>, registry: Arc<Registry>, rng: SharedRng) -> Self {
        let nonces = NonceTable::new(keys.address());
        Self { keys, store, registry, nonces, rng }
    }

    pub fn nonces(&self) -> &NonceTable {
        &self.nonces
    }

    fn open_message(&self, message_id: u64) -> Result<OpenedMessage, ServiceError> {
        let words = self.registry.get_ipfs_info(message_id)?;
        let locator = Locator::from_words(&words)?;
        let file = MessageFile::from_json(&self.store.get(&locator)?).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        if file.header.message_id != message_id {
            return Err(ServiceError::Corrupt(format!("file at {locator} belongs to message {}", file.header.message_id)));
        }
        let secret = SharedSecret::from_json(&self.keys.open(&file.header.shared_secret)?)
            .map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        let current = SliceMetadata::current();
        if let Some(s) = secret.slices.iter().find(|s| s.metadata != current) {
            return Err(ServiceError::Corrupt(format!("slice {} uses unsupported parameters {:?}", s.slice_id, s.metadata)));
        }
        Ok(OpenedMessage { locator, file, secret })
    }

    pub fn handle_key_request(&self, proof: &AuthProof, message_id: u64) -> Result<KeyResponse, ServiceError> {
        let reader = self.nonces.verify(proof)?;
        let attributes = self.registry.get_user_info(&reader)?;
        if attributes.is_empty() {
            return Err(ServiceError::NoAttributes(reader));
        }
        let opened = self.open_message(message_id)?;
        let pair = opened.secret.master_pair()?;
        let attrs = attributes.into_iter().map(AttributeId).collect();
        let sk = abe::keygen(&pair, &attrs, &mut self.rng.fork());
        Ok(KeyResponse { sk: sk.to_bytes(), locator: opened.locator })
    }

    /// Returns exactly the slices `sk` opens, or a uniform [`ServiceError::AccessDenied`] if none.
    pub fn handle_access_request(&self, proof: &AuthProof, message_id: u64, sk: &[u8]) -> Result<AccessResponse, ServiceError> {
        self.nonces.verify(proof)?;
        let sk = AbeSecretKey::from_bytes(sk)?;
        let opened = self.open_message(message_id)?;
        let pair = opened.secret.master_pair()?;
        let mut slices = Vec::new();
        for slice in &opened.file.slices {
            let Some(salt) = opened.secret.salt_of(slice.slice_id) else {
                return Err(ServiceError::Corrupt(format!("no salt for slice {}", slice.slice_id)));
            };
            let ct = AbeCiphertext::from_bytes(&slice.ciphertext).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
            if let Ok(plaintext) = abe::decrypt(&pair.mpk, &sk, &ct) {
                slices.push(RecoveredSlice { slice_id: slice.slice_id, plaintext, salt: *salt });
            }
        }
        if slices.is_empty() {
            return Err(ServiceError::AccessDenied);
        }
        Ok(AccessResponse { slices })
    }
}

impl KeyManager for SecureKeyManager {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        Ok(self.nonces.issue(&mut self.rng.fork()))
    }

    fn key(&self, proof: &AuthProof, message_id: u64) -> Result<KeyResponse, ServiceError> {
        self.handle_key_request(proof, message_id)
    }

    fn access(&self, proof: &AuthProof, message_id: u64, sk: &[u8]) -> Result<AccessResponse, ServiceError> {
        self.handle_access_request(proof, message_id, sk)
    }
}

impl<T: KeyManager + ?Sized> KeyManager for Arc<T> {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        (**self).challenge()
    }

    fn key(&self, proof: &AuthProof, message_id: u64) -> Result<KeyResponse, ServiceError> {
        (**self).key(proof, message_id)
    }

    fn access(&self, proof: &AuthProof, message_id: u64, sk: &[u8]) -> Result<AccessResponse, ServiceError> {
        (**self).access(proof, message_id, sk)
    }
}
