//! Client roles: data owners, readers and the attribute certifier.

use crate::auth::AuthProof;
use crate::cas::{ContentStore, Locator};
use crate::ledger::{GasReceipt, LedgerError, Registry};
use crate::message::{verify_integrity, MessageFile};
use crate::pkcrypto::{AccountAddress, KeyPair};
use crate::service::{AccessResponse, DataManager, KeyManager, KeyResponse, ServiceError, SliceRequest};

/// A named account acting as data owner, reader or certifier.
#[derive(Clone, Debug)]
pub struct Actor {
    pub name: String,
    pub keys: KeyPair,
}

impl Actor {
    pub fn new(name: impl Into<String>, keys: KeyPair) -> Self {
        Self { name: name.into(), keys }
    }

    pub fn address(&self) -> AccountAddress {
        self.keys.address()
    }

    /// `audience` is the service's ledger address, taken from the caller's
    /// configuration rather than from the service's own answer.
    fn prove(&self, challenge: crate::auth::Challenge, audience: &AccountAddress) -> AuthProof {
        AuthProof::sign(&self.keys, audience, challenge.nonce)
    }

    /// Data owner: hands slices to the data manager and gets the message id back.
    pub fn send(&self, sdm: &dyn DataManager, sdm_address: &AccountAddress, slices: &[SliceRequest]) -> Result<u64, ServiceError> {
        let proof = self.prove(sdm.challenge()?, sdm_address);
        sdm.cipher(&proof, slices)
    }

    /// Reader: obtains a key for `message_id` derived from its registered attributes.
    pub fn request_key(&self, skm: &dyn KeyManager, skm_address: &AccountAddress, message_id: u64) -> Result<KeyResponse, ServiceError> {
        let proof = self.prove(skm.challenge()?, skm_address);
        skm.key(&proof, message_id)
    }

    /// Reader: asks the key manager to open the slices `sk` satisfies.
    pub fn access(
        &self,
        skm: &dyn KeyManager,
        skm_address: &AccountAddress,
        message_id: u64,
        sk: &[u8],
    ) -> Result<AccessResponse, ServiceError> {
        let proof = self.prove(skm.challenge()?, skm_address);
        skm.access(&proof, message_id, sk)
    }

    /// Certifier: records `reader`'s attributes in the registry.
    pub fn certify(&self, registry: &Registry, reader: &AccountAddress, attributes: Vec<u64>) -> Result<GasReceipt, LedgerError> {
        registry.set_user_info(self.address(), *reader, attributes)
    }
}

/// A returned slice with the outcome of the salted-hash check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckedSlice {
    pub slice_id: u64,
    /// Position of the slice in the stored file.
    pub index: Option<usize>,
    pub plaintext: Vec<u8>,
    pub intact: bool,
}

/// Fetches the stored file and checks every returned slice against its stored hash.
pub fn check_slices(
    store: &dyn ContentStore,
    locator: &Locator,
    response: &AccessResponse,
) -> Result<Vec<CheckedSlice>, ServiceError> {
    let file = MessageFile::from_json(&store.get(locator)?).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
    Ok(response
        .slices
        .iter()
        .map(|r| {
            let index = file.slices.iter().position(|s| s.slice_id == r.slice_id);
            let intact = index.is_some_and(|i| verify_integrity(&r.plaintext, &r.salt, &file.slices[i]));
            CheckedSlice { slice_id: r.slice_id, index, plaintext: r.plaintext.clone(), intact }
        })
        .collect())
}
