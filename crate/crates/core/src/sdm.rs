//! The stateless secure data manager.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::abe;
use crate::auth::{AuthProof, Challenge, NonceTable};
use crate::cas::ContentStore;
use crate::ledger::{LedgerError, Registry};
use crate::message::{slice_hash, CipherSlice, MessageFile, MessageHeader, SharedSecret, SliceMetadata, SliceSecret, SALT_LEN};
use crate::pkcrypto::{seal_to, KeyPair, PublicKey};
use crate::policy::{parse_policy, AttributeDictionary};
use crate::rng::SharedRng;
use crate::service::{DataManager, ServiceError, SliceRequest};

/// How many fresh message ids to try when the registry reports a collision.
const ID_ATTEMPTS: usize = 8;

/// Encrypts slices under their policies, stores the file and registers its locator.
///
/// Nothing about a message outlives the request that created it: the master
/// pair is sealed into the file and dropped.
pub struct SecureDataManager {
    keys: KeyPair,
    skm_public: PublicKey,
    dictionary: AttributeDictionary,
    store: Arc<dyn ContentStore>,
    registry: Arc<Registry>,
    nonces: NonceTable,
    rng: SharedRng,
}

impl SecureDataManager {
    pub fn new(
        keys: KeyPair,
        skm_public: PublicKey,
        dictionary: AttributeDictionary,
        store: Arc<dyn ContentStore>,
        registry: Arc<Registry>,
        rng: SharedRng,
    ) -> Self {
        let nonces = NonceTable::new(keys.address());
        Self { keys, skm_public, dictionary, store, registry, nonces, rng }
    }

    pub fn nonces(&self) -> &NonceTable {
        &self.nonces
    }

    pub fn handle_cipher_request(&self, proof: &AuthProof, slices: &[SliceRequest]) -> Result<u64, ServiceError> {
        let sender = self.nonces.verify(proof)?;
        if slices.is_empty() {
            return Err(ServiceError::Invalid("a message needs at least one slice".into()));
        }
        let policies = slices
            .iter()
            .enumerate()
            .map(|(index, s)| parse_policy(&s.policy, &self.dictionary).map_err(|source| ServiceError::Policy { index, source }))
            .collect::<Result<Vec<_>, _>>()?;

        let mut rng = self.rng.fork();
        let pair = abe::setup(&mut rng);
        let mut cipher_slices = Vec::with_capacity(slices.len());
        let mut secrets = Vec::with_capacity(slices.len());
        for (request, policy) in slices.iter().zip(&policies) {
            let slice_id = fresh_id(&mut rng, |id| cipher_slices.iter().any(|s: &CipherSlice| s.slice_id == id));
            let mut salt = [0u8; SALT_LEN];
            rng.fill_bytes(&mut salt);
            let ct = abe::encrypt(&pair.mpk, policy, &request.plaintext, &mut rng);
            cipher_slices.push(CipherSlice { slice_id, hash: slice_hash(&request.plaintext, &salt), ciphertext: ct.to_bytes() });
            secrets.push(SliceSecret { slice_id, salt, metadata: SliceMetadata::current() });
        }
        let sealed = seal_to(&self.skm_public, &SharedSecret::new(&pair, secrets).to_json(), &mut rng);

        for _ in 0..ID_ATTEMPTS {
            let message_id = fresh_id(&mut rng, |id| self.registry.has_message(id).unwrap_or(false));
            let file = MessageFile {
                header: MessageHeader { sender, message_id, shared_secret: sealed.clone() },
                slices: cipher_slices.clone(),
            };
            // Store first, register last: a failure in between leaves an
            // unreferenced file, never a registry entry without content.
            let locator = self.store.put(&file.to_json())?;
            match self.registry.set_ipfs_info(self.keys.address(), message_id, locator.to_words()) {
                Ok(_) => return Ok(message_id),
                Err(LedgerError::DuplicateMessage(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(ServiceError::Invalid("could not allocate a message id".into()))
    }
}

fn fresh_id<R: RngCore>(rng: &mut R, taken: impl Fn(u64) -> bool) -> u64 {
    loop {
        let id = rng.gen();
        if !taken(id) {
            return id;
        }
    }
}

impl DataManager for SecureDataManager {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        Ok(self.nonces.issue(&mut self.rng.fork()))
    }

    fn cipher(&self, proof: &AuthProof, slices: &[SliceRequest]) -> Result<u64, ServiceError> {
        self.handle_cipher_request(proof, slices)
    }
}

impl<T: DataManager + ?Sized> DataManager for Arc<T> {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        (**self).challenge()
    }

    fn cipher(&self, proof: &AuthProof, slices: &[SliceRequest]) -> Result<u64, ServiceError> {
        (**self).cipher(proof, slices)
    }
}
