//! The stored message file and the shared secret sealed inside it.
//!
//! A message file is canonical JSON:
//!
//! ```json
//! {"header":{"sender":"0x…","message_id":17071949511205323542,"shared_secret":"<base-64 envelope>"},
//!  "slices":[{"slice_id":…,"hash":"<hex sha-256>","ciphertext":"<base-64>"}]}
//! ```
//!
//! Each slice hash is `SHA-256(plaintext || salt)`. The salts, together with
//! the per-message ABE master pair, live only in the shared secret, which is
//! sealed to the key manager's public key.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abe::{self, AbeMasterPair, MasterKey, MasterPublicKey};
use crate::codec::b64;
use crate::pkcrypto::AccountAddress;

pub const SALT_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageFile {
    pub header: MessageHeader,
    pub slices: Vec<CipherSlice>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageHeader {
    pub sender: AccountAddress,
    pub message_id: u64,
    #[serde(with = "b64")]
    pub shared_secret: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherSlice {
    pub slice_id: u64,
    #[serde(with = "hex::serde")]
    pub hash: [u8; 32],
    /// Encoded [`abe::AbeCiphertext`].
    #[serde(with = "b64")]
    pub ciphertext: Vec<u8>,
}

impl MessageFile {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message files serialise")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn slice(&self, slice_id: u64) -> Option<&CipherSlice> {
        self.slices.iter().find(|s| s.slice_id == slice_id)
    }
}

/// Algebraic parameters recorded per slice so a key manager can check it understands the ciphertext.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceMetadata {
    pub curve: String,
    pub version: u32,
}

impl SliceMetadata {
    pub fn current() -> Self {
        Self { curve: abe::CURVE_ID.to_string(), version: abe::FORMAT_VERSION }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSecret {
    pub slice_id: u64,
    #[serde(with = "hex::serde")]
    pub salt: [u8; SALT_LEN],
    pub metadata: SliceMetadata,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedSecret {
    #[serde(with = "b64")]
    pub mpk: Vec<u8>,
    #[serde(with = "b64")]
    pub mk: Vec<u8>,
    pub slices: Vec<SliceSecret>,
}

impl SharedSecret {
    pub fn new(pair: &AbeMasterPair, slices: Vec<SliceSecret>) -> Self {
        Self { mpk: pair.mpk.to_bytes(), mk: pair.mk.to_bytes(), slices }
    }

    pub fn master_pair(&self) -> Result<AbeMasterPair, abe::AbeError> {
        Ok(AbeMasterPair { mpk: MasterPublicKey::from_bytes(&self.mpk)?, mk: MasterKey::from_bytes(&self.mk)? })
    }

    pub fn salt_of(&self, slice_id: u64) -> Option<&[u8; SALT_LEN]> {
        self.slices.iter().find(|s| s.slice_id == slice_id).map(|s| &s.salt)
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("shared secrets serialise")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

pub fn slice_hash(plaintext: &[u8], salt: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(plaintext);
    h.update(salt);
    h.finalize().into()
}

/// True iff `plaintext` salted with `salt` hashes to the digest stored for `slice`.
pub fn verify_integrity(plaintext: &[u8], salt: &[u8], slice: &CipherSlice) -> bool {
    slice_hash(plaintext, salt) == slice.hash
}
