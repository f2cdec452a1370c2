//! Challenge-response authentication of ledger accounts.
//!
//! A service hands out single-use random nonces. The caller proves control
//! of an account by signing `label || audience || nonce`, where `audience` is
//! the address of the service being called, and sending its public key along.
//! The service checks that the key hashes to the claimed address and that the
//! signature verifies. Binding the audience stops one service from replaying
//! a proof it received against another.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::b64;
use crate::pkcrypto::{derive_address, AccountAddress, KeyPair, PublicKey};

pub const NONCE_LEN: usize = 32;
pub const DEFAULT_NONCE_TTL: Duration = Duration::from_secs(60);
const LABEL: &[u8] = b"cake-auth/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("unknown, expired or already used challenge")]
    StaleChallenge,
    #[error("public key does not belong to {0}")]
    AddressMismatch(AccountAddress),
    #[error("signature does not verify")]
    BadSignature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Nonce(#[serde(with = "hex::serde")] pub [u8; NONCE_LEN]);

/// What a service sends in answer to a challenge request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub nonce: Nonce,
    pub audience: AccountAddress,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthProof {
    pub address: AccountAddress,
    pub public_key: PublicKey,
    pub nonce: Nonce,
    #[serde(with = "b64")]
    pub signature: Vec<u8>,
}

fn signed_bytes(audience: &AccountAddress, nonce: &Nonce) -> Vec<u8> {
    [LABEL, &audience.0, &nonce.0].concat()
}

impl AuthProof {
    /// Answers a challenge from the service at `audience`.
    ///
    /// The audience comes from the caller's own configuration, not from the
    /// challenge, so a relaying service cannot substitute another's address.
    pub fn sign(keys: &KeyPair, audience: &AccountAddress, nonce: Nonce) -> Self {
        Self {
            address: keys.address(),
            public_key: keys.public().clone(),
            nonce,
            signature: keys.sign(&signed_bytes(audience, &nonce)),
        }
    }
}

/// Outstanding challenges of one service. Nonces are consumed on first use, successful or not.
#[derive(Debug)]
pub struct NonceTable {
    audience: AccountAddress,
    ttl: Duration,
    issued: Mutex<HashMap<Nonce, Instant>>,
}

impl NonceTable {
    pub fn new(audience: AccountAddress) -> Self {
        Self::with_ttl(audience, DEFAULT_NONCE_TTL)
    }

    pub fn with_ttl(audience: AccountAddress, ttl: Duration) -> Self {
        Self { audience, ttl, issued: Mutex::new(HashMap::new()) }
    }

    pub fn issue<R: RngCore>(&self, rng: &mut R) -> Challenge {
        let mut raw = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut raw);
        let nonce = Nonce(raw);
        let now = Instant::now();
        let mut issued = self.issued.lock().unwrap();
        issued.retain(|_, at| now.duration_since(*at) < self.ttl);
        issued.insert(nonce, now);
        Challenge { nonce, audience: self.audience }
    }

    /// Checks `proof` and returns the authenticated address.
    pub fn verify(&self, proof: &AuthProof) -> Result<AccountAddress, AuthError> {
        let issued_at = self.issued.lock().unwrap().remove(&proof.nonce).ok_or(AuthError::StaleChallenge)?;
        if issued_at.elapsed() >= self.ttl {
            return Err(AuthError::StaleChallenge);
        }
        if derive_address(&proof.public_key) != proof.address {
            return Err(AuthError::AddressMismatch(proof.address));
        }
        if !proof.public_key.verify(&signed_bytes(&self.audience, &proof.nonce), &proof.signature) {
            return Err(AuthError::BadSignature);
        }
        Ok(proof.address)
    }

    pub fn outstanding(&self) -> usize {
        self.issued.lock().unwrap().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (ChaCha20Rng, KeyPair, KeyPair) {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let a = KeyPair::generate_with_bits(&mut rng, 1024);
        let b = KeyPair::generate_with_bits(&mut rng, 1024);
        (rng, a, b)
    }

    const SERVICE: AccountAddress = AccountAddress([0x5d; 20]);

    #[test]
    fn honest_proof_is_accepted_once() {
        let (mut rng, reader, _) = setup();
        let table = NonceTable::new(SERVICE);
        let ch = table.issue(&mut rng);
        assert_eq!(ch.audience, SERVICE);
        let proof = AuthProof::sign(&reader, &SERVICE, ch.nonce);
        assert_eq!(table.verify(&proof), Ok(reader.address()));
        assert_eq!(table.verify(&proof), Err(AuthError::StaleChallenge));
    }

    #[test]
    fn impersonation_is_rejected() {
        let (mut rng, victim, attacker) = setup();
        let table = NonceTable::new(SERVICE);

        // Victim's address and public key, attacker's signature.
        let nonce = table.issue(&mut rng).nonce;
        let mut forged = AuthProof::sign(&attacker, &SERVICE, nonce);
        forged.address = victim.address();
        forged.public_key = victim.public().clone();
        assert_eq!(table.verify(&forged), Err(AuthError::BadSignature));

        // Victim's address, attacker's key.
        let nonce = table.issue(&mut rng).nonce;
        let mut forged = AuthProof::sign(&attacker, &SERVICE, nonce);
        forged.address = victim.address();
        assert_eq!(table.verify(&forged), Err(AuthError::AddressMismatch(victim.address())));
    }

    #[test]
    fn proofs_are_bound_to_the_audience() {
        let (mut rng, reader, _) = setup();
        let table = NonceTable::new(SERVICE);
        let nonce = table.issue(&mut rng).nonce;
        let proof = AuthProof::sign(&reader, &AccountAddress([1; 20]), nonce);
        assert_eq!(table.verify(&proof), Err(AuthError::BadSignature));
    }

    #[test]
    fn unknown_and_expired_nonces_are_stale() {
        let (mut rng, reader, _) = setup();
        let table = NonceTable::with_ttl(SERVICE, Duration::from_millis(20));
        let proof = AuthProof::sign(&reader, &SERVICE, Nonce([7; NONCE_LEN]));
        assert_eq!(table.verify(&proof), Err(AuthError::StaleChallenge));
        let nonce = table.issue(&mut rng).nonce;
        std::thread::sleep(Duration::from_millis(40));
        assert_eq!(table.verify(&AuthProof::sign(&reader, &SERVICE, nonce)), Err(AuthError::StaleChallenge));
        table.issue(&mut rng);
        assert_eq!(table.outstanding(), 1);
    }
}
