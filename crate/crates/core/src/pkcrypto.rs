//! RSA identities, signatures and sealed envelopes.
//!
//! Public keys are canonically encoded as PKCS#1 `RSAPublicKey` DER. An
//! account address is the last 20 bytes of SHA-256 over that encoding.
//!
//! Envelopes wrap a fresh 32-byte key with RSA-OAEP (SHA-256) and encrypt the
//! body with ChaCha20-Poly1305, so blobs of any length can be sealed:
//! `"CKE1" bytes:wrapped_key bytes:nonce bytes:ciphertext`, with the wrapped
//! key as associated data.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use rand::{CryptoRng, RngCore};
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey, LineEnding};
use rsa::{Oaep, Pkcs1v15Sign, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};

/// Modulus size for account keys.
pub const KEY_BITS: usize = 2048;

#[derive(Debug, Error)]
pub enum PkError {
    #[error("malformed key: {0}")]
    BadKey(String),
    #[error("malformed address {0:?}")]
    BadAddress(String),
    #[error("envelope cannot be opened with this key")]
    OpenFailed,
    #[error("malformed envelope: {0}")]
    Malformed(#[from] CodecError),
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(RsaPublicKey);

impl PublicKey {
    pub fn to_der(&self) -> Vec<u8> {
        self.0.to_pkcs1_der().expect("RSA public key encodes").as_bytes().to_vec()
    }

    pub fn from_der(der: &[u8]) -> Result<Self, PkError> {
        RsaPublicKey::from_pkcs1_der(der).map(Self).map_err(|e| PkError::BadKey(e.to_string()))
    }

    pub fn address(&self) -> AccountAddress {
        derive_address(self)
    }

    pub fn verify(&self, msg: &[u8], signature: &[u8]) -> bool {
        self.0.verify(Pkcs1v15Sign::new::<Sha256>(), &Sha256::digest(msg), signature).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.address())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(self.to_der()))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let der = B64.decode(text).map_err(serde::de::Error::custom)?;
        PublicKey::from_der(&der).map_err(serde::de::Error::custom)
    }
}

/// An RSA account key. The private half is only ever written out as PKCS#8 PEM by its owner.
#[derive(Clone)]
pub struct KeyPair {
    private: RsaPrivateKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::generate_with_bits(rng, KEY_BITS)
    }

    /// Smaller moduli are only for tests that need many throwaway identities.
    pub fn generate_with_bits<R: RngCore + CryptoRng>(rng: &mut R, bits: usize) -> Self {
        let private = RsaPrivateKey::new(rng, bits).expect("RSA key generation");
        Self::from_private(private)
    }

    fn from_private(private: RsaPrivateKey) -> Self {
        let public = PublicKey(private.to_public_key());
        Self { private, public }
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn address(&self) -> AccountAddress {
        self.public.address()
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        self.private.sign(Pkcs1v15Sign::new::<Sha256>(), &Sha256::digest(msg)).expect("signing with a valid key")
    }

    pub fn open(&self, envelope: &[u8]) -> Result<Vec<u8>, PkError> {
        let mut r = Reader::new(envelope);
        r.expect_tag(b"CKE1", "envelope")?;
        let wrapped = r.bytes()?;
        let nonce: [u8; 12] = r.array()?;
        let body = r.bytes()?;
        r.finish()?;
        let key = self.private.decrypt(Oaep::new::<Sha256>(), wrapped).map_err(|_| PkError::OpenFailed)?;
        let key: [u8; 32] = key.try_into().map_err(|_| PkError::OpenFailed)?;
        ChaCha20Poly1305::new(&key.into())
            .decrypt(&nonce.into(), Payload { msg: body, aad: wrapped })
            .map_err(|_| PkError::OpenFailed)
    }

    pub fn to_pem(&self) -> String {
        self.private.to_pkcs8_pem(LineEnding::LF).expect("RSA private key encodes").to_string()
    }

    pub fn from_pem(pem: &str) -> Result<Self, PkError> {
        RsaPrivateKey::from_pkcs8_pem(pem).map(Self::from_private).map_err(|e| PkError::BadKey(e.to_string()))
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.address())
    }
}

/// Seals `blob` so that only the holder of the private half of `to` can read it.
pub fn seal_to<R: RngCore + CryptoRng>(to: &PublicKey, blob: &[u8], rng: &mut R) -> Vec<u8> {
    let mut key = [0u8; 32];
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut key);
    rng.fill_bytes(&mut nonce);
    let wrapped = to.0.encrypt(rng, Oaep::new::<Sha256>(), &key).expect("32 bytes fit under OAEP");
    let body = ChaCha20Poly1305::new(&key.into())
        .encrypt(&nonce.into(), Payload { msg: blob, aad: &wrapped })
        .expect("payload within AEAD limits");
    Writer::new().tag(b"CKE1").bytes(&wrapped).bytes(&nonce).bytes(&body).finish()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountAddress(pub [u8; 20]);

pub fn derive_address(key: &PublicKey) -> AccountAddress {
    let digest = Sha256::digest(key.to_der());
    AccountAddress(digest[12..].try_into().unwrap())
}

impl fmt::Display for AccountAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for AccountAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for AccountAddress {
    type Err = PkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PkError::BadAddress(s.to_string());
        let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).ok_or_else(bad)?;
        let raw = hex::decode(digits).map_err(|_| bad())?;
        raw.try_into().map(AccountAddress).map_err(|_| bad())
    }
}

impl Serialize for AccountAddress {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccountAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;
    use std::sync::OnceLock;

    fn keys() -> &'static [KeyPair; 2] {
        static KEYS: OnceLock<[KeyPair; 2]> = OnceLock::new();
        KEYS.get_or_init(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            [KeyPair::generate(&mut rng), KeyPair::generate(&mut rng)]
        })
    }

    #[test]
    fn address_is_deterministic_and_renders_as_42_hex_chars() {
        let k = &keys()[0];
        let a = k.address();
        assert_eq!(a, derive_address(&PublicKey::from_der(&k.public().to_der()).unwrap()));
        let text = a.to_string();
        assert_eq!(text.len(), 42);
        assert!(text.starts_with("0x"));
        assert_eq!(text.to_uppercase().replace("0X", "0x").parse::<AccountAddress>().unwrap(), a);
        assert!("0x1234".parse::<AccountAddress>().is_err());
        assert!(text[2..].parse::<AccountAddress>().is_err());
    }

    #[test]
    fn address_is_tail_of_sha256_over_der() {
        let k = &keys()[0];
        let digest = Sha256::digest(k.public().to_der());
        assert_eq!(hex::encode(k.address().0), hex::encode(&digest[12..32]));
    }

    #[test]
    fn modulus_is_2048_bits() {
        use rsa::traits::PublicKeyParts;
        assert_eq!(keys()[0].public().0.n().bits(), 2048);
    }

    #[test]
    fn signature_bit_flips_fail() {
        let [a, b] = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        let sig = a.sign(&nonce);
        assert!(a.public().verify(&nonce, &sig));
        assert!(!b.public().verify(&nonce, &sig));
        for bit in 0..256 {
            let mut m = nonce;
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!a.public().verify(&m, &sig));
        }
        for bit in (0..sig.len() * 8).step_by(13) {
            let mut s = sig.clone();
            s[bit / 8] ^= 1 << (bit % 8);
            assert!(!a.public().verify(&nonce, &s));
        }
    }

    #[test]
    fn envelope_roundtrips_and_needs_the_right_key() {
        let [a, b] = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut blob = vec![0u8; 4096];
        rng.fill_bytes(&mut blob);
        let env = seal_to(a.public(), &blob, &mut rng);
        assert_eq!(a.open(&env).unwrap(), blob);
        assert!(matches!(b.open(&env), Err(PkError::OpenFailed)));
        let mut tampered = env.clone();
        *tampered.last_mut().unwrap() ^= 1;
        assert!(a.open(&tampered).is_err());
        assert_eq!(a.open(&seal_to(a.public(), b"", &mut rng)).unwrap(), b"");
    }

    #[test]
    fn pem_and_serde_roundtrip() {
        let k = &keys()[0];
        let back = KeyPair::from_pem(&k.to_pem()).unwrap();
        assert_eq!(back.public(), k.public());
        let json = serde_json::to_string(&(k.address(), k.public())).unwrap();
        let (addr, pk): (AccountAddress, PublicKey) = serde_json::from_str(&json).unwrap();
        assert_eq!((addr, &pk), (k.address(), k.public()));
    }

    #[test]
    fn fresh_keypairs_have_distinct_addresses() {
        // Derivation does not depend on modulus size, so small keys keep this fast.
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let addrs: HashSet<_> = (0..200).map(|_| KeyPair::generate_with_bits(&mut rng, 512).address()).collect();
        assert_eq!(addrs.len(), 200);
    }
}
