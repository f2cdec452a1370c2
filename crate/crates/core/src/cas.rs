//! Content-addressed storage and the locator codecs used by the registry.
//!
//! A locator is the base-58 encoding of the multihash `0x12 0x20 || SHA-256(content)`,
//! which always renders as 46 characters starting with `Qm`. For the registry it is
//! split into two 32-byte words: the digest, and the two prefix bytes zero-padded.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

const MULTIHASH_PREFIX: [u8; 2] = [0x12, 0x20];
pub const LOCATOR_LEN: usize = 46;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("malformed locator {0:?}")]
    BadLocator(String),
    #[error("word pair is not a sha2-256 multihash")]
    BadWords,
    #[error("no content stored under {0}")]
    NotFound(Locator),
    #[error("stored content for {0} does not match its digest")]
    DigestMismatch(Locator),
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Locator {
    digest: [u8; 32],
}

impl Locator {
    pub fn for_content(content: &[u8]) -> Self {
        Self { digest: Sha256::digest(content).into() }
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn to_words(&self) -> WordPair {
        let mut word2 = [0u8; 32];
        word2[..2].copy_from_slice(&MULTIHASH_PREFIX);
        WordPair { word1: self.digest, word2 }
    }

    pub fn from_words(pair: &WordPair) -> Result<Self, CasError> {
        if pair.word2[..2] != MULTIHASH_PREFIX || pair.word2[2..].iter().any(|b| *b != 0) {
            return Err(CasError::BadWords);
        }
        Ok(Self { digest: pair.word1 })
    }
}

impl fmt::Display for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut raw = Vec::with_capacity(34);
        raw.extend_from_slice(&MULTIHASH_PREFIX);
        raw.extend_from_slice(&self.digest);
        f.write_str(&bs58::encode(raw).into_string())
    }
}

impl fmt::Debug for Locator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Locator({self})")
    }
}

impl FromStr for Locator {
    type Err = CasError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CasError::BadLocator(s.to_string());
        if s.len() != LOCATOR_LEN {
            return Err(bad());
        }
        let raw = bs58::decode(s).into_vec().map_err(|_| bad())?;
        if raw.len() != 34 || raw[..2] != MULTIHASH_PREFIX {
            return Err(bad());
        }
        Ok(Self { digest: raw[2..].try_into().unwrap() })
    }
}

impl Serialize for Locator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Locator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A locator as two 32-byte registry words, hex-encoded in JSON.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    #[serde(with = "hex::serde")]
    pub word1: [u8; 32],
    #[serde(with = "hex::serde")]
    pub word2: [u8; 32],
}

pub trait ContentStore: Send + Sync {
    fn put(&self, content: &[u8]) -> Result<Locator, CasError>;
    fn get(&self, loc: &Locator) -> Result<Vec<u8>, CasError>;
}

/// One file per locator under a root directory.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CasError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, loc: &Locator) -> PathBuf {
        self.root.join(loc.to_string())
    }
}

impl ContentStore for FileStore {
    fn put(&self, content: &[u8]) -> Result<Locator, CasError> {
        let loc = Locator::for_content(content);
        let path = self.path_of(&loc);
        if path.exists() {
            return Ok(loc);
        }
        // Write under a unique name then rename, so concurrent writers of the
        // same content never expose a partial file.
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        tmp.write_all(content)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(loc)
    }

    fn get(&self, loc: &Locator) -> Result<Vec<u8>, CasError> {
        let content = match fs::read(self.path_of(loc)) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(CasError::NotFound(*loc)),
            Err(e) => return Err(e.into()),
        };
        if Locator::for_content(&content) != *loc {
            return Err(CasError::DigestMismatch(*loc));
        }
        Ok(content)
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    blobs: RwLock<HashMap<Locator, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ContentStore for MemoryStore {
    fn put(&self, content: &[u8]) -> Result<Locator, CasError> {
        let loc = Locator::for_content(content);
        self.blobs.write().unwrap().entry(loc).or_insert_with(|| content.to_vec());
        Ok(loc)
    }

    fn get(&self, loc: &Locator) -> Result<Vec<u8>, CasError> {
        self.blobs.read().unwrap().get(loc).cloned().ok_or(CasError::NotFound(*loc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Computed beforehand with a standalone base-58 encoder over 0x12 0x20 || sha256(content).
    const EMPTY: &str = "QmdfTbBqBPQ7VNxZEYEj14VmRuZBkqFbiwReogJgS1zR1n";
    const HELLO_WORLD: &str = "QmaozNR7DZHQK1ZcU9p7QdrshMvXqWK6gpu5rmrkPdT3L4";

    #[test]
    fn locators_match_reference_values() {
        assert_eq!(Locator::for_content(b"").to_string(), EMPTY);
        assert_eq!(Locator::for_content(b"hello world").to_string(), HELLO_WORLD);
        assert_eq!(EMPTY.parse::<Locator>().unwrap(), Locator::for_content(b""));
    }

    #[test]
    fn file_store_roundtrip_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let a = store.put(b"bill of materials").unwrap();
        assert_eq!(store.put(b"bill of materials").unwrap(), a);
        assert_eq!(store.get(&a).unwrap(), b"bill of materials");
        assert_eq!(store.put(b"").unwrap().to_string(), EMPTY);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn unknown_locator_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(matches!(store.get(&Locator::for_content(b"x")), Err(CasError::NotFound(_))));
        assert!(matches!(MemoryStore::new().get(&Locator::for_content(b"x")), Err(CasError::NotFound(_))));
    }

    #[test]
    fn corrupted_file_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let loc = store.put(b"purchase order").unwrap();
        fs::write(store.path_of(&loc), b"purchase 0rder").unwrap();
        assert!(matches!(store.get(&loc), Err(CasError::DigestMismatch(_))));
    }

    #[test]
    fn words_reject_bad_padding() {
        let loc = Locator::for_content(b"x");
        let words = loc.to_words();
        assert_eq!(&words.word1, loc.digest());
        assert_eq!(words.word2[..2], [0x12, 0x20]);
        let mut bad = words;
        bad.word2[31] = 1;
        assert!(matches!(Locator::from_words(&bad), Err(CasError::BadWords)));
        let mut bad = words;
        bad.word2[0] = 0x13;
        assert!(Locator::from_words(&bad).is_err());
    }

    #[test]
    fn malformed_locators_are_rejected() {
        for s in ["", "Qm", "0OIl", &EMPTY[..45], &format!("{EMPTY}1")] {
            assert!(s.parse::<Locator>().is_err(), "{s}");
        }
        // 46 valid base-58 characters that do not decode to a sha2-256 multihash.
        assert!("zzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzzz".parse::<Locator>().is_err());
    }

    proptest! {
        #[test]
        fn locator_shape_and_codecs(content in proptest::collection::vec(any::<u8>(), 0..512)) {
            let loc = Locator::for_content(&content);
            let text = loc.to_string();
            prop_assert_eq!(text.len(), LOCATOR_LEN);
            prop_assert!(text.starts_with("Qm"));
            prop_assert_eq!(text.parse::<Locator>().unwrap(), loc);
            prop_assert_eq!(Locator::from_words(&loc.to_words()).unwrap(), loc);
        }

        #[test]
        fn memory_store_is_a_bijection(blobs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 1..16)) {
            let store = MemoryStore::new();
            let locs: Vec<_> = blobs.iter().map(|b| store.put(b).unwrap()).collect();
            for (b, l) in blobs.iter().zip(&locs) {
                prop_assert_eq!(&store.get(l).unwrap(), b);
            }
        }
    }
}
