//! On-disk layout of one installation: service identities, accounts, the
//! attribute dictionary, the content store and the registry journal.
//!
//! ```text
//! <home>/dictionary.tsv          attribute names and ids
//! <home>/ledger.jsonl            registry journal
//! <home>/cas/                    content store, one file per locator
//! <home>/keys/{certifier,sdm,skm}.pem
//! <home>/keys/{sdm,skm}.noise.json
//! <home>/accounts/<name>.pem     data owner and reader accounts
//! ```
//!
//! Everything a manager service needs is reloaded from here, so a service
//! can be restarted at any time without losing anything.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::cas::{CasError, FileStore};
use crate::ledger::{LedgerError, Registry, Roles};
use crate::pkcrypto::{AccountAddress, KeyPair, PkError};
use crate::policy::{AttributeDictionary, DictionaryError};
use crate::rng::SharedRng;
use crate::sdm::SecureDataManager;
use crate::skm::SecureKeyManager;
use crate::wire::NoiseKeys;

#[derive(Debug, Error)]
pub enum DeploymentError {
    #[error("{0} is already initialised")]
    AlreadyInitialised(PathBuf),
    #[error("{0} is not initialised (run `init` first)")]
    NotInitialised(PathBuf),
    #[error("no account named {0:?}")]
    UnknownAccount(String),
    #[error("account {0:?} already exists")]
    AccountExists(String),
    #[error("account names may only contain letters, digits, '-' and '_': {0:?}")]
    BadAccountName(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Key(#[from] PkError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Storage(#[from] CasError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> DeploymentError + '_ {
    move |source| DeploymentError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceRole {
    Sdm,
    Skm,
}

impl ServiceRole {
    fn stem(self) -> &'static str {
        match self {
            ServiceRole::Sdm => "sdm",
            ServiceRole::Skm => "skm",
        }
    }
}

pub struct Deployment {
    home: PathBuf,
    certifier: KeyPair,
    sdm: KeyPair,
    skm: KeyPair,
    dictionary: AttributeDictionary,
    store: Arc<FileStore>,
    registry: Arc<Registry>,
}

impl std::fmt::Debug for Deployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deployment").field("home", &self.home).finish_non_exhaustive()
    }
}

impl Deployment {
    pub fn ledger_path(home: &Path) -> PathBuf {
        home.join("ledger.jsonl")
    }

    /// Creates service identities, deploys the registry and writes the dictionary.
    pub fn init<R: RngCore + CryptoRng>(
        home: impl Into<PathBuf>,
        dictionary: AttributeDictionary,
        rng: &mut R,
    ) -> Result<Self, DeploymentError> {
        let home = home.into();
        if Self::ledger_path(&home).exists() {
            return Err(DeploymentError::AlreadyInitialised(home));
        }
        for dir in [home.join("keys"), home.join("accounts")] {
            fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        }
        let (certifier, sdm, skm) = (KeyPair::generate(rng), KeyPair::generate(rng), KeyPair::generate(rng));
        for (name, keys) in [("certifier", &certifier), ("sdm", &sdm), ("skm", &skm)] {
            write_private(&home.join("keys").join(format!("{name}.pem")), &keys.to_pem())?;
        }
        for role in [ServiceRole::Sdm, ServiceRole::Skm] {
            let path = noise_path(&home, role);
            NoiseKeys::generate().save(&path).map_err(io_at(&path))?;
        }
        let dict_path = home.join("dictionary.tsv");
        fs::write(&dict_path, dictionary.to_text()).map_err(io_at(&dict_path))?;
        let roles = Roles { certifier: certifier.address(), sdm: sdm.address(), skm: skm.address() };
        let registry = Registry::deploy(Self::ledger_path(&home), roles)?;
        let store = FileStore::open(home.join("cas"))?;
        Ok(Self {
            home,
            certifier,
            sdm,
            skm,
            dictionary,
            store: Arc::new(store),
            registry: Arc::new(registry),
        })
    }

    /// Loads an initialised home, replaying the registry journal.
    pub fn open(home: impl Into<PathBuf>) -> Result<Self, DeploymentError> {
        let home = home.into();
        if !Self::ledger_path(&home).exists() {
            return Err(DeploymentError::NotInitialised(home));
        }
        let load = |name: &str| read_key(&home.join("keys").join(format!("{name}.pem")));
        let (certifier, sdm, skm) = (load("certifier")?, load("sdm")?, load("skm")?);
        let dictionary = AttributeDictionary::load(home.join("dictionary.tsv"))?;
        let registry = Registry::open(Self::ledger_path(&home))?;
        let store = FileStore::open(home.join("cas"))?;
        Ok(Self { home, certifier, sdm, skm, dictionary, store: Arc::new(store), registry: Arc::new(registry) })
    }

    pub fn home(&self) -> &Path {
        &self.home
    }

    pub fn certifier(&self) -> &KeyPair {
        &self.certifier
    }

    pub fn service_address(&self, role: ServiceRole) -> AccountAddress {
        match role {
            ServiceRole::Sdm => self.sdm.address(),
            ServiceRole::Skm => self.skm.address(),
        }
    }

    pub fn dictionary(&self) -> &AttributeDictionary {
        &self.dictionary
    }

    pub fn store(&self) -> &Arc<FileStore> {
        &self.store
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn noise_keys(&self, role: ServiceRole) -> Result<NoiseKeys, DeploymentError> {
        let path = noise_path(&self.home, role);
        NoiseKeys::load(&path).map_err(io_at(&path))
    }

    pub fn data_manager(&self, rng: SharedRng) -> SecureDataManager {
        SecureDataManager::new(
            self.sdm.clone(),
            self.skm.public().clone(),
            self.dictionary.clone(),
            self.store.clone(),
            self.registry.clone(),
            rng,
        )
    }

    pub fn key_manager(&self, rng: SharedRng) -> SecureKeyManager {
        SecureKeyManager::new(self.skm.clone(), self.store.clone(), self.registry.clone(), rng)
    }

    fn account_path(&self, name: &str) -> Result<PathBuf, DeploymentError> {
        let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(DeploymentError::BadAccountName(name.to_string()));
        }
        Ok(self.home.join("accounts").join(format!("{name}.pem")))
    }

    pub fn create_account<R: RngCore + CryptoRng>(&self, name: &str, rng: &mut R) -> Result<KeyPair, DeploymentError> {
        let path = self.account_path(name)?;
        if path.exists() {
            return Err(DeploymentError::AccountExists(name.to_string()));
        }
        let keys = KeyPair::generate(rng);
        write_private(&path, &keys.to_pem())?;
        Ok(keys)
    }

    pub fn account(&self, name: &str) -> Result<KeyPair, DeploymentError> {
        let path = self.account_path(name)?;
        if !path.exists() {
            return Err(DeploymentError::UnknownAccount(name.to_string()));
        }
        read_key(&path)
    }

    /// Account names in alphabetical order with their addresses.
    pub fn accounts(&self) -> Result<Vec<(String, AccountAddress)>, DeploymentError> {
        let dir = self.home.join("accounts");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
            let path = entry.map_err(io_at(&dir))?.path();
            if let (Some(stem), Some("pem")) = (path.file_stem().and_then(|s| s.to_str()), path.extension().and_then(|s| s.to_str())) {
                out.push((stem.to_string(), read_key(&path)?.address()));
            }
        }
        out.sort();
        Ok(out)
    }

    /// Resolves an account name or a literal `0x` address.
    pub fn resolve_address(&self, name_or_address: &str) -> Result<AccountAddress, DeploymentError> {
        if name_or_address.starts_with("0x") || name_or_address.starts_with("0X") {
            return Ok(name_or_address.parse()?);
        }
        match name_or_address {
            "certifier" => Ok(self.certifier.address()),
            "sdm" => Ok(self.sdm.address()),
            "skm" => Ok(self.skm.address()),
            name => Ok(self.account(name)?.address()),
        }
    }
}

fn noise_path(home: &Path, role: ServiceRole) -> PathBuf {
    home.join("keys").join(format!("{}.noise.json", role.stem()))
}

fn read_key(path: &Path) -> Result<KeyPair, DeploymentError> {
    let pem = fs::read_to_string(path).map_err(io_at(path))?;
    Ok(KeyPair::from_pem(&pem)?)
}

fn write_private(path: &Path, contents: &str) -> Result<(), DeploymentError> {
    let mut options = fs::OpenOptions::new();
    options.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options.open(path).map_err(io_at(path))?;
    io::Write::write_all(&mut file, contents.as_bytes()).map_err(io_at(path))
}
