//! Emulated registry contract: reader attributes, message locators, write
//! authorisation and a gas model calibrated to measured transaction costs.
//!
//! Every successful mutation is appended to a JSONL journal before it is
//! applied, so replaying the journal reconstructs the state exactly. The
//! first journal line records the deployment (the three privileged addresses).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cas::WordPair;
use crate::pkcrypto::AccountAddress;

pub const SET_USER_INFO: &str = "setUserInfo";
pub const SET_IPFS_INFO: &str = "setIPFSInfo";

/// Gas used by `setUserInfo`; constant across every measured call.
pub const SET_USER_INFO_GAS: u64 = 40755;
/// Observed range of gas used by `setIPFSInfo`.
pub const SET_IPFS_INFO_GAS_RANGE: (f64, f64) = (67484.6, 67487.0);
/// Average gas prices in wei observed for each operation.
pub const SET_USER_INFO_GAS_PRICE: u64 = 1_370_810_611;
pub const SET_IPFS_INFO_GAS_PRICE: u64 = 1_399_400_015;
/// ETH/EUR exchange rate used for the reference cost figures.
pub const REFERENCE_ETH_EUR: f64 = 1746.35;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("{caller} is not authorised to call {op}")]
    Unauthorized { op: &'static str, caller: AccountAddress },
    #[error("message {0} is already registered")]
    DuplicateMessage(u64),
    #[error("message {0} is not registered")]
    UnknownMessage(u64),
    #[error("journal {path}: {source}")]
    Journal { path: PathBuf, source: io::Error },
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasReceipt {
    pub op: String,
    pub gas_used: u64,
    pub gas_price_wei: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl GasReceipt {
    pub fn cost_eur(&self, eth_eur: f64) -> f64 {
        cost_eur(self.gas_used as f64, self.gas_price_wei as f64, eth_eur)
    }
}

/// `gas * price * 1e-18 * rate`: wei to ether, then ether to euro.
pub fn cost_eur(gas_used: f64, gas_price_wei: f64, eth_eur: f64) -> f64 {
    gas_used * gas_price_wei * 1e-18 * eth_eur
}

/// Gas charged for binding `message_id`: a uniform draw over the observed
/// range, rounded, with the draw derived from the id so replays agree.
pub fn ipfs_info_gas(message_id: u64) -> u64 {
    let digest = Sha256::digest(message_id.to_be_bytes());
    let unit = u64::from_be_bytes(digest[..8].try_into().unwrap()) as f64 / (u64::MAX as f64 + 1.0);
    let (lo, hi) = SET_IPFS_INFO_GAS_RANGE;
    (lo + unit * (hi - lo)).round() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub certifier: AccountAddress,
    pub sdm: AccountAddress,
    pub skm: AccountAddress,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryState {
    pub roles: Roles,
    pub readers: BTreeMap<AccountAddress, Vec<u64>>,
    pub messages: BTreeMap<u64, WordPair>,
    pub receipts: Vec<GasReceipt>,
}

impl RegistryState {
    fn new(roles: Roles) -> Self {
        Self { roles, readers: BTreeMap::new(), messages: BTreeMap::new(), receipts: Vec::new() }
    }
}

/// One journal line.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    op: String,
    caller: Option<AccountAddress>,
    args: serde_json::Value,
    receipt: Option<GasReceipt>,
}

#[derive(Deserialize)]
struct UserInfoArgs {
    reader: AccountAddress,
    attributes: Vec<u64>,
}

#[derive(Deserialize)]
struct IpfsInfoArgs {
    message_id: u64,
    words: WordPair,
}

type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

/// The journal file plus how far into it this process has applied.
struct Journal {
    path: PathBuf,
    file: File,
    offset: u64,
    lines: usize,
}

/// The registry.
///
/// Mutations are serialised; reads see a consistent snapshot. A journaled
/// registry takes an advisory lock on its file for every operation and first
/// applies whatever other processes appended, so several processes can share
/// one journal.
pub struct Registry {
    state: RwLock<RegistryState>,
    journal: Option<Mutex<Journal>>,
    clock: Clock,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("state", &*self.state.read().unwrap()).finish_non_exhaustive()
    }
}

fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

impl Registry {
    pub fn in_memory(roles: Roles) -> Self {
        Self { state: RwLock::new(RegistryState::new(roles)), journal: None, clock: system_clock() }
    }

    /// Deploys a fresh registry journaled at `path`, which must not exist yet.
    pub fn deploy(path: impl AsRef<Path>, roles: Roles) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| LedgerError::Journal { path: path.clone(), source };
        let file = OpenOptions::new().create_new(true).read(true).append(true).open(&path).map_err(io_err)?;
        let mut journal = Journal { path: path.clone(), file, offset: 0, lines: 0 };
        journal.file.lock().map_err(io_err)?;
        let deploy = Entry { op: "deploy".into(), caller: None, args: json!(roles), receipt: None };
        let written = journal.append(&deploy);
        let _ = journal.file.unlock();
        written?;
        Ok(Self {
            state: RwLock::new(RegistryState::new(roles)),
            journal: Some(Mutex::new(journal)),
            clock: system_clock(),
        })
    }

    /// Reopens a journaled registry, replaying its history.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LedgerError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|source| LedgerError::Journal { path: path.clone(), source })?;
        let mut journal = Journal { path, file, offset: 0, lines: 0 };
        let mut state = None;
        journal.with_lock(false, |j| j.catch_up(&mut state))?;
        let state = state.ok_or(LedgerError::Corrupt { line: 0, message: "empty journal".into() })?;
        Ok(Self { state: RwLock::new(state), journal: Some(Mutex::new(journal)), clock: system_clock() })
    }

    /// Replaces the receipt timestamp source.
    pub fn with_clock(mut self, clock: impl Fn() -> u64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        self.journal.as_ref().map(|j| j.lock().unwrap().path.clone())
    }

    /// Applies journal lines appended by other processes.
    fn refresh(&self) -> Result<(), LedgerError> {
        let Some(journal) = &self.journal else { return Ok(()) };
        let mut journal = journal.lock().unwrap();
        journal.with_lock(false, |j| {
            let mut state = Some(self.state.write().unwrap().clone());
            j.catch_up(&mut state)?;
            *self.state.write().unwrap() = state.unwrap();
            Ok(())
        })
    }

    /// Runs a mutation against up-to-date state, journaling the entry it returns before applying it.
    fn mutate(
        &self,
        f: impl FnOnce(&RegistryState) -> Result<Entry, LedgerError>,
    ) -> Result<GasReceipt, LedgerError> {
        let commit = |state: &mut RegistryState, journal: Option<&mut Journal>| {
            let entry = f(state)?;
            if let Some(j) = journal {
                j.append(&entry)?;
            }
            apply(state, entry, 0)
        };
        match &self.journal {
            None => commit(&mut self.state.write().unwrap(), None),
            Some(journal) => {
                let mut journal = journal.lock().unwrap();
                journal.with_lock(true, |j| {
                    let mut state = self.state.write().unwrap();
                    let mut fresh = Some(state.clone());
                    j.catch_up(&mut fresh)?;
                    *state = fresh.unwrap();
                    commit(&mut state, Some(j))
                })
            }
        }
    }

    pub fn snapshot(&self) -> Result<RegistryState, LedgerError> {
        self.refresh()?;
        Ok(self.state.read().unwrap().clone())
    }

    pub fn roles(&self) -> Roles {
        self.state.read().unwrap().roles
    }

    /// Replaces the attribute list of `reader`. Certifier only.
    pub fn set_user_info(
        &self,
        caller: AccountAddress,
        reader: AccountAddress,
        attributes: Vec<u64>,
    ) -> Result<GasReceipt, LedgerError> {
        self.mutate(|state| {
            if caller != state.roles.certifier {
                return Err(LedgerError::Unauthorized { op: SET_USER_INFO, caller });
            }
            Ok(Entry {
                op: SET_USER_INFO.into(),
                caller: Some(caller),
                args: json!({ "reader": reader, "attributes": attributes }),
                receipt: Some(self.receipt(SET_USER_INFO, SET_USER_INFO_GAS, SET_USER_INFO_GAS_PRICE)),
            })
        })
    }

    /// The last attribute list written for `reader`, or empty.
    pub fn get_user_info(&self, reader: &AccountAddress) -> Result<Vec<u64>, LedgerError> {
        self.refresh()?;
        Ok(self.state.read().unwrap().readers.get(reader).cloned().unwrap_or_default())
    }

    /// Binds `message_id` to a locator. SDM only; bindings are write-once.
    pub fn set_ipfs_info(&self, caller: AccountAddress, message_id: u64, words: WordPair) -> Result<GasReceipt, LedgerError> {
        self.mutate(|state| {
            if caller != state.roles.sdm {
                return Err(LedgerError::Unauthorized { op: SET_IPFS_INFO, caller });
            }
            if state.messages.contains_key(&message_id) {
                return Err(LedgerError::DuplicateMessage(message_id));
            }
            Ok(Entry {
                op: SET_IPFS_INFO.into(),
                caller: Some(caller),
                args: json!({ "message_id": message_id, "words": words }),
                receipt: Some(self.receipt(SET_IPFS_INFO, ipfs_info_gas(message_id), SET_IPFS_INFO_GAS_PRICE)),
            })
        })
    }

    pub fn get_ipfs_info(&self, message_id: u64) -> Result<WordPair, LedgerError> {
        self.refresh()?;
        self.state.read().unwrap().messages.get(&message_id).copied().ok_or(LedgerError::UnknownMessage(message_id))
    }

    pub fn has_message(&self, message_id: u64) -> Result<bool, LedgerError> {
        self.refresh()?;
        Ok(self.state.read().unwrap().messages.contains_key(&message_id))
    }

    fn receipt(&self, op: &str, gas_used: u64, gas_price_wei: u64) -> GasReceipt {
        GasReceipt { op: op.into(), gas_used, gas_price_wei, timestamp: (self.clock)() }
    }
}

impl Journal {
    fn io_err(&self, source: io::Error) -> LedgerError {
        LedgerError::Journal { path: self.path.clone(), source }
    }

    fn with_lock<T>(&mut self, exclusive: bool, f: impl FnOnce(&mut Self) -> Result<T, LedgerError>) -> Result<T, LedgerError> {
        let locked = if exclusive { self.file.lock() } else { self.file.lock_shared() };
        locked.map_err(|e| self.io_err(e))?;
        let out = f(self);
        let _ = self.file.unlock();
        out
    }

    /// Applies complete lines past `offset`. A trailing line without a newline is a write in progress and is left for later.
    fn catch_up(&mut self, state: &mut Option<RegistryState>) -> Result<(), LedgerError> {
        self.file.seek(SeekFrom::Start(self.offset)).map_err(|e| self.io_err(e))?;
        let mut reader = BufReader::new(&self.file);
        let mut line = String::new();
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| LedgerError::Journal { path: self.path.clone(), source: e })?;
            if n == 0 || !line.ends_with('\n') {
                break;
            }
            self.lines += 1;
            apply_line(state, &line, self.lines)?;
            self.offset += n as u64;
        }
        Ok(())
    }

    fn append(&mut self, entry: &Entry) -> Result<(), LedgerError> {
        let mut line = serde_json::to_vec(entry).expect("journal entries serialise");
        line.push(b'\n');
        self.file.write_all(&line).and_then(|_| self.file.sync_data()).map_err(|e| self.io_err(e))?;
        self.offset += line.len() as u64;
        self.lines += 1;
        Ok(())
    }
}

fn corrupt(line: usize, message: impl ToString) -> LedgerError {
    LedgerError::Corrupt { line, message: message.to_string() }
}

fn apply_line(state: &mut Option<RegistryState>, line: &str, line_no: usize) -> Result<(), LedgerError> {
    if line.trim().is_empty() {
        return Ok(());
    }
    let entry: Entry = serde_json::from_str(line).map_err(|e| corrupt(line_no, e))?;
    match state {
        Some(st) => apply(st, entry, line_no).map(drop),
        None if entry.op == "deploy" => {
            let roles: Roles = serde_json::from_value(entry.args).map_err(|e| corrupt(line_no, e))?;
            *state = Some(RegistryState::new(roles));
            Ok(())
        }
        None => Err(corrupt(line_no, "journal must start with a deploy record")),
    }
}

/// Applies one mutation, re-checking authorisation so a hand-edited journal cannot smuggle writes in.
fn apply(st: &mut RegistryState, entry: Entry, line_no: usize) -> Result<GasReceipt, LedgerError> {
    let receipt = entry.receipt.ok_or_else(|| corrupt(line_no, "missing receipt"))?;
    match entry.op.as_str() {
        SET_USER_INFO => {
            if entry.caller != Some(st.roles.certifier) {
                return Err(corrupt(line_no, "setUserInfo from a non-certifier"));
            }
            let args: UserInfoArgs = serde_json::from_value(entry.args).map_err(|e| corrupt(line_no, e))?;
            st.readers.insert(args.reader, args.attributes);
        }
        SET_IPFS_INFO => {
            if entry.caller != Some(st.roles.sdm) {
                return Err(corrupt(line_no, "setIPFSInfo from a non-SDM caller"));
            }
            let args: IpfsInfoArgs = serde_json::from_value(entry.args).map_err(|e| corrupt(line_no, e))?;
            if st.messages.insert(args.message_id, args.words).is_some() {
                return Err(corrupt(line_no, format!("message {} bound twice", args.message_id)));
            }
        }
        other => return Err(corrupt(line_no, format!("unknown operation {other:?}"))),
    }
    st.receipts.push(receipt.clone());
    Ok(receipt)
}

/// Rebuilds the registry state recorded in a journal.
pub fn replay(path: impl AsRef<Path>) -> Result<RegistryState, LedgerError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LedgerError::Journal { path: path.to_path_buf(), source })?;
    let mut state = None;
    for (i, line) in text.lines().enumerate() {
        apply_line(&mut state, line, i + 1)?;
    }
    state.ok_or(corrupt(0, "empty journal"))
}
