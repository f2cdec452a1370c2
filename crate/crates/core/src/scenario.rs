//! Scripted end-to-end runs of the whole protocol.
//!
//! A scenario names an attribute dictionary, a roster of actors with their
//! attributes, and messages made of policy-guarded slices. Running it
//! certifies every actor, sends every message, then has every actor request
//! a key for and access every message. The report compares what each reader
//! actually recovered with what the policy evaluator says it should.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{check_slices, Actor};
use crate::cas::ContentStore;
use crate::deployment::{Deployment, DeploymentError, ServiceRole};
use crate::ledger::Registry;
use crate::pkcrypto::{AccountAddress, KeyPair};
use crate::policy::{eval_policy, parse_policy, AttributeDictionary, AttributeSet, PolicyExpr};
use crate::rng::SharedRng;
use crate::sdm::SecureDataManager;
use crate::service::{DataManager, KeyManager, ServiceError, SliceRequest};
use crate::skm::SecureKeyManager;
use crate::wire::{serve, RemoteService, ServerHandle};

/// The drone supply-chain scenario shipped with the crate.
pub const DRONE_SCENARIO_JSON: &str = include_str!("../scenarios/drone.json");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error(transparent)]
    Deployment(#[from] DeploymentError),
    #[error("host: {0}")]
    Host(String),
}

/// One slice as written in scenario and `owner send` input files.
///
/// Exactly one of `plaintext` (UTF-8) and `plaintext_b64` must be present.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plaintext: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plaintext_b64: Option<String>,
    pub policy: String,
    /// Free-form provenance remark, ignored by the protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SliceInput {
    pub fn bytes(&self) -> Result<Vec<u8>, String> {
        match (&self.plaintext, &self.plaintext_b64) {
            (Some(text), None) => Ok(text.as_bytes().to_vec()),
            (None, Some(b64)) => B64.decode(b64).map_err(|e| format!("plaintext_b64: {e}")),
            _ => Err("exactly one of plaintext and plaintext_b64 is required".into()),
        }
    }

    pub fn to_request(&self) -> Result<SliceRequest, String> {
        Ok(SliceRequest { plaintext: self.bytes()?, policy: self.policy.clone() })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub name: String,
    /// Attribute names from the dictionary or decimal literals such as case ids.
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSpec {
    pub name: String,
    pub sender: String,
    pub slices: Vec<SliceInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub dictionary: BTreeMap<String, u64>,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub messages: Vec<MessageSpec>,
}

/// What the policy evaluator says about one (reader, slice) pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expectation {
    pub reader: String,
    pub message: String,
    pub slice: usize,
    pub allowed: bool,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let load_err = |message: String| ScenarioError::Load { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    }

    pub fn drone() -> Self {
        serde_json::from_str(DRONE_SCENARIO_JSON).expect("shipped scenario parses")
    }

    pub fn attribute_dictionary(&self) -> Result<AttributeDictionary, ScenarioError> {
        self.dictionary.iter().try_fold(AttributeDictionary::new(), |d, (name, id)| {
            d.with(name, *id).map_err(|e| ScenarioError::Invalid(e.to_string()))
        })
    }

    fn attributes_of(&self, actor: &ActorSpec, dict: &AttributeDictionary) -> Result<AttributeSet, ScenarioError> {
        actor
            .attributes
            .iter()
            .map(|a| dict.resolve(a).ok_or_else(|| ScenarioError::Invalid(format!("actor {}: unknown attribute {a:?}", actor.name))))
            .collect()
    }

    fn policies(&self, dict: &AttributeDictionary) -> Result<Vec<Vec<PolicyExpr>>, ScenarioError> {
        self.messages
            .iter()
            .map(|m| {
                m.slices
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        parse_policy(&s.policy, dict).map_err(|e| ScenarioError::Invalid(format!("{} slice {}: {e}", m.name, i + 1)))
                    })
                    .collect()
            })
            .collect()
    }

    /// Checks names, senders, attributes, payloads and policies.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let dict = self.attribute_dictionary()?;
        let mut names = BTreeSet::new();
        for a in &self.actors {
            if !names.insert(a.name.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate actor {:?}", a.name)));
            }
            self.attributes_of(a, &dict)?;
        }
        let mut messages = BTreeSet::new();
        for m in &self.messages {
            if !messages.insert(m.name.as_str()) {
                return Err(ScenarioError::Invalid(format!("duplicate message {:?}", m.name)));
            }
            if !names.contains(m.sender.as_str()) {
                return Err(ScenarioError::Invalid(format!("message {}: unknown sender {:?}", m.name, m.sender)));
            }
            if m.slices.is_empty() {
                return Err(ScenarioError::Invalid(format!("message {} has no slices", m.name)));
            }
            for (i, s) in m.slices.iter().enumerate() {
                s.bytes().map_err(|e| ScenarioError::Invalid(format!("{} slice {}: {e}", m.name, i + 1)))?;
            }
        }
        self.policies(&dict)?;
        Ok(())
    }

    /// The access matrix implied by the policies, reader-major.
    pub fn expected(&self) -> Result<Vec<Expectation>, ScenarioError> {
        let dict = self.attribute_dictionary()?;
        let policies = self.policies(&dict)?;
        let mut out = Vec::new();
        for actor in &self.actors {
            let attrs = self.attributes_of(actor, &dict)?;
            for (m, ps) in self.messages.iter().zip(&policies) {
                for (i, p) in ps.iter().enumerate() {
                    out.push(Expectation {
                        reader: actor.name.clone(),
                        message: m.name.clone(),
                        slice: i,
                        allowed: eval_policy(p, &attrs),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// A point in the run between two protocol exchanges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Certify { actor: String },
    Send { message: String },
    RequestKey { reader: String, message: String },
    Access { reader: String, message: String },
}

impl std::fmt::Display for Step {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Step::Certify { actor } => write!(f, "certify {actor}"),
            Step::Send { message } => write!(f, "send {message}"),
            Step::RequestKey { reader, message } => write!(f, "{reader} requests key for {message}"),
            Step::Access { reader, message } => write!(f, "{reader} accesses {message}"),
        }
    }
}

/// Where the services, registry and store of a run live.
pub trait ScenarioHost {
    fn data_manager(&self) -> &dyn DataManager;
    fn key_manager(&self) -> &dyn KeyManager;
    fn registry(&self) -> &Registry;
    fn store(&self) -> &dyn ContentStore;
    fn certifier(&self) -> &KeyPair;
    fn service_address(&self, role: ServiceRole) -> AccountAddress;
    /// Called before every step; hosts may restart services here.
    fn before_step(&mut self, _step: &Step) -> Result<(), ScenarioError> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorEntry {
    pub name: String,
    pub address: AccountAddress,
    pub attributes: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEntry {
    pub name: String,
    pub sender: String,
    pub message_id: Option<u64>,
    pub slices: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub reader: String,
    pub message: String,
    pub slice: String,
    pub expected: bool,
    pub observed: bool,
    /// Salted-hash check of a returned slice.
    pub intact: Option<bool>,
    /// Whether a returned slice equals the scripted plaintext.
    pub faithful: Option<bool>,
}

impl Cell {
    pub fn is_mismatch(&self) -> bool {
        self.expected != self.observed || self.intact == Some(false) || self.faithful == Some(false)
    }
}

/// Outcome of a run. It never contains plaintext.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub actors: Vec<ActorEntry>,
    pub messages: Vec<MessageEntry>,
    pub cells: Vec<Cell>,
    pub errors: Vec<String>,
}

impl Report {
    pub fn mismatches(&self) -> Vec<&Cell> {
        self.cells.iter().filter(|c| c.is_mismatch()).collect()
    }

    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.mismatches().is_empty()
    }

    pub fn cell(&self, reader: &str, message: &str, slice: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.reader == reader && c.message == message && c.slice == slice)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {}", self.scenario);
        for a in &self.actors {
            let _ = writeln!(out, "  actor {:<22} {} attributes {:?}", a.name, a.address, a.attributes);
        }
        let verdict = |b: bool| if b { "allow" } else { "deny" };
        for m in &self.messages {
            let id = m.message_id.map_or_else(|| "not sent".to_string(), |id| id.to_string());
            let _ = writeln!(out, "message {} from {} ({id})", m.name, m.sender);
            let _ = writeln!(out, "  {:<22} {:<26} {:<8} {:<8} integrity", "reader", "slice", "expected", "observed");
            for c in self.cells.iter().filter(|c| c.message == m.name) {
                let integrity = match (c.intact, c.faithful) {
                    (Some(true), Some(true)) => "ok",
                    (None, _) => "-",
                    _ => "FAILED",
                };
                let flag = if c.is_mismatch() { "  <-- mismatch" } else { "" };
                let _ = writeln!(
                    out,
                    "  {:<22} {:<26} {:<8} {:<8} {integrity}{flag}",
                    c.reader,
                    c.slice,
                    verdict(c.expected),
                    verdict(c.observed)
                );
            }
        }
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        let _ = writeln!(
            out,
            "{} cells, {} mismatches, {} errors: {}",
            self.cells.len(),
            self.mismatches().len(),
            self.errors.len(),
            if self.passed() { "PASS" } else { "FAIL" }
        );
        out
    }
}

fn slice_label(m: &MessageSpec, i: usize) -> String {
    m.slices[i].label.clone().unwrap_or_else(|| format!("slice {}", i + 1))
}

/// Runs every protocol step of `scenario` on `host`. Actor keys come from `rng`.
pub fn run_scenario<R: RngCore + CryptoRng>(
    scenario: &Scenario,
    host: &mut dyn ScenarioHost,
    rng: &mut R,
) -> Result<Report, ScenarioError> {
    scenario.validate()?;
    let dict = scenario.attribute_dictionary()?;
    let expected = scenario.expected()?;
    let actors: Vec<Actor> = scenario.actors.iter().map(|a| Actor::new(&a.name, KeyPair::generate(rng))).collect();
    let mut report = Report { scenario: scenario.name.clone(), ..Report::default() };

    let certifier = Actor::new("certifier", host.certifier().clone());
    for (spec, actor) in scenario.actors.iter().zip(&actors) {
        let attributes: Vec<u64> = scenario.attributes_of(spec, &dict)?.into_iter().map(|a| a.0).collect();
        report.actors.push(ActorEntry { name: spec.name.clone(), address: actor.address(), attributes: attributes.clone() });
        if attributes.is_empty() {
            continue;
        }
        host.before_step(&Step::Certify { actor: spec.name.clone() })?;
        if let Err(e) = certifier.certify(host.registry(), &actor.address(), attributes) {
            report.errors.push(format!("certify {}: {e}", spec.name));
        }
    }

    let by_name = |name: &str| actors.iter().find(|a| a.name == name).expect("validated sender");
    let mut ids = Vec::with_capacity(scenario.messages.len());
    for m in &scenario.messages {
        host.before_step(&Step::Send { message: m.name.clone() })?;
        let requests: Vec<SliceRequest> = m.slices.iter().map(|s| s.to_request().expect("validated payload")).collect();
        let sdm = host.service_address(ServiceRole::Sdm);
        let id = match by_name(&m.sender).send(host.data_manager(), &sdm, &requests) {
            Ok(id) => Some(id),
            Err(e) => {
                report.errors.push(format!("send {}: {e}", m.name));
                None
            }
        };
        report.messages.push(MessageEntry {
            name: m.name.clone(),
            sender: m.sender.clone(),
            message_id: id,
            slices: (0..m.slices.len()).map(|i| slice_label(m, i)).collect(),
        });
        ids.push(id);
    }

    let skm = host.service_address(ServiceRole::Skm);
    for actor in &actors {
        for (m, id) in scenario.messages.iter().zip(&ids) {
            let mut observed: BTreeMap<usize, (bool, bool)> = BTreeMap::new();
            if let Some(id) = *id {
                host.before_step(&Step::RequestKey { reader: actor.name.clone(), message: m.name.clone() })?;
                match actor.request_key(host.key_manager(), &skm, id) {
                    Ok(key) => {
                        host.before_step(&Step::Access { reader: actor.name.clone(), message: m.name.clone() })?;
                        match actor.access(host.key_manager(), &skm, id, &key.sk) {
                            Ok(response) => match check_slices(host.store(), &key.locator, &response) {
                                Ok(checked) => {
                                    for c in checked {
                                        match c.index {
                                            Some(i) => {
                                                let faithful = m.slices[i].bytes().is_ok_and(|b| b == c.plaintext);
                                                observed.insert(i, (c.intact, faithful));
                                            }
                                            None => report.errors.push(format!(
                                                "{} on {}: unknown slice {} returned",
                                                actor.name, m.name, c.slice_id
                                            )),
                                        }
                                    }
                                }
                                Err(e) => report.errors.push(format!("{} checking {}: {e}", actor.name, m.name)),
                            },
                            Err(ServiceError::AccessDenied) => {}
                            Err(e) if e.kind() == crate::service::ErrorKind::Denied => {}
                            Err(e) => report.errors.push(format!("{} accessing {}: {e}", actor.name, m.name)),
                        }
                    }
                    Err(ServiceError::NoAttributes(_)) => {}
                    Err(e) if e.kind() == crate::service::ErrorKind::NotFound && actor_has_no_attributes(&report, &actor.name) => {}
                    Err(e) => report.errors.push(format!("{} requesting key for {}: {e}", actor.name, m.name)),
                }
            }
            for (i, _) in m.slices.iter().enumerate() {
                let allowed = expected
                    .iter()
                    .find(|e| e.reader == actor.name && e.message == m.name && e.slice == i)
                    .is_some_and(|e| e.allowed);
                let seen = observed.get(&i);
                report.cells.push(Cell {
                    reader: actor.name.clone(),
                    message: m.name.clone(),
                    slice: slice_label(m, i),
                    expected: allowed,
                    observed: seen.is_some(),
                    intact: seen.map(|s| s.0),
                    faithful: seen.map(|s| s.1),
                });
            }
        }
    }
    Ok(report)
}

fn actor_has_no_attributes(report: &Report, name: &str) -> bool {
    report.actors.iter().any(|a| a.name == name && a.attributes.is_empty())
}

/// Whether and when a host restarts its services.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RestartPolicy {
    #[default]
    Never,
    BeforeEveryStep,
    /// Restart only before the step with this zero-based index.
    BeforeStep(usize),
}

impl RestartPolicy {
    fn due(&self, index: usize) -> bool {
        match self {
            RestartPolicy::Never => false,
            RestartPolicy::BeforeEveryStep => true,
            RestartPolicy::BeforeStep(k) => *k == index,
        }
    }
}

/// Runs the services in-process on top of a deployment directory.
pub struct LocalHost {
    deployment: Deployment,
    sdm: SecureDataManager,
    skm: SecureKeyManager,
    rng: SharedRng,
    policy: RestartPolicy,
    steps: usize,
    restarts: usize,
}

impl LocalHost {
    pub fn new(deployment: Deployment, rng: SharedRng, policy: RestartPolicy) -> Self {
        let sdm = deployment.data_manager(rng.clone());
        let skm = deployment.key_manager(rng.clone());
        Self { deployment, sdm, skm, rng, policy, steps: 0, restarts: 0 }
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    /// Drops both services and every in-memory handle, then reloads from disk.
    pub fn restart(&mut self) -> Result<(), ScenarioError> {
        let home = self.deployment.home().to_path_buf();
        self.deployment = Deployment::open(home)?;
        self.sdm = self.deployment.data_manager(self.rng.clone());
        self.skm = self.deployment.key_manager(self.rng.clone());
        self.restarts += 1;
        Ok(())
    }
}

impl ScenarioHost for LocalHost {
    fn data_manager(&self) -> &dyn DataManager {
        &self.sdm
    }

    fn key_manager(&self) -> &dyn KeyManager {
        &self.skm
    }

    fn registry(&self) -> &Registry {
        self.deployment.registry()
    }

    fn store(&self) -> &dyn ContentStore {
        self.deployment.store().as_ref()
    }

    fn certifier(&self) -> &KeyPair {
        self.deployment.certifier()
    }

    fn service_address(&self, role: ServiceRole) -> AccountAddress {
        self.deployment.service_address(role)
    }

    fn before_step(&mut self, _step: &Step) -> Result<(), ScenarioError> {
        let index = self.steps;
        self.steps += 1;
        if self.policy.due(index) {
            self.restart()?;
        }
        Ok(())
    }
}

/// Runs both services as TCP servers and talks to them over the encrypted channel.
pub struct TcpHost {
    deployment: Deployment,
    rng: SharedRng,
    servers: Option<(ServerHandle, ServerHandle)>,
    sdm_client: RemoteService,
    skm_client: RemoteService,
    policy: RestartPolicy,
    steps: usize,
    restarts: usize,
}

impl TcpHost {
    pub fn new(deployment: Deployment, rng: SharedRng, policy: RestartPolicy) -> Result<Self, ScenarioError> {
        let (servers, sdm_client, skm_client) = Self::launch(&deployment, &rng)?;
        Ok(Self { deployment, rng, servers: Some(servers), sdm_client, skm_client, policy, steps: 0, restarts: 0 })
    }

    fn launch(
        deployment: &Deployment,
        rng: &SharedRng,
    ) -> Result<((ServerHandle, ServerHandle), RemoteService, RemoteService), ScenarioError> {
        let host_err = |e: std::io::Error| ScenarioError::Host(e.to_string());
        let sdm_keys = deployment.noise_keys(ServiceRole::Sdm)?;
        let skm_keys = deployment.noise_keys(ServiceRole::Skm)?;
        let sdm_listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(host_err)?;
        let skm_listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(host_err)?;
        let sdm_client = RemoteService::new(sdm_listener.local_addr().map_err(host_err)?, sdm_keys.public.clone());
        let skm_client = RemoteService::new(skm_listener.local_addr().map_err(host_err)?, skm_keys.public.clone());
        let sdm = serve(sdm_listener, sdm_keys, std::sync::Arc::new(deployment.data_manager(rng.clone()))).map_err(host_err)?;
        let skm = serve(skm_listener, skm_keys, std::sync::Arc::new(deployment.key_manager(rng.clone()))).map_err(host_err)?;
        Ok(((sdm, skm), sdm_client, skm_client))
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    /// Kills both servers, reloads everything from disk and starts fresh ones.
    pub fn restart(&mut self) -> Result<(), ScenarioError> {
        if let Some((sdm, skm)) = self.servers.take() {
            sdm.shutdown();
            skm.shutdown();
        }
        self.deployment = Deployment::open(self.deployment.home().to_path_buf())?;
        let (servers, sdm_client, skm_client) = Self::launch(&self.deployment, &self.rng)?;
        self.servers = Some(servers);
        self.sdm_client = sdm_client;
        self.skm_client = skm_client;
        self.restarts += 1;
        Ok(())
    }
}

impl ScenarioHost for TcpHost {
    fn data_manager(&self) -> &dyn DataManager {
        &self.sdm_client
    }

    fn key_manager(&self) -> &dyn KeyManager {
        &self.skm_client
    }

    fn registry(&self) -> &Registry {
        self.deployment.registry()
    }

    fn store(&self) -> &dyn ContentStore {
        self.deployment.store().as_ref()
    }

    fn certifier(&self) -> &KeyPair {
        self.deployment.certifier()
    }

    fn service_address(&self, role: ServiceRole) -> AccountAddress {
        self.deployment.service_address(role)
    }

    fn before_step(&mut self, _step: &Step) -> Result<(), ScenarioError> {
        let index = self.steps;
        self.steps += 1;
        if self.policy.due(index) {
            self.restart()?;
        }
        Ok(())
    }
}
