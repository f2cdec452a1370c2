use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use cake::actors::{check_slices, Actor};
use cake::deployment::{Deployment, ServiceRole};
use cake::ledger::cost_eur;
use cake::policy::{AttributeDictionary, AttributeId};
use cake::rng::SharedRng;
use cake::scenario::{run_scenario, LocalHost, RestartPolicy, Scenario, ScenarioHost, SliceInput, TcpHost, DRONE_SCENARIO_JSON};
use cake::service::{DataManager, KeyManager, KeyResponse, SliceRequest};
use cake::wire::{serve, RemoteService};
use serde::Serialize;

use crate::error::CliError;
use crate::{AccountCommand, CertifierCommand, Cli, Command, Identity, LedgerCommand, OwnerCommand, ReaderCommand, Result};
use crate::{Role, ScenarioCommand};

pub fn run(cli: Cli) -> Result<()> {
    let rng = SharedRng::from_option(cli.seed);
    let home = cli.home;
    match cli.command {
        Command::Init { dictionary } => init(&home, dictionary.as_deref(), &rng),
        Command::Account(AccountCommand::New { name }) => {
            let deployment = Deployment::open(&home)?;
            let keys = deployment.create_account(&name, &mut rng.fork())?;
            println!("{}", keys.address());
            Ok(())
        }
        Command::Account(AccountCommand::List) => {
            for (name, address) in Deployment::open(&home)?.accounts()? {
                println!("{name:<24} {address}");
            }
            Ok(())
        }
        Command::Certifier(CertifierCommand::SetAttrs { reader, attributes }) => set_attrs(&home, &reader, &attributes),
        Command::Owner(OwnerCommand::Send { identity, file }) => send(&home, &identity, &file, &rng),
        Command::Reader(ReaderCommand::Key { identity, message_id, out }) => key(&home, &identity, message_id, out, &rng),
        Command::Reader(ReaderCommand::Access { identity, message_id, key, out }) => {
            access(&home, &identity, message_id, &key, out, &rng)
        }
        Command::Ledger(LedgerCommand::Inspect { eth_eur, json }) => inspect(&home, eth_eur, json),
        Command::Scenario(ScenarioCommand::Run { file, tcp, restart_every_step, json }) => {
            run_scenario_file(file.as_deref(), tcp, restart_every_step, json, &rng)
        }
        Command::Scenario(ScenarioCommand::Show) => {
            print!("{DRONE_SCENARIO_JSON}");
            Ok(())
        }
        Command::Serve { role, listen } => serve_role(&home, role, listen, &rng),
    }
}

fn default_dictionary() -> Result<AttributeDictionary> {
    Ok(Scenario::drone().attribute_dictionary()?)
}

fn init(home: &Path, dictionary: Option<&Path>, rng: &SharedRng) -> Result<()> {
    let dict = match dictionary {
        Some(path) => AttributeDictionary::load(path)?,
        None => default_dictionary()?,
    };
    let deployment = Deployment::init(home, dict, &mut rng.fork())?;
    println!("initialised {}", home.display());
    println!("certifier {}", deployment.certifier().address());
    println!("sdm       {}", deployment.service_address(ServiceRole::Sdm));
    println!("skm       {}", deployment.service_address(ServiceRole::Skm));
    Ok(())
}

fn set_attrs(home: &Path, reader: &str, attributes: &[String]) -> Result<()> {
    let deployment = Deployment::open(home)?;
    let address = deployment.resolve_address(reader)?;
    let ids = attributes
        .iter()
        .map(|a| deployment.dictionary().resolve(a).map(|id| id.0).ok_or_else(|| CliError::Usage(format!("unknown attribute {a:?}"))))
        .collect::<Result<Vec<u64>>>()?;
    let certifier = Actor::new("certifier", deployment.certifier().clone());
    let receipt = certifier.certify(deployment.registry(), &address, ids.clone()).map_err(cake::service::ServiceError::from)?;
    println!("{address} {ids:?} gas {} ({:.5} EUR)", receipt.gas_used, receipt.cost_eur(cake::ledger::REFERENCE_ETH_EUR));
    Ok(())
}

/// The data or key manager a command talks to: in-process, or remote over the encrypted channel.
enum Manager {
    Local(Deployment, SharedRng),
    Remote(Deployment, RemoteService),
}

impl Manager {
    fn open(home: &Path, identity: &Identity, role: ServiceRole, rng: &SharedRng) -> Result<Self> {
        let deployment = Deployment::open(home)?;
        Ok(match identity.connect {
            Some(addr) => {
                let keys = deployment.noise_keys(role)?;
                Manager::Remote(deployment, RemoteService::new(addr, keys.public))
            }
            None => Manager::Local(deployment, rng.clone()),
        })
    }

    fn deployment(&self) -> &Deployment {
        match self {
            Manager::Local(d, _) | Manager::Remote(d, _) => d,
        }
    }

    fn with_data_manager<T>(&self, f: impl FnOnce(&dyn DataManager) -> T) -> T {
        match self {
            Manager::Local(d, rng) => f(&d.data_manager(rng.clone())),
            Manager::Remote(_, remote) => f(remote),
        }
    }

    fn with_key_manager<T>(&self, f: impl FnOnce(&dyn KeyManager) -> T) -> T {
        match self {
            Manager::Local(d, rng) => f(&d.key_manager(rng.clone())),
            Manager::Remote(_, remote) => f(remote),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::bad_input(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn send(home: &Path, identity: &Identity, file: &Path, rng: &SharedRng) -> Result<()> {
    let inputs: Vec<SliceInput> = read_json(file)?;
    let slices = inputs
        .iter()
        .enumerate()
        .map(|(i, s)| s.to_request().map_err(|e| CliError::bad_input(file, format!("slice {}: {e}", i + 1))))
        .collect::<Result<Vec<SliceRequest>>>()?;
    let manager = Manager::open(home, identity, ServiceRole::Sdm, rng)?;
    let owner = Actor::new(&identity.account, manager.deployment().account(&identity.account)?);
    let sdm = manager.deployment().service_address(ServiceRole::Sdm);
    let id = manager.with_data_manager(|m| owner.send(m, &sdm, &slices))?;
    println!("{id}");
    Ok(())
}

fn key(home: &Path, identity: &Identity, message_id: u64, out: Option<PathBuf>, rng: &SharedRng) -> Result<()> {
    let manager = Manager::open(home, identity, ServiceRole::Skm, rng)?;
    let reader = Actor::new(&identity.account, manager.deployment().account(&identity.account)?);
    let skm = manager.deployment().service_address(ServiceRole::Skm);
    let response = manager.with_key_manager(|m| reader.request_key(m, &skm, message_id))?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}-{message_id}.key.json", identity.account)));
    write_json(&out, &response)?;
    println!("key for message {message_id} written to {}", out.display());
    println!("locator {}", response.locator);
    Ok(())
}

#[derive(Serialize)]
struct RecoveredOutput {
    slice_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plaintext: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plaintext_b64: Option<String>,
    intact: bool,
}

fn access(
    home: &Path,
    identity: &Identity,
    message_id: u64,
    key_path: &Path,
    out: Option<PathBuf>,
    rng: &SharedRng,
) -> Result<()> {
    let key: KeyResponse = read_json(key_path)?;
    let manager = Manager::open(home, identity, ServiceRole::Skm, rng)?;
    let reader = Actor::new(&identity.account, manager.deployment().account(&identity.account)?);
    let skm = manager.deployment().service_address(ServiceRole::Skm);
    let response = manager.with_key_manager(|m| reader.access(m, &skm, message_id, &key.sk))?;
    let checked = check_slices(manager.deployment().store().as_ref(), &key.locator, &response)?;
    let recovered: Vec<RecoveredOutput> = checked
        .iter()
        .map(|c| match String::from_utf8(c.plaintext.clone()) {
            Ok(text) => RecoveredOutput { slice_id: c.slice_id, plaintext: Some(text), plaintext_b64: None, intact: c.intact },
            Err(_) => RecoveredOutput {
                slice_id: c.slice_id,
                plaintext: None,
                plaintext_b64: Some(B64.encode(&c.plaintext)),
                intact: c.intact,
            },
        })
        .collect();
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}-{message_id}.slices.json", identity.account)));
    write_json(&out, &recovered)?;
    for c in &checked {
        let position = c.index.map_or_else(|| "?".to_string(), |i| (i + 1).to_string());
        let verdict = if c.intact { "ok" } else { "FAILED" };
        println!("slice {position} ({}): {} bytes, integrity {verdict}", c.slice_id, c.plaintext.len());
    }
    println!("written to {}", out.display());
    if checked.iter().all(|c| c.intact) {
        Ok(())
    } else {
        Err(CliError::Usage("a returned slice failed the integrity check".into()))
    }
}

fn attribute_label(dict: &AttributeDictionary, id: u64) -> String {
    dict.label(AttributeId(id))
}

fn inspect(home: &Path, eth_eur: f64, json: bool) -> Result<()> {
    let deployment = Deployment::open(home)?;
    let state = deployment.registry().snapshot().map_err(cake::service::ServiceError::from)?;
    let total = state.receipts.iter().fold(0.0, |acc, r| acc + r.cost_eur(eth_eur));
    if json {
        let value = serde_json::json!({ "state": state, "eth_eur": eth_eur, "total_cost_eur": total });
        println!("{}", serde_json::to_string_pretty(&value).expect("serialisable"));
        return Ok(());
    }
    let dict = deployment.dictionary();
    let mut out = String::new();
    let _ = writeln!(out, "roles");
    let _ = writeln!(out, "  certifier  {}", state.roles.certifier);
    let _ = writeln!(out, "  sdm        {}", state.roles.sdm);
    let _ = writeln!(out, "  skm        {}", state.roles.skm);
    let _ = writeln!(out, "readers ({})", state.readers.len());
    for (address, attrs) in &state.readers {
        let labels: Vec<String> = attrs.iter().map(|a| attribute_label(dict, *a)).collect();
        let _ = writeln!(out, "  {address}  {}", labels.join(", "));
    }
    let _ = writeln!(out, "messages ({})", state.messages.len());
    for (id, words) in &state.messages {
        let locator = cake::cas::Locator::from_words(words).map_or_else(|e| format!("<{e}>"), |l| l.to_string());
        let _ = writeln!(out, "  {id:<20}  {locator}");
    }
    let _ = writeln!(out, "receipts ({})", state.receipts.len());
    let _ = writeln!(out, "  {:<12} {:>8} {:>14} {:>12} {:>12}", "op", "gas", "price (wei)", "cost (EUR)", "timestamp");
    for r in &state.receipts {
        let _ = writeln!(
            out,
            "  {:<12} {:>8} {:>14} {:>12.5} {:>12}",
            r.op,
            r.gas_used,
            r.gas_price_wei,
            cost_eur(r.gas_used as f64, r.gas_price_wei as f64, eth_eur),
            r.timestamp
        );
    }
    let _ = writeln!(out, "total {total:.5} EUR at {eth_eur} EUR/ETH");
    print!("{out}");
    Ok(())
}

fn run_scenario_file(file: Option<&Path>, tcp: bool, restart_every_step: bool, json: bool, rng: &SharedRng) -> Result<()> {
    let scenario = match file {
        Some(path) => Scenario::load(path)?,
        None => Scenario::drone(),
    };
    scenario.validate()?;
    let dir = tempfile::tempdir().map_err(CliError::io(std::env::temp_dir()))?;
    let deployment = Deployment::init(dir.path(), scenario.attribute_dictionary()?, &mut rng.fork())?;
    let policy = if restart_every_step { RestartPolicy::BeforeEveryStep } else { RestartPolicy::Never };
    let mut host: Box<dyn ScenarioHost> = if tcp {
        Box::new(TcpHost::new(deployment, rng.clone(), policy)?)
    } else {
        Box::new(LocalHost::new(deployment, rng.clone(), policy))
    };
    let report = run_scenario(&scenario, host.as_mut(), &mut rng.fork())?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
    } else {
        print!("{}", report.render_text());
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::ScenarioFailed)
    }
}

fn serve_role(home: &Path, role: Role, listen: std::net::SocketAddr, rng: &SharedRng) -> Result<()> {
    let deployment = Deployment::open(home)?;
    let (role, name) = match role {
        Role::Sdm => (ServiceRole::Sdm, "sdm"),
        Role::Skm => (ServiceRole::Skm, "skm"),
    };
    let keys = deployment.noise_keys(role)?;
    let public = keys.public.clone();
    let listener = std::net::TcpListener::bind(listen).map_err(CliError::io(home))?;
    let handler: Arc<dyn cake::wire::Handler> = match role {
        ServiceRole::Sdm => Arc::new(deployment.data_manager(rng.clone())),
        ServiceRole::Skm => Arc::new(deployment.key_manager(rng.clone())),
    };
    let handle = serve(listener, keys, handler).map_err(CliError::io(home))?;
    println!("{name} listening on {}", handle.local_addr());
    println!("noise public key {}", public.iter().map(|b| format!("{b:02x}")).collect::<String>());
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(())
}
