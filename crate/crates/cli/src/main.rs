//! `cake`: operator command line for a CAKE deployment.

mod commands;
mod error;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "cake", version, about = "Attribute-based access control for multi-party process messages")]
struct Cli {
    /// Deployment directory holding keys, the registry journal and the content store.
    #[arg(long, global = true, env = "CAKE_HOME", default_value = "cake-home")]
    home: PathBuf,
    /// Seed every random choice, for reproducible runs. Never use in production.
    #[arg(long, global = true, env = "CAKE_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create service identities, deploy the registry and write the attribute dictionary.
    Init {
        /// Tab-separated `name<TAB>id` lines; defaults to the drone supply-chain dictionary.
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Manage participant accounts.
    #[command(subcommand)]
    Account(AccountCommand),
    /// Attribute certifier operations.
    #[command(subcommand)]
    Certifier(CertifierCommand),
    /// Data owner operations.
    #[command(subcommand)]
    Owner(OwnerCommand),
    /// Reader operations.
    #[command(subcommand)]
    Reader(ReaderCommand),
    /// Registry inspection.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Scripted end-to-end runs.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// Run a manager service over the encrypted channel until interrupted.
    Serve {
        role: Role,
        #[arg(long, default_value = "127.0.0.1:7400")]
        listen: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Sdm,
    Skm,
}

#[derive(Subcommand)]
enum AccountCommand {
    /// Generate a key pair for a participant and print its address.
    New { name: String },
    /// List participant accounts.
    List,
}

#[derive(Subcommand)]
enum CertifierCommand {
    /// Replace a reader's attributes in the registry.
    SetAttrs {
        /// Account name or 0x address.
        reader: String,
        /// Dictionary names or decimal identifiers such as case ids.
        #[arg(required = true)]
        attributes: Vec<String>,
    },
}

#[derive(Args)]
struct Identity {
    /// Account to act as.
    #[arg(long = "as", value_name = "ACCOUNT")]
    account: String,
    /// Talk to a running `cake serve` instead of an in-process service.
    #[arg(long, value_name = "ADDR")]
    connect: Option<SocketAddr>,
}

#[derive(Subcommand)]
enum OwnerCommand {
    /// Encrypt the slices in a JSON file and print the new message id.
    Send {
        #[command(flatten)]
        identity: Identity,
        /// JSON list of {plaintext | plaintext_b64, policy}.
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReaderCommand {
    /// Obtain a secret key for a message and write it to a file.
    Key {
        #[command(flatten)]
        identity: Identity,
        message_id: u64,
        /// Defaults to `<account>-<message_id>.key.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the slices a key opens, verify them and write them to a file.
    Access {
        #[command(flatten)]
        identity: Identity,
        message_id: u64,
        #[arg(long)]
        key: PathBuf,
        /// Defaults to `<account>-<message_id>.slices.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Print roles, reader attributes, message locators and gas receipts.
    Inspect {
        /// ETH to EUR rate used for receipt costs.
        #[arg(long, default_value_t = cake::ledger::REFERENCE_ETH_EUR)]
        eth_eur: f64,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run a scenario in a fresh temporary deployment and print the access report.
    Run {
        /// Scenario JSON; defaults to the shipped drone supply chain.
        file: Option<PathBuf>,
        /// Serve the managers over TCP instead of calling them in-process.
        #[arg(long)]
        tcp: bool,
        /// Restart both managers from disk before every protocol step.
        #[arg(long)]
        restart_every_step: bool,
        #[arg(long)]
        json: bool,
    },
    /// Print the shipped drone scenario.
    Show,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cake: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub(crate) type Result<T> = std::result::Result<T, CliError>;
