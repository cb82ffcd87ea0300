//! `homesec`: run the gateway, replay and generate traffic, run sensor
//! scenarios, manage the owner account.
//!
//! Exit codes: 0 ok, 2 bad input, 3 environment failure.

mod credstuff;
mod error;
mod gateway;
mod traffic;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "homesec", version, about = "Home security gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the gateway API until interrupted.
    Run(RunArgs),
    /// Evaluate the detector over labelled flow CSVs.
    Replay {
        /// Flow CSV; repeat to pool several files into one report.
        #[arg(long = "flows", required = true)]
        flows: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate attack traffic, or run credential stuffing against a gateway.
    Attack(AttackArgs),
    /// Generate labelled benign IoT traffic.
    GenBenign {
        #[arg(long, default_value_t = homesec_core::traffic::DEFAULT_BENIGN_FLOWS)]
        flows: usize,
        #[arg(long)]
        seed: u64,
        /// Labelled flow CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also write the packets, with a trailing label column.
        #[arg(long)]
        packets_out: Option<PathBuf>,
    },
    /// Play a sensor script against an embedded or live gateway.
    Scenario(ScenarioArgs),
    /// Owner account management.
    User {
        #[command(subcommand)]
        command: UserCommand,
    },
    /// Stream a packet CSV through the live detector and print verdicts.
    Detect {
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print Normal verdicts too.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    mode: Mode,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Mode {
    /// Enable the sensor trigger test hook.
    #[arg(long)]
    sim: bool,
    /// Disable every test hook.
    #[arg(long)]
    hardened: bool,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// dos, ddos, servicescan, osscan, keylog or credstuff.
    #[arg(long)]
    kind: String,
    /// Output flow CSV, or the gateway base URL for credstuff.
    #[arg(long)]
    out: String,
    #[arg(long)]
    seed: u64,
    /// Attack flows to generate.
    #[arg(long, default_value_t = homesec_core::traffic::DEFAULT_ATTACK_FLOWS)]
    flows: usize,
    /// Also write the packets, with a trailing label column.
    #[arg(long)]
    packets_out: Option<PathBuf>,
    /// credstuff: login attempts.
    #[arg(long, default_value_t = 1000)]
    logins: usize,
    /// credstuff: key guesses per login.
    #[arg(long, default_value_t = 3)]
    guesses: u32,
    /// credstuff: account to attack.
    #[arg(long, default_value = "owner")]
    username: String,
    /// credstuff: the compromised password.
    #[arg(long)]
    password: Option<String>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// CSV with header `at_ms,sensor_id,magnitude`.
    #[arg(long)]
    script: PathBuf,
    /// Config for the embedded gateway.
    #[arg(long, conflicts_with = "target")]
    config: Option<PathBuf>,
    /// Base URL of a gateway started with --sim.
    #[arg(long, requires = "token")]
    target: Option<String>,
    #[arg(long)]
    token: Option<String>,
}

#[derive(Debug, Subcommand)]
enum UserCommand {
    /// Create an account; the password is read from stdin.
    Add {
        name: String,
        /// Where one-time keys are sent.
        #[arg(long)]
        contact: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => gateway::run(&a.config, a.mode.sim),
        Command::Replay { flows, config } => traffic::replay(&flows, config.as_deref()),
        Command::Attack(a) if a.kind == "credstuff" => {
            let password = a
                .password
                .ok_or_else(|| CliError::Usage("credstuff needs --password".into()))?;
            let report = credstuff::run(&credstuff::Plan {
                target: a.out,
                username: a.username,
                password,
                logins: a.logins,
                guesses_per_login: a.guesses,
                seed: a.seed,
            })?;
            print!("{report}");
            Ok(())
        }
        Command::Attack(a) => {
            let kind = a.kind.parse().map_err(CliError::Usage)?;
            traffic::attack(kind, a.flows, a.seed, a.out.as_ref(), a.packets_out.as_deref())
        }
        Command::GenBenign {
            flows,
            seed,
            out,
            packets_out,
        } => traffic::gen_benign(flows, seed, &out, packets_out.as_deref()),
        Command::Scenario(a) => match (a.target, a.token) {
            (Some(target), Some(token)) => gateway::scenario_live(&a.script, &target, &token),
            _ => gateway::scenario_embedded(&a.script, a.config.as_deref()),
        },
        Command::User {
            command: UserCommand::Add { name, contact, config },
        } => gateway::user_add(&name, &contact, config.as_deref()),
        Command::Detect { packets, config, all } => traffic::detect(&packets, config.as_deref(), all),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("homesec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn run_needs_exactly_one_mode() {
        assert!(Cli::try_parse_from(["homesec", "run", "--config", "c.toml"]).is_err());
        assert!(Cli::try_parse_from(["homesec", "run", "--config", "c.toml", "--sim", "--hardened"]).is_err());
        assert!(Cli::try_parse_from(["homesec", "run", "--config", "c.toml", "--hardened"]).is_ok());
    }

    #[test]
    fn replay_takes_several_flow_files() {
        let cli = Cli::try_parse_from(["homesec", "replay", "--flows", "a.csv", "--flows", "b.csv"]).unwrap();
        match cli.command {
            Command::Replay { flows, .. } => assert_eq!(flows.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
