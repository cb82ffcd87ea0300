//! Offline traffic commands: replay, attack, gen-benign, detect.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use homesec_core::config::GatewayConfig;
use homesec_core::nids::packet::{read_packet_csv, write_packet_csv};
use homesec_core::nids::replay::{evaluate, read_flow_csv, write_flow_csv};
use homesec_core::nids::{NidsEngine, Verdict};
use homesec_core::traffic::{generate_attack, generate_benign, AttackKind, Trace};

use crate::error::CliError;

pub fn load_config(path: Option<&Path>) -> Result<GatewayConfig, CliError> {
    match path {
        Some(p) => Ok(GatewayConfig::load(p)?),
        None => Ok(GatewayConfig::default()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::input(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::output(path, e))
}

pub fn replay(paths: &[impl AsRef<Path>], config: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let mut rows = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let more = read_flow_csv(open(path)?, true).map_err(|source| CliError::Schema {
            path: path.display().to_string(),
            source,
        })?;
        rows.extend(more);
    }
    print!("{}", evaluate(&rows, &cfg.nids_config()).to_text());
    Ok(())
}

fn write_trace(trace: &Trace, out: &Path, packets_out: Option<&Path>) -> Result<(), CliError> {
    let rows = trace.flows(GatewayConfig::default().nids_config().timeouts);
    write_flow_csv(create(out)?, &rows).map_err(|e| CliError::output(out, e))?;
    if let Some(p) = packets_out {
        write_packet_csv(create(p)?, &trace.packets, Some(&trace.label_strings())).map_err(|e| CliError::output(p, e))?;
    }
    eprintln!("wrote {} flows ({} packets) to {}", rows.len(), trace.len(), out.display());
    Ok(())
}

pub fn attack(kind: AttackKind, flows: usize, seed: u64, out: &Path, packets_out: Option<&Path>) -> Result<(), CliError> {
    write_trace(&generate_attack(kind, flows, seed, 0), out, packets_out)
}

pub fn gen_benign(flows: usize, seed: u64, out: &Path, packets_out: Option<&Path>) -> Result<(), CliError> {
    write_trace(&generate_benign(flows, seed, 0), out, packets_out)
}

pub fn detect(path: &Path, config: Option<&Path>, all: bool) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let rows = read_packet_csv(open(path)?).map_err(|e| CliError::input(path, e))?;
    let mut engine = NidsEngine::new(cfg.nids_config());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut attacks = 0usize;
    let mut print = |verdicts: Vec<Verdict>| -> std::io::Result<()> {
        for v in verdicts {
            if v.is_attack() {
                attacks += 1;
            }
            if all || v.is_attack() {
                writeln!(out, "{v}")?;
            }
        }
        Ok(())
    };
    let broken_pipe = |e: std::io::Error| CliError::Environment(format!("stdout: {e}"));
    for row in &rows {
        print(engine.ingest_row(row)).map_err(broken_pipe)?;
    }
    print(engine.finish()).map_err(broken_pipe)?;
    eprintln!(
        "packets {} malformed {} flows {} attack verdicts {}",
        engine.ingested(),
        engine.malformed(),
        engine.take_completed_flows().len(),
        attacks
    );
    Ok(())
}
