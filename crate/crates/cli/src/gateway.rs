//! Commands that stand up a gateway or talk to one: run, scenario, user add.

use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use homesec_api::{serve, ApiOptions};
use homesec_core::auth::AuthService;
use homesec_core::config::GatewayConfig;
use homesec_core::notify::{list_spool, Channel, EmailKeySpool};
use homesec_core::sensor::ScenarioScript;
use homesec_core::{Clock, Gateway, SimClock, WallClock};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::traffic::load_config;

async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        if let Ok(mut term) = signal(SignalKind::terminate()) {
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
            return;
        }
    }
    let _ = tokio::signal::ctrl_c().await;
}

pub fn run(config: &Path, sim: bool) -> Result<(), CliError> {
    let cfg = GatewayConfig::load(config)?;
    let listen = cfg.gateway.listen.clone();
    let gw = Arc::new(Gateway::build(cfg, Arc::new(WallClock))?);
    if !gw.auth().has_users() {
        log::warn!("no accounts yet; create one with `homesec user add`");
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Environment(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|source| CliError::Bind {
                addr: listen.clone(),
                source,
            })?;
        let addr = listener.local_addr().map_err(|e| CliError::Environment(e.to_string()))?;
        println!("listening on {addr} ({} mode)", if sim { "simulation" } else { "hardened" });
        let _ = std::io::stdout().flush();
        serve(listener, gw.clone(), ApiOptions { sim }, interrupted())
            .await
            .map_err(|e| CliError::Environment(e.to_string()))
    })?;
    let last = gw.shutdown()?;
    println!("stopped; final window raised {} attack verdicts", last.iter().filter(|v| v.is_attack()).count());
    Ok(())
}

fn read_script(path: &Path) -> Result<ScenarioScript, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::input(path, e))?;
    ScenarioScript::from_csv(file).map_err(|e| CliError::input(path, e))
}

/// Plays the script on a fresh simulated clock starting at 0.
pub fn scenario_embedded(script: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let script = read_script(script)?;
    let cfg = load_config(config)?;
    let spool = cfg.notify.spool_dir.clone();
    let clock = SimClock::new();
    let gw = Gateway::build(cfg, Arc::new(clock.clone()))?;
    let before: Vec<_> = [Channel::Sms, Channel::Call]
        .iter()
        .flat_map(|c| list_spool(&spool, c.tag()))
        .collect();
    for t in gw.run_script(&script)? {
        let outcome = match &t.alert {
            Some(a) if a.created => format!("alert {} {:?}", a.decision.alert_id, a.decision.severity),
            Some(a) => format!("alert {} repeat {}", a.decision.alert_id, a.decision.repeat_count),
            None => "logged".to_string(),
        };
        println!("{} {} {} -> {outcome}", t.event.timestamp, t.event.sensor_id, t.event.magnitude);
    }
    for c in [Channel::Sms, Channel::Call] {
        for f in list_spool(&spool, c.tag()).into_iter().filter(|f| !before.contains(f)) {
            println!("spooled {}", f.display());
        }
    }
    Ok(())
}

/// Replays the script in real time through `POST /sim/trigger`.
pub fn scenario_live(script: &Path, target: &str, token: &str) -> Result<(), CliError> {
    let script = read_script(script)?;
    let base = target.trim_end_matches('/');
    let url = format!("{base}/sim/trigger");
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| CliError::Environment(e.to_string()))?;
    let start = Instant::now();
    for entry in &script.entries {
        let due = Duration::from_millis(entry.at_ms);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
        let res = client
            .post(&url)
            .bearer_auth(token)
            .json(&json!({"sensor_id": entry.sensor_id, "magnitude": entry.magnitude}))
            .send()
            .map_err(|e| CliError::Unreachable(format!("{url}: {e}")))?;
        let status = res.status();
        let body: Value = res.json().unwrap_or(Value::Null);
        match status.as_u16() {
            200 => println!("{} {} {} -> alert {}", entry.at_ms, entry.sensor_id, entry.magnitude, body["alert_id"]),
            401 => return Err(CliError::Input("token rejected".into())),
            404 => return Err(CliError::Environment(format!("{base} is not running in simulation mode"))),
            _ => return Err(CliError::Input(format!("{}: {status} {body}", entry.sensor_id))),
        }
    }
    Ok(())
}

fn read_password() -> Result<String, CliError> {
    let stdin = std::io::stdin();
    if stdin.is_terminal() {
        eprint!("password: ");
        let _ = std::io::stderr().flush();
    }
    let mut line = String::new();
    stdin
        .lock()
        .read_line(&mut line)
        .map_err(|e| CliError::Input(format!("reading password: {e}")))?;
    let pw = line.trim_end_matches(['\r', '\n']).to_string();
    if pw.is_empty() {
        return Err(CliError::Usage("no password given on stdin".into()));
    }
    Ok(pw)
}

pub fn user_add(name: &str, contact: &str, config: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let users = cfg.users_file();
    if let Some(dir) = users.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    }
    let auth = AuthService::new(cfg.auth.clone(), Arc::new(EmailKeySpool::new(&cfg.notify.email_dir)))
        .with_users_file(&users)?;
    let password = read_password()?;
    auth.register_user(name, &password, contact, WallClock.now_ms())?;
    println!("added {name} ({contact}) to {}", users.display());
    Ok(())
}
