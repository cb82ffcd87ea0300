//! Gateway configuration file: flat TOML sections.
//!
//! ```toml
//! [gateway]
//! listen = "127.0.0.1:8080"
//! data_dir = "data"
//!
//! [notify]
//! spool_dir = "spool/gsm"
//! email_dir = "spool/email"
//! recipient = "+15550100"
//!
//! [sensors]
//! gas1 = "gas"
//!
//! [thresholds]
//! gas1 = 1.0
//!
//! [detector]
//! rate_thresh = 500.0
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::AuthConfig;
use crate::controller::{ArmState, ControllerConfig};
use crate::nids::{DetectorConfig, FlowTimeouts, NidsConfig};
use crate::notify::{Channel, ChannelPolicy, NotifierConfig};
use crate::sensor::{FleetConfig, SensorError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Defaults to `<data_dir>/users.json`.
    pub users_file: Option<PathBuf>,
    pub fsync: bool,
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            users_file: None,
            fsync: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotifySection {
    /// GSM adapter spool for SMS and Call.
    pub spool_dir: PathBuf,
    pub email_dir: PathBuf,
    pub recipient: String,
    pub webhook_url: Option<String>,
    pub console: bool,
    pub dedup_window_ms: u64,
    pub backoff_ms: Vec<u64>,
    pub safety: BTreeSet<Channel>,
    pub intrusion: BTreeSet<Channel>,
    pub network: BTreeSet<Channel>,
}

impl Default for NotifySection {
    fn default() -> Self {
        let n = NotifierConfig::default();
        Self {
            spool_dir: PathBuf::from("spool/gsm"),
            email_dir: PathBuf::from("spool/email"),
            recipient: "owner".into(),
            webhook_url: None,
            console: false,
            dedup_window_ms: n.dedup_window_ms,
            backoff_ms: n.backoff_ms,
            safety: n.policy.safety,
            intrusion: n.policy.intrusion,
            network: n.policy.network,
        }
    }
}

impl NotifySection {
    pub fn notifier_config(&self) -> NotifierConfig {
        NotifierConfig {
            dedup_window_ms: self.dedup_window_ms,
            backoff_ms: self.backoff_ms.clone(),
            policy: ChannelPolicy {
                safety: self.safety.clone(),
                intrusion: self.intrusion.clone(),
                network: self.network.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub idle_timeout_s: u64,
    pub active_timeout_s: u64,
    pub window_len_s: u64,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            idle_timeout_s: 15,
            active_timeout_s: 120,
            window_len_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub gateway: GatewaySection,
    pub notify: NotifySection,
    pub auth: AuthConfig,
    pub detector: DetectorConfig,
    pub flow: FlowSection,
    /// sensor id → kind; empty means the default fleet.
    pub sensors: BTreeMap<String, String>,
    pub thresholds: BTreeMap<String, f64>,
    pub controller: ControllerToml,
}

/// `[controller]` as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerToml {
    pub cooldown_ms: u64,
    pub initial_arm: String,
}

impl Default for ControllerToml {
    fn default() -> Self {
        Self {
            cooldown_ms: ControllerConfig::default().cooldown_ms,
            initial_arm: "disarmed".into(),
        }
    }
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            gateway: GatewaySection::default(),
            notify: NotifySection::default(),
            auth: AuthConfig::default(),
            detector: DetectorConfig::default(),
            flow: FlowSection::default(),
            sensors: BTreeMap::new(),
            thresholds: BTreeMap::new(),
            controller: ControllerToml::default(),
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        // Relative paths in the file are relative to the file itself.
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.fleet()?;
        self.controller_config()?;
        let f = &self.flow;
        if f.window_len_s == 0 || f.idle_timeout_s == 0 || f.active_timeout_s == 0 {
            return Err(ConfigError::Invalid("flow timeouts and window length must be positive".into()));
        }
        if let Some(id) = self.thresholds.keys().find(|id| !self.fleet_ids().contains(id.as_str())) {
            return Err(ConfigError::Invalid(format!("threshold for unknown sensor {id:?}")));
        }
        Ok(())
    }

    fn fleet_ids(&self) -> BTreeSet<String> {
        self.fleet().map(|f| f.sensors.into_iter().map(|s| s.id).collect()).unwrap_or_default()
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.gateway.data_dir);
        if let Some(u) = self.gateway.users_file.as_mut() {
            fix(u);
        }
        fix(&mut self.notify.spool_dir);
        fix(&mut self.notify.email_dir);
    }

    pub fn fleet(&self) -> Result<FleetConfig, ConfigError> {
        let invalid = |e: SensorError| ConfigError::Invalid(e.to_string());
        if self.sensors.is_empty() {
            let mut fleet = FleetConfig::default();
            for s in &mut fleet.sensors {
                if let Some(t) = self.thresholds.get(&s.id) {
                    s.threshold = *t;
                }
            }
            return Ok(fleet);
        }
        FleetConfig::from_pairs(
            self.sensors.iter().map(|(id, kind)| (id.as_str(), kind.as_str())),
            &self.thresholds,
        )
        .map_err(invalid)
    }

    pub fn controller_config(&self) -> Result<ControllerConfig, ConfigError> {
        let initial_arm: ArmState = self.controller.initial_arm.parse().map_err(ConfigError::Invalid)?;
        Ok(ControllerConfig {
            cooldown_ms: self.controller.cooldown_ms,
            initial_arm,
            ..ControllerConfig::default()
        })
    }

    pub fn nids_config(&self) -> NidsConfig {
        NidsConfig {
            detector: self.detector,
            timeouts: FlowTimeouts {
                idle_us: self.flow.idle_timeout_s * 1_000_000,
                active_us: self.flow.active_timeout_s * 1_000_000,
            },
            window_len_s: self.flow.window_len_s,
        }
    }

    pub fn users_file(&self) -> PathBuf {
        self.gateway
            .users_file
            .clone()
            .unwrap_or_else(|| self.gateway.data_dir.join("users.json"))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
