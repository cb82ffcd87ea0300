//! One running home gateway: store, auth, notifier, controller, sensor fleet
//! and the live NIDS engine, wired together from a [`GatewayConfig`].

use std::fs;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::auth::{AuthError, AuthService};
use crate::clock::Clock;
use crate::config::{ConfigError, GatewayConfig};
use crate::controller::{AlertUpdate, Controller, ControllerError};
use crate::nids::{Detection, NidsEngine, PacketSummary, Verdict};
use crate::notify::{Channel, ConsoleSink, EmailKeySpool, Notifier, SinkError, SpoolSink, WebhookSink};
use crate::sensor::{build_fleet, run_scenario, Fleet, ScenarioScript, SensorError, SensorEvent};
use crate::store::{EventStore, StoreError, StoreOptions};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("auth: {0}")]
    Auth(#[from] AuthError),
    #[error("sensor: {0}")]
    Sensor(#[from] SensorError),
    #[error("controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("notify: {0}")]
    Notify(#[from] SinkError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What one sensor trigger produced.
#[derive(Debug, Clone)]
pub struct Triggered {
    pub event: SensorEvent,
    pub alert: Option<AlertUpdate>,
}

pub struct Gateway {
    config: GatewayConfig,
    clock: Arc<dyn Clock>,
    store: Arc<EventStore>,
    auth: Arc<AuthService>,
    notifier: Arc<Notifier>,
    controller: Arc<Controller>,
    fleet: Mutex<Fleet>,
    nids: Mutex<NidsEngine>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn build(config: GatewayConfig, clock: Arc<dyn Clock>) -> Result<Self, GatewayError> {
        let fleet_cfg = config.fleet()?;
        let controller_cfg = config.controller_config()?;
        for dir in [&config.notify.spool_dir, &config.notify.email_dir] {
            fs::create_dir_all(dir).map_err(|source| GatewayError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }

        let store = Arc::new(EventStore::open_with(
            &config.gateway.data_dir,
            StoreOptions {
                fsync: config.gateway.fsync,
                ..StoreOptions::default()
            },
        )?);

        let auth = AuthService::new(config.auth.clone(), Arc::new(EmailKeySpool::new(&config.notify.email_dir)))
            .with_store(store.clone())
            .with_users_file(config.users_file())?;

        let gsm = Arc::new(SpoolSink::new(&config.notify.spool_dir, &config.notify.recipient));
        let mut notifier = Notifier::new(config.notify.notifier_config(), clock.clone())
            .with_store(store.clone())
            .with_sink(Channel::Sms, gsm.clone())
            .with_sink(Channel::Call, gsm)
            .with_sink(
                Channel::Email,
                Arc::new(SpoolSink::new(&config.notify.email_dir, &config.notify.recipient)),
            );
        if let Some(url) = &config.notify.webhook_url {
            notifier = notifier.with_sink(Channel::Webhook, Arc::new(WebhookSink::new(url)?));
        }
        if config.notify.console {
            notifier = notifier.with_sink(Channel::Console, Arc::new(ConsoleSink));
        }
        let notifier = Arc::new(notifier);

        let fleet = build_fleet(&fleet_cfg)?.with_snapshots(store.clone());
        let controller = Controller::new(controller_cfg, fleet.specs(), store.clone(), clock.clone())
            .with_sink(notifier.clone());
        let nids = NidsEngine::new(config.nids_config());

        Ok(Self {
            config,
            clock,
            store,
            auth: Arc::new(auth),
            notifier,
            controller: Arc::new(controller),
            fleet: Mutex::new(fleet),
            nids: Mutex::new(nids),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    pub fn auth(&self) -> &Arc<AuthService> {
        &self.auth
    }

    pub fn notifier(&self) -> &Arc<Notifier> {
        &self.notifier
    }

    pub fn controller(&self) -> &Arc<Controller> {
        &self.controller
    }

    /// Packets the live detector has seen so far.
    pub fn packets_observed(&self) -> u64 {
        self.nids().ingested()
    }

    /// Fires a sensor at the current clock reading.
    pub fn trigger(&self, sensor_id: &str, magnitude: f64) -> Result<Triggered, GatewayError> {
        let event = self.fleet().trigger(sensor_id, magnitude, self.clock.now_ms())?;
        let alert = self.controller.ingest_event(&event)?;
        Ok(Triggered { event, alert })
    }

    /// Plays a script against the fleet, driving or awaiting the clock.
    pub fn run_script(&self, script: &ScenarioScript) -> Result<Vec<Triggered>, GatewayError> {
        let mut fleet = self.fleet();
        let mut out = Vec::with_capacity(script.entries.len());
        for event in run_scenario(&mut fleet, script, self.clock.as_ref())? {
            let event = event?;
            let alert = self.controller.ingest_event(&event)?;
            out.push(Triggered { event, alert });
        }
        Ok(out)
    }

    /// Feeds one packet to the live detector and raises any attack verdicts
    /// from windows it closed.
    pub fn observe_packet(&self, p: &PacketSummary) -> Result<Vec<Verdict>, GatewayError> {
        let verdicts = self.nids().ingest(p);
        self.raise(&verdicts)?;
        Ok(verdicts)
    }

    /// Closes the detector window if the clock has moved past it.
    pub fn tick(&self) -> Result<Vec<Verdict>, GatewayError> {
        let verdicts = {
            let mut nids = self.nids();
            let v = nids.advance_to(self.clock.now_ms() * 1000);
            nids.take_completed_flows();
            v
        };
        self.raise(&verdicts)?;
        Ok(verdicts)
    }

    /// Flushes the flow table, raising whatever the last window holds.
    pub fn shutdown(&self) -> Result<Vec<Verdict>, GatewayError> {
        let verdicts = {
            let mut nids = self.nids();
            let v = nids.finish();
            nids.take_completed_flows();
            v
        };
        self.raise(&verdicts)?;
        Ok(verdicts)
    }

    fn raise(&self, verdicts: &[Verdict]) -> Result<(), GatewayError> {
        let now = self.clock.now_ms();
        for v in verdicts.iter().filter(|v| v.is_attack()) {
            log::warn!("{v}");
            self.controller.ingest_detection(&Detection {
                verdict: v.clone(),
                detected_at: now,
            })?;
        }
        Ok(())
    }

    fn fleet(&self) -> MutexGuard<'_, Fleet> {
        self.fleet.lock().expect("fleet lock poisoned")
    }

    fn nids(&self) -> MutexGuard<'_, NidsEngine> {
        self.nids.lock().expect("nids lock poisoned")
    }
}
