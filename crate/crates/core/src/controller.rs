//! The system controller: arm state, alert decisions and status snapshots.
//!
//! All mutation goes through one mutex, which serves as the controller's
//! serialized inbox. Alert sinks run after the lock is released, so a slow
//! notifier never stalls event ingestion.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::auth::AuthService;
use crate::clock::Clock;
use crate::nids::{Detection, FlowKey};
use crate::sensor::{SensorEvent, SensorKind, SensorSpec};
use crate::store::{EntryKind, EventStore, StoreError};
use crate::time_fmt::iso;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("store unavailable: {0}")]
    StoreUnavailable(#[from] StoreError),
    #[error("unauthorized")]
    Unauthorized,
    #[error("detection is not an attack verdict")]
    NotAnAttack,
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArmState {
    Armed,
    Disarmed,
}

impl FromStr for ArmState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "armed" | "arm" => Ok(ArmState::Armed),
            "disarmed" | "disarm" => Ok(ArmState::Disarmed),
            other => Err(format!("unknown arm state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Safety,
    Intrusion,
    Network,
}

impl Severity {
    pub fn label(self) -> &'static str {
        match self {
            Severity::Safety => "SAFETY",
            Severity::Intrusion => "INTRUSION",
            Severity::Network => "NETWORK",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum AlertCause {
    Sensor(SensorEvent),
    Network(Detection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDecision {
    pub alert_id: u64,
    pub causes: Vec<AlertCause>,
    pub severity: Severity,
    pub created_at: u64,
    pub repeat_count: u32,
}

pub trait AlertSink: Send + Sync {
    fn on_alert(&self, decision: &AlertDecision);
}

/// Result of feeding the controller: the alert as it now stands and whether
/// this input opened it.
#[derive(Debug, Clone, PartialEq)]
pub struct AlertUpdate {
    pub decision: AlertDecision,
    pub created: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub cooldown_ms: u64,
    pub initial_arm: ArmState,
    pub recent_detections: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            cooldown_ms: 60_000,
            initial_arm: ArmState::Disarmed,
            recent_detections: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArmTransition {
    pub actor: String,
    pub from: ArmState,
    pub to: ArmState,
    #[serde(serialize_with = "iso::serialize")]
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LastEvent {
    pub magnitude: f64,
    #[serde(serialize_with = "iso::serialize")]
    pub timestamp: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorStatus {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub last_event: Option<LastEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlertView {
    pub alert_id: u64,
    pub severity: Severity,
    #[serde(serialize_with = "iso::serialize")]
    pub created_at: u64,
    pub repeat_count: u32,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionView {
    pub category: String,
    pub score: f64,
    pub flow_key: FlowKey,
    pub window_id: u64,
    #[serde(serialize_with = "iso::serialize")]
    pub detected_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusReport {
    pub arm_state: ArmState,
    pub sensors: Vec<SensorStatus>,
    pub open_alerts: Vec<AlertView>,
    pub recent_detections: Vec<DetectionView>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum AlertKey {
    Sensor(String),
    Flow(FlowKey),
}

struct State {
    arm: ArmState,
    last_events: BTreeMap<String, SensorEvent>,
    open: BTreeMap<AlertKey, AlertDecision>,
    next_alert_id: u64,
    detections: VecDeque<Detection>,
    logical_now: u64,
}

pub struct Controller {
    cfg: ControllerConfig,
    sensors: Vec<SensorSpec>,
    store: Arc<EventStore>,
    clock: Arc<dyn Clock>,
    sinks: Vec<Arc<dyn AlertSink>>,
    state: Mutex<State>,
}

impl fmt::Debug for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Controller")
            .field("cfg", &self.cfg)
            .field("sensors", &self.sensors)
            .finish()
    }
}

impl Controller {
    /// Alert ids continue after the highest one already in the store.
    pub fn new(
        cfg: ControllerConfig,
        sensors: Vec<SensorSpec>,
        store: Arc<EventStore>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        let last_id = store
            .all()
            .iter()
            .filter(|e| e.kind == EntryKind::Alert)
            .filter_map(|e| e.payload.get("alert_id").and_then(Value::as_u64))
            .max()
            .unwrap_or(0);
        Self {
            state: Mutex::new(State {
                arm: cfg.initial_arm,
                last_events: BTreeMap::new(),
                open: BTreeMap::new(),
                next_alert_id: last_id + 1,
                detections: VecDeque::new(),
                logical_now: 0,
            }),
            cfg,
            sensors,
            store,
            clock,
            sinks: Vec::new(),
        }
    }

    pub fn with_sink(mut self, sink: Arc<dyn AlertSink>) -> Self {
        self.sinks.push(sink);
        self
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    pub fn arm_state(&self) -> ArmState {
        self.lock().arm
    }

    /// Persists the event and raises or extends an alert if it is a
    /// detection the current arm state cares about.
    pub fn ingest_event(&self, event: &SensorEvent) -> Result<Option<AlertUpdate>, ControllerError> {
        let spec = self
            .sensors
            .iter()
            .find(|s| s.id == event.sensor_id)
            .ok_or_else(|| ControllerError::UnknownSensor(event.sensor_id.clone()))?;
        let update = {
            let mut st = self.lock();
            let alerting = event.magnitude >= spec.threshold && (spec.kind.is_safety() || st.arm == ArmState::Armed);
            let update = if alerting {
                let severity = if spec.kind.is_safety() { Severity::Safety } else { Severity::Intrusion };
                let key = AlertKey::Sensor(event.sensor_id.clone());
                let cause = AlertCause::Sensor(event.clone());
                let update = self.stage_alert(&st, &key, cause, severity, event.timestamp);
                self.persist_alert(&mut st, key, &update, EntryKind::SensorEvent, event, event.timestamp)?;
                Some(update)
            } else {
                self.store.append(EntryKind::SensorEvent, event.timestamp, &Tagged { record: event, alert_id: None })?;
                None
            };
            st.last_events.insert(event.sensor_id.clone(), event.clone());
            st.logical_now = st.logical_now.max(event.timestamp);
            update
        };
        self.notify(update.as_ref());
        Ok(update)
    }

    /// Raises or extends a Network alert for an attack verdict.
    pub fn ingest_detection(&self, detection: &Detection) -> Result<AlertUpdate, ControllerError> {
        if !detection.verdict.is_attack() {
            return Err(ControllerError::NotAnAttack);
        }
        let update = {
            let mut st = self.lock();
            let key = AlertKey::Flow(detection.verdict.flow_key);
            let at = detection.detected_at;
            let cause = AlertCause::Network(detection.clone());
            let update = self.stage_alert(&st, &key, cause, Severity::Network, at);
            self.persist_alert(&mut st, key, &update, EntryKind::Detection, detection, at)?;
            st.detections.push_back(detection.clone());
            while st.detections.len() > self.cfg.recent_detections {
                st.detections.pop_front();
            }
            st.logical_now = st.logical_now.max(at);
            update
        };
        self.notify(Some(&update));
        Ok(update)
    }

    /// Changes arm state on behalf of the token's owner. Setting the current
    /// state again is recorded as a no-op transition.
    pub fn set_arm(&self, to: ArmState, token: &str, auth: &AuthService) -> Result<ArmTransition, ControllerError> {
        let now = self.clock.now_ms();
        let actor = auth
            .validate_token(token, now)
            .map_err(|_| ControllerError::Unauthorized)?;
        self.set_arm_as(&actor, to, now)
    }

    /// Arm/disarm without a token, for local operator paths that have
    /// already authenticated the actor.
    pub fn set_arm_as(&self, actor: &str, to: ArmState, now: u64) -> Result<ArmTransition, ControllerError> {
        let mut st = self.lock();
        let transition = ArmTransition {
            actor: actor.to_string(),
            from: st.arm,
            to,
            timestamp: now,
        };
        self.store.append(EntryKind::ArmTransition, now, &transition)?;
        st.arm = to;
        Ok(transition)
    }

    pub fn snapshot_status(&self) -> StatusReport {
        let st = self.lock();
        let now = st.logical_now.max(self.clock.now_ms());
        let sensors = self
            .sensors
            .iter()
            .map(|s| SensorStatus {
                sensor_id: s.id.clone(),
                kind: s.kind,
                last_event: st.last_events.get(&s.id).map(|e| LastEvent {
                    magnitude: e.magnitude,
                    timestamp: e.timestamp,
                    snapshot_ref: e.snapshot_ref.clone(),
                }),
            })
            .collect();
        let mut open: Vec<&AlertDecision> = st
            .open
            .values()
            .filter(|a| now < a.created_at.saturating_add(self.cfg.cooldown_ms))
            .collect();
        open.sort_by_key(|a| a.alert_id);
        StatusReport {
            arm_state: st.arm,
            sensors,
            open_alerts: open
                .into_iter()
                .map(|a| AlertView {
                    alert_id: a.alert_id,
                    severity: a.severity,
                    created_at: a.created_at,
                    repeat_count: a.repeat_count,
                    summary: crate::notify::render_alert(a, &Default::default()).body,
                })
                .collect(),
            recent_detections: st
                .detections
                .iter()
                .rev()
                .map(|d| DetectionView {
                    category: d.verdict.category.map_or_else(String::new, |c| c.to_string()),
                    score: d.verdict.score,
                    flow_key: d.verdict.flow_key,
                    window_id: d.verdict.window_id,
                    detected_at: d.detected_at,
                })
                .collect(),
        }
    }

    /// Store entries (sensor events or detections) tagged with `alert_id`.
    pub fn causes_of(&self, alert_id: u64) -> Vec<crate::store::LogEntry> {
        self.store
            .all()
            .into_iter()
            .filter(|e| matches!(e.kind, EntryKind::SensorEvent | EntryKind::Detection))
            .filter(|e| e.payload.get("alert_id").and_then(Value::as_u64) == Some(alert_id))
            .collect()
    }

    // Computes the alert this input produces without touching state, so a
    // failed append leaves the controller unchanged and ids gapless.
    fn stage_alert(
        &self,
        st: &State,
        key: &AlertKey,
        cause: AlertCause,
        severity: Severity,
        at: u64,
    ) -> AlertUpdate {
        match st.open.get(key) {
            Some(open) if at < open.created_at.saturating_add(self.cfg.cooldown_ms) => {
                let mut decision = open.clone();
                decision.repeat_count += 1;
                decision.causes.push(cause);
                AlertUpdate { decision, created: false }
            }
            _ => AlertUpdate {
                decision: AlertDecision {
                    alert_id: st.next_alert_id,
                    causes: vec![cause],
                    severity,
                    created_at: at,
                    repeat_count: 1,
                },
                created: true,
            },
        }
    }

    fn persist_alert<T: Serialize>(
        &self,
        st: &mut State,
        key: AlertKey,
        update: &AlertUpdate,
        kind: EntryKind,
        cause: &T,
        at: u64,
    ) -> Result<(), ControllerError> {
        let alert_id = Some(update.decision.alert_id);
        self.store.append(kind, at, &Tagged { record: cause, alert_id })?;
        // Once a cause carries the id on disk, the id is spent.
        st.commit(key, update, self.cfg.cooldown_ms, at);
        self.store.append(EntryKind::Alert, at, &update.decision)?;
        Ok(())
    }

    fn notify(&self, update: Option<&AlertUpdate>) {
        if let Some(u) = update.filter(|u| u.created) {
            for sink in &self.sinks {
                sink.on_alert(&u.decision);
            }
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("controller state poisoned")
    }
}

impl State {
    fn commit(&mut self, key: AlertKey, update: &AlertUpdate, cooldown_ms: u64, at: u64) {
        if update.created {
            self.next_alert_id += 1;
        }
        self.open.insert(key, update.decision.clone());
        self.logical_now = self.logical_now.max(at);
        let now = self.logical_now;
        self.open.retain(|_, a| now < a.created_at.saturating_add(cooldown_ms));
    }
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(flatten)]
    record: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    alert_id: Option<u64>,
}
