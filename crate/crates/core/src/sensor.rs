//! Simulated sensor fleet and scripted scenarios.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::store::{snapshot_ref, SnapshotSink, StoreError};

pub const DEFAULT_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("duplicate sensor id {0:?}")]
    DuplicateSensorId(String),
    #[error("unknown sensor kind {0:?}")]
    UnknownKind(String),
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("sensor {sensor_id:?}: time {at_ms} ms precedes last event at {last_ms} ms")]
    NonMonotonicTime { sensor_id: String, at_ms: u64, last_ms: u64 },
    #[error("magnitude must be finite and non-negative, got {0}")]
    InvalidMagnitude(f64),
    #[error("invalid scenario script: {0}")]
    InvalidScript(String),
    #[error("snapshot store: {0}")]
    Snapshot(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    Fire,
    Gas,
    Motion,
    Camera,
}

impl SensorKind {
    /// Fire and gas are life-safety sensors.
    pub fn is_safety(self) -> bool {
        matches!(self, SensorKind::Fire | SensorKind::Gas)
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::Fire => "fire",
            SensorKind::Gas => "gas",
            SensorKind::Motion => "motion",
            SensorKind::Camera => "camera",
        })
    }
}

impl FromStr for SensorKind {
    type Err = SensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fire" => Ok(SensorKind::Fire),
            "gas" => Ok(SensorKind::Gas),
            "motion" => Ok(SensorKind::Motion),
            "camera" => Ok(SensorKind::Camera),
            _ => Err(SensorError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    pub threshold: f64,
}

impl SensorSpec {
    pub fn new(id: impl Into<String>, kind: SensorKind) -> Self {
        Self {
            id: id.into(),
            kind,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub sensors: Vec<SensorSpec>,
}

impl Default for FleetConfig {
    /// fire1, gas1, motion1, motion2, cam1.
    fn default() -> Self {
        Self {
            sensors: vec![
                SensorSpec::new("fire1", SensorKind::Fire),
                SensorSpec::new("gas1", SensorKind::Gas),
                SensorSpec::new("motion1", SensorKind::Motion),
                SensorSpec::new("motion2", SensorKind::Motion),
                SensorSpec::new("cam1", SensorKind::Camera),
            ],
        }
    }
}

impl FleetConfig {
    pub fn empty() -> Self {
        Self { sensors: Vec::new() }
    }

    /// Builds a config from `(id, kind-name)` pairs plus optional thresholds.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        thresholds: &BTreeMap<String, f64>,
    ) -> Result<Self, SensorError> {
        let sensors = pairs
            .into_iter()
            .map(|(id, kind)| {
                Ok(SensorSpec {
                    id: id.to_string(),
                    kind: kind.parse()?,
                    threshold: thresholds.get(id).copied().unwrap_or(DEFAULT_THRESHOLD),
                })
            })
            .collect::<Result<Vec<_>, SensorError>>()?;
        Ok(Self { sensors })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub magnitude: f64,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_ref: Option<String>,
}

/// Keeps snapshots in memory when no store is attached to the fleet.
#[derive(Debug, Default)]
pub struct MemorySnapshots {
    blobs: Mutex<Vec<Vec<u8>>>,
}

impl MemorySnapshots {
    pub fn get(&self, reference: &str) -> Option<Vec<u8>> {
        let idx: usize = reference.strip_prefix("snap/")?.parse().ok()?;
        self.blobs.lock().ok()?.get(idx.checked_sub(1)?).cloned()
    }
}

impl SnapshotSink for MemorySnapshots {
    fn put_snapshot(&self, bytes: &[u8]) -> Result<String, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptySnapshot);
        }
        let mut blobs = self.blobs.lock().expect("snapshot lock poisoned");
        blobs.push(bytes.to_vec());
        Ok(snapshot_ref(blobs.len() as u64))
    }
}

#[derive(Debug, Clone)]
pub struct SensorHandle {
    pub spec: SensorSpec,
    last_ts: Option<u64>,
}

impl SensorHandle {
    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.last_ts
    }
}

pub struct Fleet {
    handles: Vec<SensorHandle>,
    snapshots: Arc<dyn SnapshotSink>,
}

impl fmt::Debug for Fleet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fleet").field("handles", &self.handles).finish()
    }
}

/// One handle per declared sensor, in declaration order.
pub fn build_fleet(config: &FleetConfig) -> Result<Fleet, SensorError> {
    let mut handles: Vec<SensorHandle> = Vec::with_capacity(config.sensors.len());
    for spec in &config.sensors {
        if handles.iter().any(|h| h.spec.id == spec.id) {
            return Err(SensorError::DuplicateSensorId(spec.id.clone()));
        }
        if !spec.threshold.is_finite() || spec.threshold < 0.0 {
            return Err(SensorError::InvalidMagnitude(spec.threshold));
        }
        handles.push(SensorHandle {
            spec: spec.clone(),
            last_ts: None,
        });
    }
    Ok(Fleet {
        handles,
        snapshots: Arc::new(MemorySnapshots::default()),
    })
}

impl Fleet {
    /// Routes camera snapshots to `sink` instead of the private in-memory one.
    pub fn with_snapshots(mut self, sink: Arc<dyn SnapshotSink>) -> Self {
        self.snapshots = sink;
        self
    }

    pub fn handles(&self) -> &[SensorHandle] {
        &self.handles
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn spec(&self, sensor_id: &str) -> Option<&SensorSpec> {
        self.handles.iter().find(|h| h.spec.id == sensor_id).map(|h| &h.spec)
    }

    pub fn specs(&self) -> Vec<SensorSpec> {
        self.handles.iter().map(|h| h.spec.clone()).collect()
    }

    pub fn trigger(&mut self, sensor_id: &str, magnitude: f64, at_ms: u64) -> Result<SensorEvent, SensorError> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(SensorError::InvalidMagnitude(magnitude));
        }
        let handle = self
            .handles
            .iter_mut()
            .find(|h| h.spec.id == sensor_id)
            .ok_or_else(|| SensorError::UnknownSensor(sensor_id.to_string()))?;
        if let Some(last_ms) = handle.last_ts {
            if at_ms < last_ms {
                return Err(SensorError::NonMonotonicTime {
                    sensor_id: sensor_id.to_string(),
                    at_ms,
                    last_ms,
                });
            }
        }
        let snapshot_ref = if handle.spec.kind == SensorKind::Camera && magnitude >= handle.spec.threshold {
            Some(self.snapshots.put_snapshot(&render_snapshot(sensor_id, at_ms))?)
        } else {
            None
        };
        handle.last_ts = Some(at_ms);
        Ok(SensorEvent {
            sensor_id: sensor_id.to_string(),
            kind: handle.spec.kind,
            magnitude,
            timestamp: at_ms,
            snapshot_ref,
        })
    }
}

/// A tiny deterministic PPM image standing in for a camera frame.
fn render_snapshot(sensor_id: &str, at_ms: u64) -> Vec<u8> {
    const SIDE: u64 = 8;
    let mut img = format!("P6\n{SIDE} {SIDE}\n255\n").into_bytes();
    let seed = sensor_id.bytes().fold(at_ms, |acc, b| acc.wrapping_mul(31).wrapping_add(b as u64));
    for i in 0..SIDE * SIDE {
        let v = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        img.extend_from_slice(&[(v >> 8) as u8, (v >> 24) as u8, (v >> 40) as u8]);
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at_ms: u64,
    pub sensor_id: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub entries: Vec<ScriptEntry>,
    pub duration_ms: u64,
}

impl ScenarioScript {
    /// Script whose duration is the last entry time.
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let duration_ms = entries.iter().map(|e| e.at_ms).max().unwrap_or(0);
        Self { entries, duration_ms }
    }

    /// Parses `at_ms,sensor_id,magnitude` CSV (header required).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, SensorError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| SensorError::InvalidScript(e.to_string()))?
            .clone();
        let expected = ["at_ms", "sensor_id", "magnitude"];
        if headers.iter().ne(expected) {
            return Err(SensorError::InvalidScript(format!(
                "expected header {}, found {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in rdr.deserialize::<ScriptEntry>().enumerate() {
            let entry = rec.map_err(|e| SensorError::InvalidScript(format!("row {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn validate(&self, fleet: &Fleet) -> Result<(), SensorError> {
        for (i, entry) in self.entries.iter().enumerate() {
            if i > 0 && entry.at_ms < self.entries[i - 1].at_ms {
                return Err(SensorError::InvalidScript(format!("entry {} is out of order", i + 1)));
            }
            if entry.at_ms > self.duration_ms {
                return Err(SensorError::InvalidScript(format!(
                    "entry {} at {} ms is past the {} ms duration",
                    i + 1,
                    entry.at_ms,
                    self.duration_ms
                )));
            }
            if fleet.spec(&entry.sensor_id).is_none() {
                return Err(SensorError::InvalidScript(format!(
                    "entry {} names undeclared sensor {:?}",
                    i + 1,
                    entry.sensor_id
                )));
            }
        }
        Ok(())
    }
}

/// Replays a script against a fleet. Entry times are offsets from the clock
/// reading when the run starts; the clock is driven (simulated) or awaited
/// (wall) before each trigger.
pub struct ScenarioRun<'a> {
    fleet: &'a mut Fleet,
    clock: &'a dyn Clock,
    entries: std::vec::IntoIter<ScriptEntry>,
    base_ms: u64,
    failed: bool,
}

impl Iterator for ScenarioRun<'_> {
    type Item = Result<SensorEvent, SensorError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let entry = self.entries.next()?;
        let at = self.base_ms + entry.at_ms;
        self.clock.wait_until(at);
        let res = self.fleet.trigger(&entry.sensor_id, entry.magnitude, at);
        self.failed = res.is_err();
        Some(res)
    }
}

pub fn run_scenario<'a>(
    fleet: &'a mut Fleet,
    script: &ScenarioScript,
    clock: &'a dyn Clock,
) -> Result<ScenarioRun<'a>, SensorError> {
    script.validate(fleet)?;
    let base_ms = clock.now_ms();
    Ok(ScenarioRun {
        fleet,
        clock,
        entries: script.entries.clone().into_iter(),
        base_ms,
        failed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;

    #[test]
    fn default_fleet_matches_the_installed_suite() {
        let fleet = build_fleet(&FleetConfig::default()).unwrap();
        assert_eq!(fleet.len(), 5);
        let count = |k| fleet.handles().iter().filter(|h| h.spec.kind == k).count();
        assert_eq!(count(SensorKind::Fire), 1);
        assert_eq!(count(SensorKind::Gas), 1);
        assert_eq!(count(SensorKind::Motion), 2);
        assert_eq!(count(SensorKind::Camera), 1);
        let ids: Vec<_> = fleet.handles().iter().map(|h| h.id()).collect();
        assert_eq!(ids, ["fire1", "gas1", "motion1", "motion2", "cam1"]);
    }

    #[test]
    fn empty_config_gives_empty_fleet() {
        assert!(build_fleet(&FleetConfig::empty()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let cfg = FleetConfig {
            sensors: vec![
                SensorSpec::new("motion1", SensorKind::Motion),
                SensorSpec::new("motion1", SensorKind::Motion),
            ],
        };
        assert!(matches!(build_fleet(&cfg), Err(SensorError::DuplicateSensorId(id)) if id == "motion1"));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let err = FleetConfig::from_pairs([("x1", "laser")], &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, SensorError::UnknownKind(k) if k == "laser"));
    }

    #[test]
    fn trigger_builds_plain_events() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        let ev = fleet.trigger("gas1", 5.0, 1000).unwrap();
        assert_eq!(
            ev,
            SensorEvent {
                sensor_id: "gas1".into(),
                kind: SensorKind::Gas,
                magnitude: 5.0,
                timestamp: 1000,
                snapshot_ref: None,
            }
        );
    }

    #[test]
    fn camera_detection_stores_a_snapshot() {
        let sink = Arc::new(MemorySnapshots::default());
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap().with_snapshots(sink.clone());
        let ev = fleet.trigger("cam1", 2.0, 1500).unwrap();
        let r = ev.snapshot_ref.expect("camera detection carries a snapshot");
        assert_eq!(r, "snap/1");
        assert!(sink.get(&r).unwrap().starts_with(b"P6\n"));
        // sub-threshold camera readings take no picture
        assert!(fleet.trigger("cam1", 0.5, 1600).unwrap().snapshot_ref.is_none());
    }

    #[test]
    fn time_must_not_go_backwards_per_sensor() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        fleet.trigger("gas1", 5.0, 1000).unwrap();
        assert!(matches!(
            fleet.trigger("gas1", 5.0, 900),
            Err(SensorError::NonMonotonicTime { at_ms: 900, last_ms: 1000, .. })
        ));
        // other sensors keep their own timeline
        fleet.trigger("fire1", 0.0, 900).unwrap();
    }

    #[test]
    fn unknown_sensor_and_bad_magnitude() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        assert!(matches!(fleet.trigger("nope", 1.0, 0), Err(SensorError::UnknownSensor(_))));
        assert!(matches!(fleet.trigger("gas1", -1.0, 0), Err(SensorError::InvalidMagnitude(_))));
        assert!(matches!(fleet.trigger("gas1", f64::NAN, 0), Err(SensorError::InvalidMagnitude(_))));
    }

    #[test]
    fn empty_script_yields_nothing() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        let clock = SimClock::new();
        let events: Vec<_> = run_scenario(&mut fleet, &ScenarioScript::default(), &clock).unwrap().collect();
        assert!(events.is_empty());
    }

    #[test]
    fn single_entry_script() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        let clock = SimClock::new();
        let script = ScenarioScript::new(vec![ScriptEntry {
            at_ms: 5000,
            sensor_id: "gas1".into(),
            magnitude: 5.0,
        }]);
        let events: Vec<_> = run_scenario(&mut fleet, &script, &clock)
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].timestamp, 5000);
        assert_eq!(clock.now_ms(), 5000);
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut fleet = build_fleet(&FleetConfig::default()).unwrap();
        let clock = SimClock::new();
        let unsorted = ScenarioScript::new(vec![
            ScriptEntry { at_ms: 10, sensor_id: "gas1".into(), magnitude: 1.0 },
            ScriptEntry { at_ms: 5, sensor_id: "gas1".into(), magnitude: 1.0 },
        ]);
        assert!(matches!(run_scenario(&mut fleet, &unsorted, &clock), Err(SensorError::InvalidScript(_))));
        let undeclared = ScenarioScript::new(vec![ScriptEntry { at_ms: 1, sensor_id: "door9".into(), magnitude: 1.0 }]);
        assert!(matches!(run_scenario(&mut fleet, &undeclared, &clock), Err(SensorError::InvalidScript(_))));
        let too_long = ScenarioScript {
            entries: vec![ScriptEntry { at_ms: 50, sensor_id: "gas1".into(), magnitude: 1.0 }],
            duration_ms: 10,
        };
        assert!(matches!(run_scenario(&mut fleet, &too_long, &clock), Err(SensorError::InvalidScript(_))));
    }

    #[test]
    fn script_csv_parses() {
        let text = "at_ms,sensor_id,magnitude\n5000,gas1,5.0\n6000, motion1 ,2\n";
        let script = ScenarioScript::from_csv(text.as_bytes()).unwrap();
        assert_eq!(script.entries.len(), 2);
        assert_eq!(script.entries[1].sensor_id, "motion1");
        assert_eq!(script.duration_ms, 6000);
        assert!(ScenarioScript::from_csv("t,id,m\n".as_bytes()).is_err());
        assert!(ScenarioScript::from_csv("at_ms,sensor_id,magnitude\nx,gas1,1\n".as_bytes()).is_err());
    }
}
