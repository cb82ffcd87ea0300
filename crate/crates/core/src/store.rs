//! Append-only event log plus camera snapshot blobs.
//!
//! The log is newline-delimited JSON, one record per line:
//! `{"seq":N,"kind":"...","ts":...,"payload":{...}}`. Sequence numbers start
//! at 1 and never have gaps within a file. Snapshots live as individual files
//! under `snapshots/`, addressed by refs of the form `snap/<n>`.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const DEFAULT_QUERY_LIMIT: usize = 100;
pub const MAX_QUERY_LIMIT: usize = 1_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full")]
    StorageFull,
    #[error("serialization failed: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("unknown snapshot {0:?}")]
    UnknownSnapshot(String),
    #[error("snapshot must not be empty")]
    EmptySnapshot,
    #[error("corrupt log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StoreError::StorageFull
        } else {
            StoreError::Io(e)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryKind {
    SensorEvent,
    Alert,
    Detection,
    Receipt,
    AuthAudit,
    ArmTransition,
}

impl EntryKind {
    pub const ALL: [EntryKind; 6] = [
        EntryKind::SensorEvent,
        EntryKind::Alert,
        EntryKind::Detection,
        EntryKind::Receipt,
        EntryKind::AuthAudit,
        EntryKind::ArmTransition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::SensorEvent => "SensorEvent",
            EntryKind::Alert => "Alert",
            EntryKind::Detection => "Detection",
            EntryKind::Receipt => "Receipt",
            EntryKind::AuthAudit => "AuthAudit",
            EntryKind::ArmTransition => "ArmTransition",
        }
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntryKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntryKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| StoreError::InvalidFilter(format!("unknown kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub ts: u64,
    pub payload: Value,
}

impl LogEntry {
    /// The `sensor_id` field of the payload, if it has one.
    pub fn sensor_id(&self) -> Option<&str> {
        self.payload.get("sensor_id").and_then(Value::as_str)
    }
}

/// All fields optional; present fields are ANDed. The time range is inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub kind: Option<EntryKind>,
    pub since: Option<u64>,
    pub until: Option<u64>,
    pub sensor_id: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

impl QueryFilter {
    pub fn kind(kind: EntryKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<usize, StoreError> {
        if let (Some(since), Some(until)) = (self.since, self.until) {
            if since > until {
                return Err(StoreError::InvalidFilter(format!(
                    "since ({since}) is after until ({until})"
                )));
            }
        }
        match self.limit {
            None => Ok(DEFAULT_QUERY_LIMIT),
            Some(0) => Err(StoreError::InvalidFilter("limit must be at least 1".into())),
            Some(n) if n > MAX_QUERY_LIMIT => Err(StoreError::InvalidFilter(format!(
                "limit {n} exceeds maximum {MAX_QUERY_LIMIT}"
            ))),
            Some(n) => Ok(n),
        }
    }

    fn matches(&self, entry: &LogEntry) -> bool {
        self.kind.map_or(true, |k| entry.kind == k)
            && self.since.map_or(true, |t| entry.ts >= t)
            && self.until.map_or(true, |t| entry.ts <= t)
            && self
                .sensor_id
                .as_deref()
                .map_or(true, |id| entry.sensor_id() == Some(id))
    }
}

#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    /// fsync after every append, not just flush to the OS.
    pub fsync: bool,
    /// Refuse appends that would grow the log past this many bytes.
    pub max_log_bytes: Option<u64>,
}

pub type Listener = Arc<dyn Fn(&LogEntry) + Send + Sync>;

/// Anything that can keep a camera snapshot and hand back a ref for it.
pub trait SnapshotSink: Send + Sync {
    fn put_snapshot(&self, bytes: &[u8]) -> Result<String, StoreError>;
}

struct Inner {
    file: Option<File>,
    entries: Vec<LogEntry>,
    bytes: u64,
}

enum Blobs {
    Dir(PathBuf),
    Memory(HashMap<u64, Vec<u8>>),
}

struct Snapshots {
    blobs: Blobs,
    next: u64,
}

pub struct EventStore {
    dir: Option<PathBuf>,
    options: StoreOptions,
    inner: RwLock<Inner>,
    snapshots: Mutex<Snapshots>,
    listeners: Mutex<Vec<Listener>>,
}

impl fmt::Debug for EventStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventStore")
            .field("dir", &self.dir)
            .field("len", &self.len())
            .finish()
    }
}

impl EventStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(dir.join(SNAPSHOT_DIR))?;
        let path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let (entries, good_len) = load_entries(&mut file)?;
        let file_len = file.metadata()?.len();
        if good_len < file_len {
            // torn trailing record from an interrupted write
            file.set_len(good_len)?;
        }
        file.seek(SeekFrom::End(0))?;

        let next_snapshot = fs::read_dir(dir.join(SNAPSHOT_DIR))?
            .filter_map(|e| e.ok()?.file_name().to_str()?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);

        Ok(Self {
            snapshots: Mutex::new(Snapshots {
                blobs: Blobs::Dir(dir.join(SNAPSHOT_DIR)),
                next: next_snapshot,
            }),
            dir: Some(dir),
            options,
            inner: RwLock::new(Inner {
                file: Some(file),
                entries,
                bytes: good_len,
            }),
            listeners: Mutex::new(Vec::new()),
        })
    }

    /// A store that keeps everything in memory; nothing survives drop.
    pub fn in_memory() -> Self {
        Self::in_memory_with(StoreOptions::default())
    }

    pub fn in_memory_with(options: StoreOptions) -> Self {
        Self {
            dir: None,
            options,
            inner: RwLock::new(Inner {
                file: None,
                entries: Vec::new(),
                bytes: 0,
            }),
            snapshots: Mutex::new(Snapshots {
                blobs: Blobs::Memory(HashMap::new()),
                next: 1,
            }),
            listeners: Mutex::new(Vec::new()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Appends one record and returns its sequence number. The record is
    /// written to the OS (and fsynced if configured) before this returns.
    pub fn append<T: Serialize>(&self, kind: EntryKind, ts: u64, payload: &T) -> Result<u64, StoreError> {
        let payload = serde_json::to_value(payload)?;
        let mut inner = self.inner.write().expect("store lock poisoned");
        let entry = LogEntry {
            seq: inner.entries.len() as u64 + 1,
            kind,
            ts,
            payload,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        if let Some(max) = self.options.max_log_bytes {
            if inner.bytes + line.len() as u64 > max {
                return Err(StoreError::StorageFull);
            }
        }
        if let Some(file) = inner.file.as_mut() {
            file.write_all(&line)?;
            file.flush()?;
            if self.options.fsync {
                file.sync_data()?;
            }
        }
        inner.bytes += line.len() as u64;
        let seq = entry.seq;
        for listener in self.listeners.lock().expect("listener lock poisoned").iter() {
            listener(&entry);
        }
        inner.entries.push(entry);
        Ok(seq)
    }

    /// Entries matching every present filter field, in seq order.
    pub fn query(&self, filter: &QueryFilter) -> Result<Vec<LogEntry>, StoreError> {
        let limit = filter.validate()?;
        let inner = self.inner.read().expect("store lock poisoned");
        Ok(inner
            .entries
            .iter()
            .filter(|e| filter.matches(e))
            .skip(filter.offset.unwrap_or(0))
            .take(limit)
            .cloned()
            .collect())
    }

    pub fn get(&self, seq: u64) -> Option<LogEntry> {
        let inner = self.inner.read().expect("store lock poisoned");
        seq.checked_sub(1)
            .and_then(|i| inner.entries.get(i as usize))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every entry, in seq order.
    pub fn all(&self) -> Vec<LogEntry> {
        self.inner.read().expect("store lock poisoned").entries.clone()
    }

    /// Registers a callback invoked for every new entry, in seq order, while
    /// the append lock is held. Callbacks must not block.
    pub fn subscribe(&self, listener: Listener) {
        self.listeners.lock().expect("listener lock poisoned").push(listener);
    }

    pub fn get_snapshot(&self, reference: &str) -> Result<Vec<u8>, StoreError> {
        let unknown = || StoreError::UnknownSnapshot(reference.to_string());
        let id = parse_snapshot_ref(reference).ok_or_else(unknown)?;
        let snaps = self.snapshots.lock().expect("snapshot lock poisoned");
        match &snaps.blobs {
            Blobs::Dir(dir) => match fs::read(dir.join(id.to_string())) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Err(unknown()),
                Err(e) => Err(e.into()),
            },
            Blobs::Memory(map) => map.get(&id).cloned().ok_or_else(unknown),
        }
    }
}

impl SnapshotSink for EventStore {
    fn put_snapshot(&self, bytes: &[u8]) -> Result<String, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptySnapshot);
        }
        let mut snaps = self.snapshots.lock().expect("snapshot lock poisoned");
        let id = snaps.next;
        match &mut snaps.blobs {
            Blobs::Dir(dir) => {
                let tmp = dir.join(format!(".{id}.tmp"));
                let mut f = File::create(&tmp)?;
                f.write_all(bytes)?;
                if self.options.fsync {
                    f.sync_all()?;
                }
                fs::rename(&tmp, dir.join(id.to_string()))?;
            }
            Blobs::Memory(map) => {
                map.insert(id, bytes.to_vec());
            }
        }
        snaps.next += 1;
        Ok(snapshot_ref(id))
    }
}

pub fn snapshot_ref(id: u64) -> String {
    format!("snap/{id}")
}

fn parse_snapshot_ref(reference: &str) -> Option<u64> {
    let digits = reference.strip_prefix("snap/")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Reads every complete record. Returns the entries and the byte length of
/// the well-formed prefix; an unterminated or unparsable final line is
/// treated as a torn write and excluded.
fn load_entries(file: &mut File) -> Result<(Vec<LogEntry>, u64), StoreError> {
    file.seek(SeekFrom::Start(0))?;
    let mut reader = BufReader::new(file);
    let mut entries = Vec::new();
    let mut good_len = 0u64;
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = buf.last() == Some(&b'\n');
        let parsed: Result<LogEntry, _> = serde_json::from_slice(&buf);
        match parsed {
            Ok(entry) if complete => {
                let expected = entries.len() as u64 + 1;
                if entry.seq != expected {
                    return Err(StoreError::Corrupt {
                        line: line_no,
                        reason: format!("expected seq {expected}, found {}", entry.seq),
                    });
                }
                entries.push(entry);
                good_len += n as u64;
            }
            Ok(_) => break,
            Err(e) => {
                // Only the last line may be torn; peek for more data.
                let more = !reader.fill_buf()?.is_empty();
                if complete && more {
                    return Err(StoreError::Corrupt {
                        line: line_no,
                        reason: e.to_string(),
                    });
                }
                break;
            }
        }
    }
    Ok((entries, good_len))
}
