//! Alert rendering and delivery.
//!
//! SMS and Call go to the GSM adapter, which here is a spool directory with
//! one file per message. Email uses the same spool format in its own
//! directory. Webhooks are plain HTTP/1.1 POSTs.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::KeyDelivery;
use crate::clock::Clock;
use crate::controller::{AlertCause, AlertDecision, AlertSink, Severity};
use crate::store::{EntryKind, EventStore, StoreError};
use crate::time_fmt::iso8601_ms;

pub const MAX_BODY_CHARS: usize = 480;

static SPOOL_SEQ: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("alert message must have a body and at least one channel")]
    InvalidMessage,
    #[error("persisting receipt: {0}")]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct SinkError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "SMS")]
    Sms,
    Call,
    Email,
    Webhook,
    Console,
}

impl Channel {
    pub fn tag(self) -> &'static str {
        match self {
            Channel::Sms => "sms",
            Channel::Call => "call",
            Channel::Email => "email",
            Channel::Webhook => "webhook",
            Channel::Console => "console",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sms" => Ok(Channel::Sms),
            "call" => Ok(Channel::Call),
            "email" => Ok(Channel::Email),
            "webhook" => Ok(Channel::Webhook),
            "console" => Ok(Channel::Console),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertMessage {
    pub alert_id: u64,
    pub severity: Severity,
    pub body: String,
    pub channels: BTreeSet<Channel>,
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryStatus {
    Delivered,
    Failed,
    Deduplicated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub alert_id: u64,
    pub channel: Channel,
    pub status: DeliveryStatus,
    pub attempts: u32,
    pub completed_at: u64,
}

/// Which channels each severity goes out on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPolicy {
    pub safety: BTreeSet<Channel>,
    pub intrusion: BTreeSet<Channel>,
    pub network: BTreeSet<Channel>,
}

impl Default for ChannelPolicy {
    fn default() -> Self {
        Self {
            safety: [Channel::Sms, Channel::Call].into(),
            intrusion: [Channel::Sms].into(),
            network: [Channel::Sms, Channel::Webhook].into(),
        }
    }
}

impl ChannelPolicy {
    pub fn channels_for(&self, severity: Severity) -> &BTreeSet<Channel> {
        match severity {
            Severity::Safety => &self.safety,
            Severity::Intrusion => &self.intrusion,
            Severity::Network => &self.network,
        }
    }
}

/// `[<SEVERITY>] <cause summary> at <ISO-8601> (x<repeat_count>)`.
pub fn render_alert(decision: &AlertDecision, policy: &ChannelPolicy) -> AlertMessage {
    let summary = decision
        .causes
        .first()
        .map(summarize_cause)
        .unwrap_or_else(|| "unknown cause".to_string());
    let mut body = format!(
        "[{}] {} at {} (x{})",
        decision.severity.label(),
        summary,
        iso8601_ms(decision.created_at),
        decision.repeat_count
    );
    if body.chars().count() > MAX_BODY_CHARS {
        body = body.chars().take(MAX_BODY_CHARS).collect();
    }
    AlertMessage {
        alert_id: decision.alert_id,
        severity: decision.severity,
        body,
        channels: policy.channels_for(decision.severity).clone(),
        created_at: decision.created_at,
    }
}

fn summarize_cause(cause: &AlertCause) -> String {
    match cause {
        AlertCause::Sensor(ev) => format!("{} detection (magnitude {:?})", ev.sensor_id, ev.magnitude),
        AlertCause::Network(det) => {
            let v = &det.verdict;
            let k = &v.flow_key;
            format!(
                "{} attack {}:{} -> {}:{} {} (score {:.2})",
                v.category.map_or("unknown".to_string(), |c| c.to_string()),
                k.initiator_ip,
                k.initiator_port,
                k.responder_ip,
                k.responder_port,
                k.proto,
                v.score
            )
        }
    }
}

pub trait Sink: Send + Sync {
    fn deliver(&self, channel: Channel, msg: &AlertMessage, now_ms: u64) -> Result<(), SinkError>;
}

/// Writes `<epoch_ms>_<seq>.<tag>.msg` into `dir` and returns its path. The
/// sequence number is unique within the process.
pub fn write_spool_file(dir: &Path, now_ms: u64, tag: &str, body: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let seq = SPOOL_SEQ.fetch_add(1, Ordering::Relaxed);
    let name = format!("{now_ms}_{seq}.{tag}.msg");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, body)?;
    let path = dir.join(name);
    fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Spool files whose name ends in `.<tag>.msg`, sorted by name.
pub fn list_spool(dir: &Path, tag: &str) -> Vec<PathBuf> {
    let suffix = format!(".{tag}.msg");
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(&suffix) && !n.starts_with('.'))
        })
        .collect();
    files.sort();
    files
}

/// One spool file per message: `TO:` line, `SEVERITY:` line, blank line, body.
#[derive(Debug, Clone)]
pub struct SpoolSink {
    dir: PathBuf,
    recipient: String,
}

impl SpoolSink {
    pub fn new(dir: impl Into<PathBuf>, recipient: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            recipient: recipient.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Sink for SpoolSink {
    fn deliver(&self, channel: Channel, msg: &AlertMessage, now_ms: u64) -> Result<(), SinkError> {
        let body = format!(
            "TO: {}\nSEVERITY: {}\n\n{}\n",
            self.recipient,
            msg.severity.label(),
            msg.body
        );
        write_spool_file(&self.dir, now_ms, channel.tag(), &body)
            .map(|_| ())
            .map_err(|e| SinkError(e.to_string()))
    }
}

/// Out-of-band one-time key delivery through the email spool.
#[derive(Debug, Clone)]
pub struct EmailKeySpool {
    dir: PathBuf,
}

impl EmailKeySpool {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl KeyDelivery for EmailKeySpool {
    fn deliver_key(&self, contact: &str, login_id: &str, key: &str, now_ms: u64) -> Result<(), String> {
        let body = format!("TO: {contact}\nLOGIN: {login_id}\nKEY: {key}\n");
        write_spool_file(&self.dir, now_ms, Channel::Email.tag(), &body)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

/// Parsed out-of-band key message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMessage {
    pub to: String,
    pub login_id: String,
    pub key: String,
}

impl FromStr for KeyMessage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines();
        let mut field = |prefix: &str| {
            lines
                .next()
                .and_then(|l| l.strip_prefix(prefix))
                .map(|v| v.trim().to_string())
                .ok_or_else(|| format!("missing {prefix} line"))
        };
        Ok(Self {
            to: field("TO:")?,
            login_id: field("LOGIN:")?,
            key: field("KEY:")?,
        })
    }
}

/// The spooled key message for `login_id`, if one was delivered to `dir`.
pub fn find_key_message(dir: &Path, login_id: &str) -> Option<KeyMessage> {
    list_spool(dir, Channel::Email.tag())
        .iter()
        .filter_map(|p| fs::read_to_string(p).ok()?.parse::<KeyMessage>().ok())
        .find(|m| m.login_id == login_id)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConsoleSink;

impl Sink for ConsoleSink {
    fn deliver(&self, _channel: Channel, msg: &AlertMessage, _now_ms: u64) -> Result<(), SinkError> {
        eprintln!("ALERT #{} {}", msg.alert_id, msg.body);
        Ok(())
    }
}

/// POSTs the message as JSON to an `http://host[:port]/path` URL.
#[derive(Debug, Clone)]
pub struct WebhookSink {
    host: String,
    port: u16,
    path: String,
    timeout: Duration,
}

impl WebhookSink {
    pub fn new(url: &str) -> Result<Self, SinkError> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| SinkError(format!("only http:// webhooks are supported: {url}")))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (h, p.parse().map_err(|_| SinkError(format!("bad port in {url}")))?),
            None => (authority, 80),
        };
        if host.is_empty() {
            return Err(SinkError(format!("missing host in {url}")));
        }
        Ok(Self {
            host: host.to_string(),
            port,
            path: path.to_string(),
            timeout: Duration::from_secs(2),
        })
    }

    fn post(&self, body: &str) -> std::io::Result<u16> {
        let addr = (self.host.as_str(), self.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::other("webhook host did not resolve"))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        write!(
            stream,
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        )?;
        let mut head = [0u8; 12];
        stream.read_exact(&mut head)?;
        let status = std::str::from_utf8(&head[9..12])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| std::io::Error::other("malformed HTTP status line"))?;
        Ok(status)
    }
}

impl Sink for WebhookSink {
    fn deliver(&self, _channel: Channel, msg: &AlertMessage, _now_ms: u64) -> Result<(), SinkError> {
        let body = serde_json::to_string(msg).map_err(|e| SinkError(e.to_string()))?;
        match self.post(&body) {
            Ok(status) if (200..300).contains(&status) => Ok(()),
            Ok(status) => Err(SinkError(format!("webhook returned HTTP {status}"))),
            Err(e) => Err(SinkError(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifierConfig {
    pub dedup_window_ms: u64,
    /// Delay before each retry; its length is the retry budget.
    pub backoff_ms: Vec<u64>,
    pub policy: ChannelPolicy,
}

impl Default for NotifierConfig {
    fn default() -> Self {
        Self {
            dedup_window_ms: 60_000,
            backoff_ms: vec![1_000, 2_000, 4_000],
            policy: ChannelPolicy::default(),
        }
    }
}

pub struct Notifier {
    sinks: HashMap<Channel, Arc<dyn Sink>>,
    config: NotifierConfig,
    clock: Arc<dyn Clock>,
    store: Option<Arc<EventStore>>,
    recent: Mutex<HashMap<(Severity, String), u64>>,
}

impl fmt::Debug for Notifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Notifier")
            .field("channels", &self.sinks.keys().collect::<Vec<_>>())
            .field("config", &self.config)
            .finish()
    }
}

impl Notifier {
    pub fn new(config: NotifierConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            sinks: HashMap::new(),
            config,
            clock,
            store: None,
            recent: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_sink(mut self, channel: Channel, sink: Arc<dyn Sink>) -> Self {
        self.sinks.insert(channel, sink);
        self
    }

    pub fn with_store(mut self, store: Arc<EventStore>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn config(&self) -> &NotifierConfig {
        &self.config
    }

    pub fn render(&self, decision: &AlertDecision) -> AlertMessage {
        render_alert(decision, &self.config.policy)
    }

    /// Attempts every requested channel independently and persists one
    /// receipt per channel.
    pub fn dispatch(&self, msg: &AlertMessage) -> Result<Vec<DeliveryReceipt>, NotifyError> {
        if msg.body.is_empty() || msg.channels.is_empty() {
            return Err(NotifyError::InvalidMessage);
        }
        let now = self.clock.now_ms();
        let duplicate = {
            let mut recent = self.recent.lock().expect("dedup lock poisoned");
            let window = self.config.dedup_window_ms;
            recent.retain(|_, at| now.saturating_sub(*at) < window);
            let key = (msg.severity, msg.body.clone());
            if recent.contains_key(&key) {
                true
            } else {
                recent.insert(key, now);
                false
            }
        };

        let mut receipts = Vec::with_capacity(msg.channels.len());
        for &channel in &msg.channels {
            let receipt = if duplicate {
                DeliveryReceipt {
                    alert_id: msg.alert_id,
                    channel,
                    status: DeliveryStatus::Deduplicated,
                    attempts: 0,
                    completed_at: self.clock.now_ms().max(msg.created_at),
                }
            } else {
                self.deliver_with_retry(channel, msg)
            };
            if let Some(store) = &self.store {
                store.append(EntryKind::Receipt, receipt.completed_at, &receipt)?;
            }
            receipts.push(receipt);
        }
        Ok(receipts)
    }

    fn deliver_with_retry(&self, channel: Channel, msg: &AlertMessage) -> DeliveryReceipt {
        let receipt = |status, attempts, at: u64| DeliveryReceipt {
            alert_id: msg.alert_id,
            channel,
            status,
            attempts,
            completed_at: at.max(msg.created_at),
        };
        let Some(sink) = self.sinks.get(&channel) else {
            log::warn!("no sink configured for channel {channel}");
            return receipt(DeliveryStatus::Failed, 0, self.clock.now_ms());
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match sink.deliver(channel, msg, self.clock.now_ms()) {
                Ok(()) => return receipt(DeliveryStatus::Delivered, attempts, self.clock.now_ms()),
                Err(e) => {
                    log::warn!("alert {} via {channel}: attempt {attempts} failed: {e}", msg.alert_id);
                    match self.config.backoff_ms.get(attempts as usize - 1) {
                        Some(&delay) => self.clock.sleep_ms(delay),
                        None => return receipt(DeliveryStatus::Failed, attempts, self.clock.now_ms()),
                    }
                }
            }
        }
    }
}

impl AlertSink for Notifier {
    fn on_alert(&self, decision: &AlertDecision) {
        let msg = self.render(decision);
        if let Err(e) = self.dispatch(&msg) {
            log::error!("dispatching alert {}: {e}", decision.alert_id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::sensor::{SensorEvent, SensorKind};

    fn gas_decision() -> AlertDecision {
        AlertDecision {
            alert_id: 1,
            causes: vec![AlertCause::Sensor(SensorEvent {
                sensor_id: "gas1".into(),
                kind: SensorKind::Gas,
                magnitude: 5.0,
                timestamp: 5_000,
                snapshot_ref: None,
            })],
            severity: Severity::Safety,
            created_at: 5_000,
            repeat_count: 1,
        }
    }

    struct Flaky {
        calls: AtomicU64,
    }

    impl Sink for Flaky {
        fn deliver(&self, _: Channel, _: &AlertMessage, _: u64) -> Result<(), SinkError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Err(SinkError("down".into()))
        }
    }

    #[test]
    fn gas_alert_body_matches_template() {
        let msg = render_alert(&gas_decision(), &ChannelPolicy::default());
        assert_eq!(msg.body, "[SAFETY] gas1 detection (magnitude 5.0) at 1970-01-01T00:00:05Z (x1)");
        assert_eq!(msg.channels, [Channel::Sms, Channel::Call].into());
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_alert(&gas_decision(), &ChannelPolicy::default());
        let b = render_alert(&gas_decision(), &ChannelPolicy::default());
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn safety_alert_writes_sms_and_call_spool_files() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::starting_at(5_000));
        let spool: Arc<dyn Sink> = Arc::new(SpoolSink::new(dir.path(), "+15550100"));
        let notifier = Notifier::new(NotifierConfig::default(), clock)
            .with_sink(Channel::Sms, spool.clone())
            .with_sink(Channel::Call, spool);
        let receipts = notifier.dispatch(&notifier.render(&gas_decision())).unwrap();
        assert_eq!(receipts.len(), 2);
        assert!(receipts.iter().all(|r| r.status == DeliveryStatus::Delivered && r.attempts == 1));
        let sms = list_spool(dir.path(), "sms");
        assert_eq!(sms.len(), 1);
        assert_eq!(list_spool(dir.path(), "call").len(), 1);
        let text = fs::read_to_string(&sms[0]).unwrap();
        assert_eq!(
            text,
            "TO: +15550100\nSEVERITY: SAFETY\n\n[SAFETY] gas1 detection (magnitude 5.0) at 1970-01-01T00:00:05Z (x1)\n"
        );
        let name = sms[0].file_name().unwrap().to_str().unwrap();
        assert!(name.starts_with("5000_") && name.ends_with(".sms.msg"), "{name}");
    }

    #[test]
    fn failing_sink_is_tried_four_times_with_backoff() {
        let clock = Arc::new(SimClock::starting_at(10_000));
        let flaky = Arc::new(Flaky { calls: AtomicU64::new(0) });
        let notifier = Notifier::new(NotifierConfig::default(), clock.clone()).with_sink(Channel::Webhook, flaky.clone());
        let msg = AlertMessage {
            alert_id: 7,
            severity: Severity::Network,
            body: "x".into(),
            channels: [Channel::Webhook].into(),
            created_at: 10_000,
        };
        let receipts = notifier.dispatch(&msg).unwrap();
        assert_eq!(receipts[0].status, DeliveryStatus::Failed);
        assert_eq!(receipts[0].attempts, 4);
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 4);
        // 1 s + 2 s + 4 s of simulated backoff
        assert_eq!(receipts[0].completed_at, 17_000);
    }

    #[test]
    fn identical_body_within_window_is_deduplicated() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::starting_at(5_000));
        let spool: Arc<dyn Sink> = Arc::new(SpoolSink::new(dir.path(), "owner"));
        let notifier = Notifier::new(NotifierConfig::default(), clock.clone()).with_sink(Channel::Sms, spool);
        let mut msg = notifier.render(&gas_decision());
        msg.channels = [Channel::Sms].into();
        notifier.dispatch(&msg).unwrap();
        clock.advance(10_000);
        let again = notifier.dispatch(&msg).unwrap();
        assert_eq!(again[0].status, DeliveryStatus::Deduplicated);
        assert_eq!(again[0].attempts, 0);
        assert_eq!(list_spool(dir.path(), "sms").len(), 1);
        // outside the window it goes out again
        clock.advance(60_000);
        assert_eq!(notifier.dispatch(&msg).unwrap()[0].status, DeliveryStatus::Delivered);
        assert_eq!(list_spool(dir.path(), "sms").len(), 2);
    }

    #[test]
    fn unconfigured_channel_fails_without_blocking_others() {
        let clock = Arc::new(SimClock::new());
        let notifier = Notifier::new(NotifierConfig::default(), clock).with_sink(Channel::Console, Arc::new(ConsoleSink));
        let msg = AlertMessage {
            alert_id: 1,
            severity: Severity::Network,
            body: "b".into(),
            channels: [Channel::Webhook, Channel::Console].into(),
            created_at: 0,
        };
        let receipts = notifier.dispatch(&msg).unwrap();
        let webhook = receipts.iter().find(|r| r.channel == Channel::Webhook).unwrap();
        assert_eq!((webhook.status, webhook.attempts), (DeliveryStatus::Failed, 0));
        let console = receipts.iter().find(|r| r.channel == Channel::Console).unwrap();
        assert_eq!(console.status, DeliveryStatus::Delivered);
    }

    #[test]
    fn receipts_are_persisted() {
        let store = Arc::new(EventStore::in_memory());
        let notifier = Notifier::new(NotifierConfig::default(), Arc::new(SimClock::new()))
            .with_sink(Channel::Console, Arc::new(ConsoleSink))
            .with_store(store.clone());
        let msg = AlertMessage {
            alert_id: 3,
            severity: Severity::Intrusion,
            body: "b".into(),
            channels: [Channel::Console].into(),
            created_at: 0,
        };
        notifier.dispatch(&msg).unwrap();
        let entries = store.all();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].kind, EntryKind::Receipt);
        assert_eq!(entries[0].payload["alert_id"], 3);
    }

    #[test]
    fn empty_message_is_rejected() {
        let notifier = Notifier::new(NotifierConfig::default(), Arc::new(SimClock::new()));
        let msg = AlertMessage {
            alert_id: 1,
            severity: Severity::Safety,
            body: String::new(),
            channels: [Channel::Sms].into(),
            created_at: 0,
        };
        assert!(matches!(notifier.dispatch(&msg), Err(NotifyError::InvalidMessage)));
    }

    #[test]
    fn key_message_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spool = EmailKeySpool::new(dir.path());
        spool.deliver_key("owner@example.test", "abc", "012345", 1).unwrap();
        let files = list_spool(dir.path(), "email");
        let msg: KeyMessage = fs::read_to_string(&files[0]).unwrap().parse().unwrap();
        assert_eq!(msg.to, "owner@example.test");
        assert_eq!(msg.login_id, "abc");
        assert_eq!(msg.key, "012345");
    }

    #[test]
    fn webhook_url_parsing() {
        let w = WebhookSink::new("http://127.0.0.1:9000/hook").unwrap();
        assert_eq!((w.host.as_str(), w.port, w.path.as_str()), ("127.0.0.1", 9000, "/hook"));
        let w = WebhookSink::new("http://example.test").unwrap();
        assert_eq!((w.port, w.path.as_str()), (80, "/"));
        assert!(WebhookSink::new("https://x").is_err());
    }

    #[test]
    fn overlong_bodies_are_truncated() {
        let mut d = gas_decision();
        if let AlertCause::Sensor(ev) = &mut d.causes[0] {
            ev.sensor_id = "s".repeat(1000);
        }
        assert_eq!(render_alert(&d, &ChannelPolicy::default()).body.chars().count(), MAX_BODY_CHARS);
    }
}
