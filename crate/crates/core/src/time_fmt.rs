//! ISO-8601 rendering of millisecond timestamps.

use chrono::{DateTime, SecondsFormat};

/// `5_000` → `1970-01-01T00:00:05Z`; sub-second values keep millisecond digits.
pub fn iso8601_ms(ms: u64) -> String {
    let secs = (ms / 1000) as i64;
    let nanos = ((ms % 1000) * 1_000_000) as u32;
    DateTime::from_timestamp(secs, nanos)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| ms.to_string())
}

/// Accepts either epoch milliseconds or an RFC 3339 timestamp.
pub fn parse_time_ms(s: &str) -> Option<u64> {
    if let Ok(ms) = s.parse::<u64>() {
        return Some(ms);
    }
    let dt = DateTime::parse_from_rfc3339(s).ok()?;
    u64::try_from(dt.timestamp_millis()).ok()
}

/// Serde adapter: serialize a `u64` millisecond timestamp as an ISO-8601 string.
pub mod iso {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(ms: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::iso8601_ms(*ms))
    }
}
