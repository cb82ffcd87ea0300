//! Request bodies, query strings and response shaping.

use homesec_core::store::{EntryKind, LogEntry, QueryFilter};
use homesec_core::time_fmt::{iso8601_ms, parse_time_ms};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::ApiError;

// Payload fields holding epoch milliseconds.
const TIME_FIELDS: [&str; 6] = [
    "timestamp",
    "created_at",
    "detected_at",
    "completed_at",
    "issued_at",
    "expires_at",
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Serialize)]
pub struct LoginResponse {
    pub login_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    pub login_id: String,
    pub key: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyResponse {
    pub token: String,
    pub expires_at: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmRequest {
    pub state: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerRequest {
    pub sensor_id: String,
    pub magnitude: f64,
}

/// `?kind=&sensor_id=&since=&until=&limit=&offset=`; times are epoch
/// milliseconds or RFC 3339.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryQuery {
    pub kind: Option<String>,
    pub sensor_id: Option<String>,
    pub since: Option<String>,
    pub until: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

impl HistoryQuery {
    pub fn to_filter(&self) -> Result<QueryFilter, ApiError> {
        let time = |name: &str, v: &Option<String>| -> Result<Option<u64>, ApiError> {
            v.as_deref()
                .map(|s| parse_time_ms(s).ok_or_else(|| ApiError::BadRequest(format!("bad {name} {s:?}"))))
                .transpose()
        };
        let kind = self
            .kind
            .as_deref()
            .map(|k| k.parse::<EntryKind>())
            .transpose()
            .map_err(ApiError::from)?;
        Ok(QueryFilter {
            kind,
            since: time("since", &self.since)?,
            until: time("until", &self.until)?,
            sensor_id: self.sensor_id.clone(),
            limit: self.limit,
            offset: self.offset,
        })
    }
}

/// A log entry with its timestamps rendered as ISO-8601 UTC.
pub fn entry_json(entry: &LogEntry) -> Value {
    json!({
        "seq": entry.seq,
        "kind": entry.kind,
        "ts": iso8601_ms(entry.ts),
        "payload": iso_times(entry.payload.clone()),
    })
}

pub fn iso_times(value: Value) -> Value {
    match value {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| {
                    let v = match v.as_u64() {
                        Some(ms) if TIME_FIELDS.contains(&k.as_str()) => Value::String(iso8601_ms(ms)),
                        _ => iso_times(v),
                    };
                    (k, v)
                })
                .collect::<Map<_, _>>(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(iso_times).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_time_fields_become_iso() {
        let v = json!({
            "alert_id": 3,
            "created_at": 5000,
            "causes": [{"timestamp": 5500, "magnitude": 2.0}],
            "verdict": {"window_id": 7},
        });
        let out = iso_times(v);
        assert_eq!(out["alert_id"], 3);
        assert_eq!(out["created_at"], "1970-01-01T00:00:05Z");
        assert_eq!(out["causes"][0]["timestamp"], "1970-01-01T00:00:05.500Z");
        assert_eq!(out["causes"][0]["magnitude"], 2.0);
        assert_eq!(out["verdict"]["window_id"], 7);
    }

    #[test]
    fn history_query_parses_both_time_forms() {
        let q = HistoryQuery {
            kind: Some("sensorevent".into()),
            since: Some("1000".into()),
            until: Some("1970-01-01T00:00:05Z".into()),
            limit: Some(2),
            ..HistoryQuery::default()
        };
        let f = q.to_filter().unwrap();
        assert_eq!(f.kind, Some(EntryKind::SensorEvent));
        assert_eq!((f.since, f.until, f.limit), (Some(1_000), Some(5_000), Some(2)));
        let bad = HistoryQuery {
            since: Some("soon".into()),
            ..HistoryQuery::default()
        };
        assert!(matches!(bad.to_filter(), Err(ApiError::BadRequest(_))));
        let bad = HistoryQuery {
            kind: Some("Gossip".into()),
            ..HistoryQuery::default()
        };
        assert!(matches!(bad.to_filter(), Err(ApiError::BadRequest(_))));
    }
}
