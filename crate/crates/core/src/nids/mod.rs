//! Lightweight network intrusion detection over packet summaries.
//!
//! Packets are assembled into bidirectional flows, summarized as feature
//! vectors, and classified per flow and time window by a fixed rule cascade
//! that also looks at window-wide aggregates (fan-in, fan-out, flood rate).

pub mod classify;
pub mod engine;
pub mod features;
pub mod flow;
pub mod packet;
pub mod replay;
pub mod window;

use serde::{Deserialize, Serialize};

pub use classify::{classify, Category, DetectorConfig, Verdict, VerdictKind};
pub use engine::{detect_trace, NidsEngine};
pub use features::{extract_features, FeatureVector};
pub use flow::{assemble_flows, FlowKey, FlowRecord, FlowState, FlowTable, FlowTimeouts};
pub use packet::{PacketRow, PacketSummary, Proto};
pub use replay::{replay_dataset, EvaluationReport, FlowRow, SchemaError, TrafficClass};
pub use window::WindowStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NidsConfig {
    pub detector: DetectorConfig,
    pub timeouts: FlowTimeouts,
    pub window_len_s: u64,
}

impl Default for NidsConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            timeouts: FlowTimeouts::default(),
            window_len_s: 10,
        }
    }
}

/// An attack verdict as raised to the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub verdict: Verdict,
    /// Wall or simulated time of detection, epoch milliseconds.
    pub detected_at: u64,
}
