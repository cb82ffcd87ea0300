//! Per-window aggregates over all traffic seen in a fixed time slice.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::flow::{FlowKey, FlowRecord};
use super::packet::PacketSummary;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowStats {
    pub window_id: u64,
    pub per_src_distinct_dst_ports: BTreeMap<Ipv4Addr, u64>,
    pub per_dst_pkt_rate: BTreeMap<Ipv4Addr, f64>,
    pub per_dst_distinct_srcs: BTreeMap<Ipv4Addr, u64>,
    pub anomalous_flag_flows: BTreeMap<Ipv4Addr, u64>,
}

impl WindowStats {
    pub fn empty(window_id: u64) -> Self {
        Self {
            window_id,
            ..Self::default()
        }
    }

    pub fn distinct_dst_ports(&self, src: Ipv4Addr) -> u64 {
        self.per_src_distinct_dst_ports.get(&src).copied().unwrap_or(0)
    }

    pub fn pkt_rate(&self, dst: Ipv4Addr) -> f64 {
        self.per_dst_pkt_rate.get(&dst).copied().unwrap_or(0.0)
    }

    pub fn distinct_srcs(&self, dst: Ipv4Addr) -> u64 {
        self.per_dst_distinct_srcs.get(&dst).copied().unwrap_or(0)
    }

    pub fn anomalous_flows(&self, src: Ipv4Addr) -> u64 {
        self.anomalous_flag_flows.get(&src).copied().unwrap_or(0)
    }
}

pub fn window_id(ts_us: u64, window_len_s: u64) -> u64 {
    ts_us / (window_len_s.max(1) * 1_000_000)
}

/// Packet-level accumulator for the window currently open.
#[derive(Debug, Clone, Default)]
pub struct WindowAccumulator {
    ports: BTreeMap<Ipv4Addr, BTreeSet<u16>>,
    dst_pkts: BTreeMap<Ipv4Addr, u64>,
    dst_srcs: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>>,
    anomalous: BTreeMap<Ipv4Addr, BTreeSet<FlowKey>>,
}

impl WindowAccumulator {
    /// `key` is the packet's canonical flow key, so probes and their replies
    /// both count toward the initiator's port set.
    pub fn add(&mut self, p: &PacketSummary, key: &FlowKey) {
        self.ports.entry(key.initiator_ip).or_default().insert(key.responder_port);
        *self.dst_pkts.entry(p.dst_ip).or_default() += 1;
        self.dst_srcs.entry(p.dst_ip).or_default().insert(p.src_ip);
        if p.has_anomalous_flags() {
            self.anomalous.entry(key.initiator_ip).or_default().insert(*key);
        }
    }

    pub fn finish(self, window_id: u64, window_len_s: u64) -> WindowStats {
        let w = window_len_s.max(1) as f64;
        WindowStats {
            window_id,
            per_src_distinct_dst_ports: count_sets(self.ports),
            per_dst_pkt_rate: self.dst_pkts.into_iter().map(|(ip, n)| (ip, n as f64 / w)).collect(),
            per_dst_distinct_srcs: count_sets(self.dst_srcs),
            anomalous_flag_flows: count_sets(self.anomalous),
        }
    }
}

fn count_sets<K: Ord, V>(m: BTreeMap<K, BTreeSet<V>>) -> BTreeMap<K, u64> {
    m.into_iter().map(|(k, s)| (k, s.len() as u64)).collect()
}

/// Flow-level aggregation, for flow records without their packets. Each
/// flow's packets are spread evenly over max(duration, window).
pub fn aggregate_flows<'a>(
    flows: impl IntoIterator<Item = &'a FlowRecord>,
    window_id: u64,
    window_len_s: u64,
) -> WindowStats {
    let w = window_len_s.max(1) as f64;
    let mut ports: BTreeMap<Ipv4Addr, BTreeSet<u16>> = BTreeMap::new();
    let mut rate: BTreeMap<Ipv4Addr, f64> = BTreeMap::new();
    let mut srcs: BTreeMap<Ipv4Addr, BTreeSet<Ipv4Addr>> = BTreeMap::new();
    let mut anomalous: BTreeMap<Ipv4Addr, u64> = BTreeMap::new();
    for f in flows {
        let k = &f.key;
        ports.entry(k.initiator_ip).or_default().insert(k.responder_port);
        let spread = (f.duration_us() as f64 / 1e6).max(w);
        if f.fwd_pkts > 0 {
            *rate.entry(k.responder_ip).or_default() += f.fwd_pkts as f64 / spread;
            srcs.entry(k.responder_ip).or_default().insert(k.initiator_ip);
        }
        if f.bwd_pkts > 0 {
            *rate.entry(k.initiator_ip).or_default() += f.bwd_pkts as f64 / spread;
            srcs.entry(k.initiator_ip).or_default().insert(k.responder_ip);
        }
        if f.flags.anomalous > 0 {
            *anomalous.entry(k.initiator_ip).or_default() += 1;
        }
    }
    WindowStats {
        window_id,
        per_src_distinct_dst_ports: count_sets(ports),
        per_dst_pkt_rate: rate,
        per_dst_distinct_srcs: count_sets(srcs),
        anomalous_flag_flows: anomalous,
    }
}
