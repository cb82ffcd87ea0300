//! Bidirectional flow assembly with idle and active timeouts.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::packet::{PacketSummary, Proto, ACK, FIN, PSH, RST, SYN, URG};

/// Oriented 5-tuple: the initiator is whoever sent the first packet seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub initiator_ip: Ipv4Addr,
    pub initiator_port: u16,
    pub responder_ip: Ipv4Addr,
    pub responder_port: u16,
    pub proto: Proto,
}

impl FlowKey {
    pub fn from_packet(p: &PacketSummary) -> Self {
        Self {
            initiator_ip: p.src_ip,
            initiator_port: p.src_port,
            responder_ip: p.dst_ip,
            responder_port: p.dst_port,
            proto: p.proto,
        }
    }

    pub fn conversation(&self) -> Conversation {
        let a = (self.initiator_ip, self.initiator_port);
        let b = (self.responder_ip, self.responder_port);
        Conversation {
            low: a.min(b),
            high: a.max(b),
            proto: self.proto,
        }
    }

    pub fn is_forward(&self, p: &PacketSummary) -> bool {
        p.src_ip == self.initiator_ip && p.src_port == self.initiator_port
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SrcIp {} DstIp {} SrcPort {} dst_port {}",
            self.initiator_ip, self.responder_ip, self.initiator_port, self.responder_port
        )
    }
}

/// Unordered endpoint pair plus protocol; both directions map to the same value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Conversation {
    low: (Ipv4Addr, u16),
    high: (Ipv4Addr, u16),
    proto: Proto,
}

impl Conversation {
    pub fn of(p: &PacketSummary) -> Self {
        FlowKey::from_packet(p).conversation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowState {
    Active,
    ExpiredIdle,
    ExpiredActive,
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Rebuilds the accumulator from a sample count, mean and population std.
    pub fn from_moments(n: u64, mean: f64, std: f64) -> Self {
        Self {
            n,
            mean: if n == 0 { 0.0 } else { mean },
            m2: if n == 0 { 0.0 } else { std * std * n as f64 },
        }
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlagCounts {
    pub fin: u64,
    pub syn: u64,
    pub rst: u64,
    pub psh: u64,
    pub ack: u64,
    pub urg: u64,
    /// Packets carrying SYN+FIN, NULL or Xmas flag combinations.
    pub anomalous: u64,
}

impl FlagCounts {
    fn add(&mut self, p: &PacketSummary) {
        if p.proto != Proto::Tcp {
            return;
        }
        let f = p.tcp_flags;
        let bump = |count: &mut u64, bit: u8| *count += u64::from(f & bit != 0);
        bump(&mut self.fin, FIN);
        bump(&mut self.syn, SYN);
        bump(&mut self.rst, RST);
        bump(&mut self.psh, PSH);
        bump(&mut self.ack, ACK);
        bump(&mut self.urg, URG);
        self.anomalous += u64::from(p.has_anomalous_flags());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub fwd_pkts: u64,
    pub bwd_pkts: u64,
    pub fwd_bytes: u64,
    pub bwd_bytes: u64,
    /// Inter-arrival times in microseconds, over both directions.
    pub iat: RunningStats,
    pub flags: FlagCounts,
    pub state: FlowState,
}

impl FlowRecord {
    pub fn start(key: FlowKey, p: &PacketSummary) -> Self {
        let mut rec = Self {
            key,
            first_ts_us: p.ts_us,
            last_ts_us: p.ts_us,
            fwd_pkts: 0,
            bwd_pkts: 0,
            fwd_bytes: 0,
            bwd_bytes: 0,
            iat: RunningStats::default(),
            flags: FlagCounts::default(),
            state: FlowState::Active,
        };
        rec.count(p);
        rec
    }

    /// Adds a packet. Out-of-order packets contribute a zero inter-arrival.
    pub fn add(&mut self, p: &PacketSummary) {
        let iat = p.ts_us.saturating_sub(self.last_ts_us);
        self.iat.push(iat as f64);
        self.first_ts_us = self.first_ts_us.min(p.ts_us);
        self.last_ts_us = self.last_ts_us.max(p.ts_us);
        self.count(p);
    }

    fn count(&mut self, p: &PacketSummary) {
        if self.key.is_forward(p) {
            self.fwd_pkts += 1;
            self.fwd_bytes += u64::from(p.length);
        } else {
            self.bwd_pkts += 1;
            self.bwd_bytes += u64::from(p.length);
        }
        self.flags.add(p);
    }

    pub fn total_pkts(&self) -> u64 {
        self.fwd_pkts + self.bwd_pkts
    }

    pub fn total_bytes(&self) -> u64 {
        self.fwd_bytes + self.bwd_bytes
    }

    pub fn duration_us(&self) -> u64 {
        self.last_ts_us - self.first_ts_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTimeouts {
    pub idle_us: u64,
    pub active_us: u64,
}

impl Default for FlowTimeouts {
    fn default() -> Self {
        Self {
            idle_us: 15_000_000,
            active_us: 120_000_000,
        }
    }
}

/// Live flows, one per conversation.
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    timeouts: FlowTimeouts,
    flows: HashMap<Conversation, FlowRecord>,
}

impl FlowTable {
    pub fn new(timeouts: FlowTimeouts) -> Self {
        Self {
            timeouts,
            flows: HashMap::new(),
        }
    }

    pub fn timeouts(&self) -> FlowTimeouts {
        self.timeouts
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// The key the packet belongs to: the live flow's key for its
    /// conversation, or a key with the packet's source as initiator.
    pub fn canonical_key(&self, p: &PacketSummary) -> FlowKey {
        self.flows
            .get(&Conversation::of(p))
            .map_or_else(|| FlowKey::from_packet(p), |f| f.key)
    }

    pub fn get(&self, conversation: &Conversation) -> Option<&FlowRecord> {
        self.flows.get(conversation)
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowRecord> {
        self.flows.values()
    }

    /// Folds the packet into its flow. If that flow had timed out, the old
    /// record is returned and a new flow starts with this packet: after an
    /// idle gap the packet's source becomes the initiator, after an active
    /// timeout the continuation keeps the old orientation.
    pub fn update(&mut self, p: &PacketSummary) -> Option<FlowRecord> {
        let conv = Conversation::of(p);
        let Some(flow) = self.flows.get_mut(&conv) else {
            self.flows.insert(conv, FlowRecord::start(FlowKey::from_packet(p), p));
            return None;
        };
        if p.ts_us.saturating_sub(flow.last_ts_us) >= self.timeouts.idle_us {
            let fresh = FlowRecord::start(FlowKey::from_packet(p), p);
            let mut old = std::mem::replace(flow, fresh);
            old.state = FlowState::ExpiredIdle;
            return Some(old);
        }
        if p.ts_us.saturating_sub(flow.first_ts_us) > self.timeouts.active_us {
            let fresh = FlowRecord::start(flow.key, p);
            let mut old = std::mem::replace(flow, fresh);
            old.state = FlowState::ExpiredActive;
            return Some(old);
        }
        flow.add(p);
        None
    }

    /// Removes and returns every flow idle for at least the idle timeout at
    /// `now_us`, ordered by start time then key.
    pub fn flush_expired(&mut self, now_us: u64) -> Vec<FlowRecord> {
        let idle = self.timeouts.idle_us;
        let mut out = Vec::new();
        self.flows.retain(|_, f| {
            if now_us.saturating_sub(f.last_ts_us) >= idle {
                let mut rec = f.clone();
                rec.state = FlowState::ExpiredIdle;
                out.push(rec);
                false
            } else {
                true
            }
        });
        sort_flows(&mut out);
        out
    }

    /// Empties the table (end of trace).
    pub fn drain(&mut self) -> Vec<FlowRecord> {
        let mut out: Vec<FlowRecord> = self
            .flows
            .drain()
            .map(|(_, mut f)| {
                f.state = FlowState::ExpiredIdle;
                f
            })
            .collect();
        sort_flows(&mut out);
        out
    }
}

pub fn sort_flows(flows: &mut [FlowRecord]) {
    flows.sort_by(|a, b| (a.first_ts_us, a.key).cmp(&(b.first_ts_us, b.key)));
}

/// Assembles a whole trace into flows: every expired record plus the
/// end-of-trace drain, sorted by start time then key.
pub fn assemble_flows<'a>(
    packets: impl IntoIterator<Item = &'a PacketSummary>,
    timeouts: FlowTimeouts,
) -> Vec<FlowRecord> {
    let mut table = FlowTable::new(timeouts);
    let mut out: Vec<FlowRecord> = packets.into_iter().filter_map(|p| table.update(p)).collect();
    out.extend(table.drain());
    sort_flows(&mut out);
    out
}
