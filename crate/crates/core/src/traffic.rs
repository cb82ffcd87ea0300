//! Seeded synthetic traffic: benign IoT chatter and the five attack
//! categories, as labelled packet traces.
//!
//! Every generator draws from its own address ranges, so traces can be
//! merged without one category's traffic bleeding into another's
//! aggregates. Attack traces start on a 10 s boundary so a flood fills one
//! detection window.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nids::flow::{assemble_flows, Conversation, FlowTimeouts};
use crate::nids::packet::{PacketSummary, Proto, ACK, FIN, PSH, RST, SYN, URG};
use crate::nids::replay::{FlowRow, TrafficClass};
use crate::nids::Category;

pub const DEFAULT_ATTACK_FLOWS: usize = 200;
pub const DEFAULT_BENIGN_FLOWS: usize = 1000;

const ALIGN_US: u64 = 10_000_000;
const SEC: u64 = 1_000_000;
const MS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    Dos,
    Ddos,
    ServiceScan,
    OsScan,
    Keylog,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Dos,
        AttackKind::Ddos,
        AttackKind::ServiceScan,
        AttackKind::OsScan,
        AttackKind::Keylog,
    ];

    pub fn category(self) -> Category {
        match self {
            AttackKind::Dos => Category::DoS,
            AttackKind::Ddos => Category::DDoS,
            AttackKind::ServiceScan => Category::ServiceScan,
            AttackKind::OsScan => Category::OSScan,
            AttackKind::Keylog => Category::Keylogging,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Dos => "dos",
            AttackKind::Ddos => "ddos",
            AttackKind::ServiceScan => "servicescan",
            AttackKind::OsScan => "osscan",
            AttackKind::Keylog => "keylog",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown attack kind {s:?}"))
    }
}

/// Packets in time order, each with its ground-truth class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub packets: Vec<PacketSummary>,
    pub classes: Vec<TrafficClass>,
}

impl Trace {
    fn push(&mut self, p: PacketSummary, class: TrafficClass) {
        self.packets.push(p);
        self.classes.push(class);
    }

    fn sorted(self) -> Self {
        let mut pairs: Vec<_> = self.packets.into_iter().zip(self.classes).collect();
        pairs.sort_by_key(|(p, _)| p.ts_us);
        let (packets, classes) = pairs.into_iter().unzip();
        Self { packets, classes }
    }

    pub fn merge(traces: impl IntoIterator<Item = Trace>) -> Self {
        let mut all = Trace::default();
        for t in traces {
            all.packets.extend(t.packets);
            all.classes.extend(t.classes);
        }
        all.sorted()
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn label_strings(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.category_name().to_string()).collect()
    }

    /// Assembles the trace into flows labelled with their packets' class.
    pub fn flows(&self, timeouts: FlowTimeouts) -> Vec<FlowRow> {
        let class_of: HashMap<Conversation, TrafficClass> = self
            .packets
            .iter()
            .zip(&self.classes)
            .map(|(p, c)| (Conversation::of(p), *c))
            .collect();
        assemble_flows(&self.packets, timeouts)
            .into_iter()
            .map(|record| FlowRow {
                class: class_of.get(&record.key.conversation()).copied(),
                record,
            })
            .collect()
    }
}

fn tcp(ts_us: u64, src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), length: u32, flags: u8) -> PacketSummary {
    PacketSummary {
        ts_us,
        src_ip: src.0,
        src_port: src.1,
        dst_ip: dst.0,
        dst_port: dst.1,
        proto: Proto::Tcp,
        length,
        tcp_flags: flags,
    }
}

fn udp(ts_us: u64, src: (Ipv4Addr, u16), dst: (Ipv4Addr, u16), length: u32) -> PacketSummary {
    PacketSummary {
        proto: Proto::Udp,
        tcp_flags: 0,
        ..tcp(ts_us, src, dst, length, 0)
    }
}

/// The `i`-th host of a /16 starting at `a.b.0.1`, skipping .0 and .255.
fn host(a: u8, b: u8, i: usize) -> Ipv4Addr {
    let i = i % (254 * 256);
    Ipv4Addr::new(a, b, (i / 254) as u8, (i % 254 + 1) as u8)
}

fn align(start_us: u64) -> u64 {
    start_us.div_ceil(ALIGN_US) * ALIGN_US
}

/// Splits `n` items into groups of at most `max`, sized as evenly as possible.
fn groups(n: usize, max: usize) -> Vec<usize> {
    let k = n.div_ceil(max);
    (0..k).map(|j| n / k + usize::from(j < n % k)).collect()
}

pub fn generate_attack(kind: AttackKind, flows: usize, seed: u64, start_us: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = align(start_us);
    let class = TrafficClass::Attack(kind.category());
    let mut t = Trace::default();
    if flows == 0 {
        return t;
    }
    match kind {
        AttackKind::Dos => {
            // one source, 600 pkts/s for 10 s against one web server
            let attacker = Ipv4Addr::new(10, 66, 0, 1);
            let victim = (Ipv4Addr::new(192, 168, 50, 10), 80);
            let total = flows.max(6000) as u64;
            for k in 0..total {
                let f = (k % flows as u64) as usize;
                let src = (attacker, 1024 + (f % 64_000) as u16);
                let ts = start + k * 10 * SEC / total;
                let p = if (k as usize) < flows {
                    tcp(ts, src, victim, 0, SYN)
                } else {
                    tcp(ts, src, victim, rng.gen_range(64..=512), PSH | ACK)
                };
                t.push(p, class);
            }
        }
        AttackKind::Ddos => {
            // twelve bots, 600 pkts/s combined, UDP flood
            let victim = (Ipv4Addr::new(192, 168, 50, 20), 80);
            let total = flows.max(6000) as u64;
            for k in 0..total {
                let f = (k % flows as u64) as usize;
                let src = (Ipv4Addr::new(10, 77, 0, (f % 12 + 1) as u8), 1024 + (f / 12 % 64_000) as u16);
                let ts = start + k * 10 * SEC / total;
                t.push(udp(ts, src, victim, rng.gen_range(64..=1024)), class);
            }
        }
        AttackKind::ServiceScan => {
            // SYN sweep of 25 ports per scanner, closed ports answer RST
            for (j, ports) in groups(flows, 25).into_iter().enumerate() {
                let scanner = (host(10, 88, j), 40_000 + (j % 20_000) as u16);
                let target = host(192, 51, j);
                let t0 = start + j as u64 * SEC;
                for (i, port) in sample(&mut rng, 1024, ports).into_iter().enumerate() {
                    let dst = (target, port as u16 + 1);
                    let ts = t0 + i as u64 * 20 * MS;
                    t.push(tcp(ts, scanner, dst, 0, SYN), class);
                    let rtt = rng.gen_range(100..2_000);
                    if rng.gen_bool(0.1) {
                        t.push(tcp(ts + rtt, dst, scanner, 0, SYN | ACK), class);
                        t.push(tcp(ts + rtt + 50, scanner, dst, 0, RST), class);
                    } else {
                        t.push(tcp(ts + rtt, dst, scanner, 0, RST | ACK), class);
                    }
                }
            }
        }
        AttackKind::OsScan => {
            // fingerprinting probes with illegal flag combinations
            const PROBES: [u8; 3] = [0, SYN | FIN, FIN | PSH | URG];
            for (j, probes) in groups(flows, 8).into_iter().enumerate() {
                let scanner = (host(10, 99, j), 50_000 + (j % 15_000) as u16);
                let target = host(192, 52, j);
                let t0 = start + j as u64 * SEC;
                for (i, port) in sample(&mut rng, 1024, probes).into_iter().enumerate() {
                    let dst = (target, port as u16 + 1);
                    let ts = t0 + i as u64 * 50 * MS;
                    t.push(tcp(ts, scanner, dst, 0, PROBES[i % PROBES.len()]), class);
                    let rtt = rng.gen_range(100..2_000);
                    t.push(tcp(ts + rtt, dst, scanner, 0, RST | ACK), class);
                }
            }
        }
        AttackKind::Keylog => {
            // 16-byte keystroke batches every 500 ms for 90 s to a C2 host
            for j in 0..flows {
                let victim = (host(192, 60, j), 45_000 + (j % 20_000) as u16);
                let c2 = (host(198, 51, j), 4444);
                let t0 = start + j as u64 * 500 * MS;
                for k in 0..180u64 {
                    let jitter = rng.gen_range(0..=50 * MS) as i64 - 25_000;
                    let ts = (t0 + 25 * MS + k * 500 * MS).saturating_add_signed(jitter);
                    t.push(tcp(ts, victim, c2, 16, PSH | ACK), class);
                }
            }
        }
    }
    t.sorted()
}

#[derive(Clone, Copy)]
enum BenignKind {
    Https,
    Dns,
    Ntp,
    Mqtt,
    CameraUpload,
}

pub fn generate_benign(flows: usize, seed: u64, start_us: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Trace::default();
    let devices: Vec<Ipv4Addr> = (0..20).map(|i| Ipv4Addr::new(192, 168, 1, 10 + i)).collect();
    let clouds: Vec<Ipv4Addr> = (0..4).map(|i| Ipv4Addr::new(52, 94, 10, 20 + i)).collect();
    let dns = (Ipv4Addr::new(192, 168, 1, 1), 53);
    let ntp = (Ipv4Addr::new(129, 6, 15, 28), 123);
    let broker = (Ipv4Addr::new(18, 184, 20, 7), 8883);
    for i in 0..flows {
        let kind = match rng.gen_range(0..100) {
            0..=34 => BenignKind::Https,
            35..=59 => BenignKind::Dns,
            60..=69 => BenignKind::Ntp,
            70..=89 => BenignKind::Mqtt,
            _ => BenignKind::CameraUpload,
        };
        let dev = (devices[rng.gen_range(0..devices.len())], 32_768 + (i % 28_000) as u16);
        let cloud = (clouds[rng.gen_range(0..clouds.len())], 443);
        let t0 = start_us + i as u64 * 800 * MS + rng.gen_range(0..500 * MS);
        let mut emit = |p: PacketSummary| t.push(p, TrafficClass::Normal);
        match kind {
            BenignKind::Dns => {
                emit(udp(t0, dev, dns, rng.gen_range(30..=60)));
                emit(udp(t0 + rng.gen_range(2 * MS..40 * MS), dns, dev, rng.gen_range(60..=300)));
            }
            BenignKind::Ntp => {
                emit(udp(t0, dev, ntp, 48));
                emit(udp(t0 + rng.gen_range(10 * MS..120 * MS), ntp, dev, 48));
            }
            BenignKind::Https | BenignKind::Mqtt => {
                let server = if matches!(kind, BenignKind::Https) { cloud } else { broker };
                let rtt = rng.gen_range(5 * MS..80 * MS);
                let mut ts = t0;
                emit(tcp(ts, dev, server, 0, SYN));
                emit(tcp(ts + rtt, server, dev, 0, SYN | ACK));
                ts += rtt + 200;
                emit(tcp(ts, dev, server, 0, ACK));
                let (exchanges, gap_mean, sizes) = match kind {
                    BenignKind::Https => (rng.gen_range(2..=20), rng.gen_range(20..300) * MS, (100, 1400)),
                    _ => (rng.gen_range(3..=10), rng.gen_range(500..2_000) * MS, (40, 200)),
                };
                for _ in 0..exchanges {
                    ts += exp_gap(&mut rng, gap_mean);
                    emit(tcp(ts, dev, server, rng.gen_range(sizes.0..=sizes.1 / 2), PSH | ACK));
                    ts += rtt;
                    emit(tcp(ts, server, dev, rng.gen_range(sizes.0..=sizes.1), PSH | ACK));
                }
                ts += exp_gap(&mut rng, gap_mean);
                emit(tcp(ts, dev, server, 0, FIN | ACK));
                emit(tcp(ts + rtt, server, dev, 0, FIN | ACK));
                emit(tcp(ts + rtt + 200, dev, server, 0, ACK));
            }
            BenignKind::CameraUpload => {
                let rtt = rng.gen_range(5 * MS..80 * MS);
                let secs = rng.gen_range(65..=110u64);
                emit(tcp(t0, dev, cloud, 0, SYN));
                emit(tcp(t0 + rtt, cloud, dev, 0, SYN | ACK));
                let mut ts = t0 + rtt + 200;
                let end = ts + secs * SEC;
                let mut n = 0u32;
                while ts < end {
                    emit(tcp(ts, dev, cloud, rng.gen_range(600..=1400), PSH | ACK));
                    n += 1;
                    if n % 8 == 0 {
                        emit(tcp(ts + rtt, cloud, dev, 0, ACK));
                    }
                    ts += rng.gen_range(60 * MS..140 * MS);
                }
                emit(tcp(ts, dev, cloud, 0, FIN | ACK));
                emit(tcp(ts + rtt, cloud, dev, 0, FIN | ACK));
            }
        }
    }
    t.sorted()
}

// Exponential, capped well under the flow idle timeout so one session stays one flow.
fn exp_gap(rng: &mut ChaCha8Rng, mean_us: u64) -> u64 {
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let cap = (mean_us as f64 * 6.0).min(10.0 * SEC as f64);
    ((-u.ln()) * mean_us as f64).min(cap) as u64 + 1
}
