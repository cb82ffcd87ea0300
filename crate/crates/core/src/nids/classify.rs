use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::flow::FlowKey;
use super::window::WindowStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    DDoS,
    DoS,
    OSScan,
    ServiceScan,
    Keylogging,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::DDoS,
        Category::DoS,
        Category::OSScan,
        Category::ServiceScan,
        Category::Keylogging,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::DDoS => "DDoS",
            Category::DoS => "DoS",
            Category::OSScan => "OSScan",
            Category::ServiceScan => "ServiceScan",
            Category::Keylogging => "Keylogging",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown attack category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    Normal,
    Attack,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerdictKind::Normal => "Normal",
            VerdictKind::Attack => "Attack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub rate_thresh: f64,
    pub ddos_src_thresh: u64,
    pub scan_port_thresh: u64,
    pub osscan_thresh: u64,
    pub keylog_min_duration_s: f64,
    pub keylog_max_pkt_size: f64,
    pub keylog_max_iat_cv: f64,
    pub keylog_min_fwd_bwd_ratio: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rate_thresh: 500.0,
            ddos_src_thresh: 10,
            scan_port_thresh: 20,
            osscan_thresh: 5,
            keylog_min_duration_s: 60.0,
            keylog_max_pkt_size: 32.0,
            keylog_max_iat_cv: 0.3,
            keylog_min_fwd_bwd_ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub category: Option<Category>,
    pub score: f64,
    pub flow_key: FlowKey,
    pub window_id: u64,
}

impl Verdict {
    pub fn normal(flow_key: FlowKey, window_id: u64) -> Self {
        Self {
            verdict: VerdictKind::Normal,
            category: None,
            score: 0.0,
            flow_key,
            window_id,
        }
    }

    pub fn is_attack(&self) -> bool {
        self.verdict == VerdictKind::Attack
    }
}

/// One line per verdict in the terminal style of the detector's console.
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.flow_key, self.verdict)?;
        if let Some(c) = self.category {
            write!(f, " {c} score={:.2}", self.score)?;
        }
        write!(f, " window={}", self.window_id)
    }
}

/// Rule cascade, first match wins: DDoS, DoS, ServiceScan, OSScan, Keylogging.
pub fn classify(
    features: &FeatureVector,
    stats: &WindowStats,
    key: &FlowKey,
    cfg: &DetectorConfig,
) -> Verdict {
    let rate = stats.pkt_rate(key.responder_ip);
    let srcs = stats.distinct_srcs(key.responder_ip);
    let ports = stats.distinct_dst_ports(key.initiator_ip);
    let anomalous = stats.anomalous_flows(key.initiator_ip);

    let fired = if rate >= cfg.rate_thresh {
        let cat = if srcs >= cfg.ddos_src_thresh { Category::DDoS } else { Category::DoS };
        Some((cat, ratio(rate, cfg.rate_thresh)))
    } else if ports >= cfg.scan_port_thresh {
        Some((Category::ServiceScan, ratio(ports as f64, cfg.scan_port_thresh as f64)))
    } else if anomalous >= cfg.osscan_thresh {
        Some((Category::OSScan, ratio(anomalous as f64, cfg.osscan_thresh as f64)))
    } else if features.duration_s >= cfg.keylog_min_duration_s
        && features.mean_pkt_size <= cfg.keylog_max_pkt_size
        && features.iat_cv <= cfg.keylog_max_iat_cv
        && features.fwd_bwd_ratio >= cfg.keylog_min_fwd_bwd_ratio
    {
        Some((Category::Keylogging, ratio(features.duration_s, cfg.keylog_min_duration_s)))
    } else {
        None
    };

    match fired {
        Some((category, score)) => Verdict {
            verdict: VerdictKind::Attack,
            category: Some(category),
            score,
            flow_key: *key,
            window_id: stats.window_id,
        },
        None => Verdict::normal(*key, stats.window_id),
    }
}

// A firing rule has observed >= threshold, so this is 1 except for
// zero thresholds, where any observation fires.
fn ratio(observed: f64, threshold: f64) -> f64 {
    if threshold <= 0.0 {
        1.0
    } else {
        (observed / threshold).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nids::packet::Proto;
    use proptest::prelude::*;
    use std::net::Ipv4Addr;

    fn watched_key() -> FlowKey {
        FlowKey {
            initiator_ip: Ipv4Addr::new(157, 240, 227, 35),
            initiator_port: 443,
            responder_ip: Ipv4Addr::new(172, 16, 221, 89),
            responder_port: 37288,
            proto: Proto::Tcp,
        }
    }

    fn quiet_features() -> FeatureVector {
        FeatureVector {
            duration_s: 5.0,
            total_pkts: 10,
            total_bytes: 5000,
            pkt_rate: 2.0,
            byte_rate: 1000.0,
            mean_pkt_size: 500.0,
            iat_mean_ms: 500.0,
            iat_std_ms: 200.0,
            iat_cv: 0.4,
            syn_count: 1,
            fin_count: 1,
            rst_count: 0,
            fwd_bwd_ratio: 1.0,
        }
    }

    #[test]
    fn quiet_window_is_normal() {
        let mut stats = WindowStats::empty(3);
        stats.per_dst_pkt_rate.insert(watched_key().responder_ip, 1.5);
        let v = classify(&quiet_features(), &stats, &watched_key(), &DetectorConfig::default());
        assert_eq!(v, Verdict::normal(watched_key(), 3));
        assert_eq!(
            v.to_string(),
            "SrcIp 157.240.227.35 DstIp 172.16.221.89 SrcPort 443 dst_port 37288 Normal window=3"
        );
    }

    #[test]
    fn flooded_responder_single_source_is_dos() {
        let key = watched_key();
        let mut stats = WindowStats::empty(4);
        stats.per_dst_pkt_rate.insert(key.responder_ip, 600.0);
        stats.per_dst_distinct_srcs.insert(key.responder_ip, 2);
        let v = classify(&quiet_features(), &stats, &key, &DetectorConfig::default());
        assert_eq!((v.verdict, v.category, v.score), (VerdictKind::Attack, Some(Category::DoS), 1.0));
        stats.per_dst_distinct_srcs.insert(key.responder_ip, 10);
        let v = classify(&quiet_features(), &stats, &key, &DetectorConfig::default());
        assert_eq!(v.category, Some(Category::DDoS));
    }

    #[test]
    fn keylogging_profile() {
        let f = FeatureVector {
            duration_s: 70.0,
            mean_pkt_size: 16.0,
            iat_cv: 0.1,
            fwd_bwd_ratio: 5.0,
            ..quiet_features()
        };
        let stats = WindowStats::empty(0);
        let cfg = DetectorConfig::default();
        let v = classify(&f, &stats, &watched_key(), &cfg);
        assert_eq!(v.category, Some(Category::Keylogging));
        let again = classify(&f, &stats, &watched_key(), &cfg);
        assert_eq!(format!("{v:?}"), format!("{again:?}"));
        assert_eq!(v.score.to_bits(), again.score.to_bits());
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
        }
        assert!("Theft".parse::<Category>().is_err());
    }

    fn arb_features() -> impl Strategy<Value = FeatureVector> {
        (0.0..200.0f64, 1.0..1500.0f64, 0.0..2.0f64, 0.0..10.0f64).prop_map(|(d, size, cv, ratio)| {
            FeatureVector {
                duration_s: d,
                mean_pkt_size: size,
                iat_cv: cv,
                fwd_bwd_ratio: ratio,
                ..quiet_features()
            }
        })
    }

    fn arb_stats(key: FlowKey) -> impl Strategy<Value = WindowStats> {
        (0.0..2000.0f64, 0u64..30, 0u64..40, 0u64..10).prop_map(move |(rate, srcs, ports, anom)| {
            let mut s = WindowStats::empty(1);
            s.per_dst_pkt_rate.insert(key.responder_ip, rate);
            s.per_dst_distinct_srcs.insert(key.responder_ip, srcs);
            s.per_src_distinct_dst_ports.insert(key.initiator_ip, ports);
            s.anomalous_flag_flows.insert(key.initiator_ip, anom);
            s
        })
    }

    // Independent restatement of the rule table.
    fn oracle(f: &FeatureVector, s: &WindowStats, k: &FlowKey, c: &DetectorConfig) -> Option<Category> {
        let rate_hit = s.pkt_rate(k.responder_ip) >= c.rate_thresh;
        let candidates = [
            (rate_hit && s.distinct_srcs(k.responder_ip) >= c.ddos_src_thresh, Category::DDoS),
            (rate_hit && s.distinct_srcs(k.responder_ip) < c.ddos_src_thresh, Category::DoS),
            (s.distinct_dst_ports(k.initiator_ip) >= c.scan_port_thresh, Category::ServiceScan),
            (s.anomalous_flows(k.initiator_ip) >= c.osscan_thresh, Category::OSScan),
            (
                f.duration_s >= 60.0 && f.mean_pkt_size <= 32.0 && f.iat_cv <= 0.3 && f.fwd_bwd_ratio >= 2.0,
                Category::Keylogging,
            ),
        ];
        candidates.into_iter().find(|(hit, _)| *hit).map(|(_, c)| c)
    }

    proptest! {
        #[test]
        fn cascade_matches_rule_table(f in arb_features(), s in arb_stats(watched_key())) {
            let cfg = DetectorConfig::default();
            let v = classify(&f, &s, &watched_key(), &cfg);
            prop_assert_eq!(v.category, oracle(&f, &s, &watched_key(), &cfg));
            prop_assert_eq!(v.category.is_some(), v.verdict == VerdictKind::Attack);
            prop_assert_eq!(v.score == 0.0, v.verdict == VerdictKind::Normal);
            prop_assert!((0.0..=1.0).contains(&v.score));
        }

        #[test]
        fn raising_rate_threshold_never_creates_attacks(
            f in arb_features(),
            s in arb_stats(watched_key()),
            t in 1.0..1500.0f64,
            bump in 0.0..1500.0f64,
        ) {
            let low = DetectorConfig { rate_thresh: t, ..DetectorConfig::default() };
            let high = DetectorConfig { rate_thresh: t + bump, ..DetectorConfig::default() };
            if classify(&f, &s, &watched_key(), &low).verdict == VerdictKind::Normal {
                prop_assert_eq!(classify(&f, &s, &watched_key(), &high).verdict, VerdictKind::Normal);
            }
        }
    }
}
