use serde::{Deserialize, Serialize};

use super::flow::FlowRecord;

/// Rates divide by at least one millisecond so single-packet flows stay finite.
pub const MIN_RATE_DURATION_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub duration_s: f64,
    pub total_pkts: u64,
    pub total_bytes: u64,
    pub pkt_rate: f64,
    pub byte_rate: f64,
    pub mean_pkt_size: f64,
    pub iat_mean_ms: f64,
    pub iat_std_ms: f64,
    pub iat_cv: f64,
    pub syn_count: u64,
    pub fin_count: u64,
    pub rst_count: u64,
    pub fwd_bwd_ratio: f64,
}

pub fn extract_features(flow: &FlowRecord) -> FeatureVector {
    let duration_s = flow.duration_us() as f64 / 1e6;
    let denom = duration_s.max(MIN_RATE_DURATION_S);
    let total_pkts = flow.total_pkts();
    let total_bytes = flow.total_bytes();
    let (iat_mean_ms, iat_std_ms) = if total_pkts < 2 {
        (0.0, 0.0)
    } else {
        (flow.iat.mean / 1e3, flow.iat.std_dev() / 1e3)
    };
    FeatureVector {
        duration_s,
        total_pkts,
        total_bytes,
        pkt_rate: total_pkts as f64 / denom,
        byte_rate: total_bytes as f64 / denom,
        mean_pkt_size: if total_pkts == 0 { 0.0 } else { total_bytes as f64 / total_pkts as f64 },
        iat_mean_ms,
        iat_std_ms,
        iat_cv: if iat_mean_ms > 0.0 { iat_std_ms / iat_mean_ms } else { 0.0 },
        syn_count: flow.flags.syn,
        fin_count: flow.flags.fin,
        rst_count: flow.flags.rst,
        fwd_bwd_ratio: flow.fwd_pkts as f64 / flow.bwd_pkts.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nids::flow::{FlowKey, FlowTable};
    use crate::nids::packet::{PacketSummary, Proto, ACK};
    use proptest::prelude::*;

    fn pkt(ts_us: u64, length: u32) -> PacketSummary {
        PacketSummary {
            ts_us,
            src_ip: [10, 0, 0, 1].into(),
            src_port: 5000,
            dst_ip: [10, 0, 0, 2].into(),
            dst_port: 80,
            proto: Proto::Tcp,
            length,
            tcp_flags: ACK,
        }
    }

    fn flow_of(pkts: &[PacketSummary]) -> FlowRecord {
        let mut table = FlowTable::new(crate::nids::flow::FlowTimeouts {
            idle_us: u64::MAX,
            active_us: u64::MAX,
        });
        for p in pkts {
            assert!(table.update(p).is_none());
        }
        table.drain().remove(0)
    }

    #[test]
    fn single_packet_uses_rate_floor() {
        let f = extract_features(&FlowRecord::start(FlowKey::from_packet(&pkt(0, 100)), &pkt(0, 100)));
        assert_eq!(f.duration_s, 0.0);
        assert_eq!(f.total_pkts, 1);
        assert_eq!((f.iat_mean_ms, f.iat_std_ms, f.iat_cv), (0.0, 0.0, 0.0));
        assert_eq!(f.pkt_rate, 1000.0);
        assert_eq!(f.fwd_bwd_ratio, 1.0);
    }

    #[test]
    fn three_packets_one_second_apart() {
        let f = extract_features(&flow_of(&[pkt(0, 100), pkt(1_000_000, 100), pkt(2_000_000, 100)]));
        assert_eq!(f.duration_s, 2.0);
        assert_eq!(f.iat_mean_ms, 1000.0);
        assert_eq!(f.byte_rate, 150.0);
        assert_eq!(f.mean_pkt_size, 100.0);
        assert_eq!(f.iat_std_ms, 0.0);
    }

    proptest! {
        #[test]
        fn running_moments_match_two_pass(gaps in prop::collection::vec(0u64..5_000_000, 1..200)) {
            let mut ts = 0u64;
            let mut pkts = vec![pkt(0, 64)];
            for g in &gaps {
                ts += g;
                pkts.push(pkt(ts, 64));
            }
            let f = extract_features(&flow_of(&pkts));
            let iats: Vec<f64> = pkts.windows(2).map(|w| (w[1].ts_us - w[0].ts_us) as f64 / 1e3).collect();
            let mean = iats.iter().sum::<f64>() / iats.len() as f64;
            let var = iats.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / iats.len() as f64;
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
            prop_assert!(rel(f.iat_mean_ms, mean));
            prop_assert!(rel(f.iat_std_ms.powi(2), var), "{} vs {}", f.iat_std_ms.powi(2), var);
            for x in [f.duration_s, f.pkt_rate, f.byte_rate, f.mean_pkt_size, f.iat_cv, f.fwd_bwd_ratio] {
                prop_assert!(x.is_finite() && x >= 0.0);
            }
        }
    }
}
