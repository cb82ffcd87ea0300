//! Labelled flow CSV I/O and offline evaluation.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::classify::{classify, Category, Verdict};
use super::features::extract_features;
use super::flow::{FlagCounts, FlowKey, FlowRecord, FlowState, RunningStats};
use super::packet::Proto;
use super::window::{aggregate_flows, window_id};
use super::NidsConfig;

pub const FLOW_CSV_HEADER: [&str; 18] = [
    "ts_start_us",
    "ts_end_us",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "proto",
    "fwd_pkts",
    "bwd_pkts",
    "fwd_bytes",
    "bwd_bytes",
    "iat_mean_ms",
    "iat_std_ms",
    "syn",
    "fin",
    "rst",
    "label",
    "category",
];

const UNLABELLED_COLUMNS: usize = 16;

/// Ground truth or prediction for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficClass {
    Normal,
    Attack(Category),
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 6] = [
        TrafficClass::Normal,
        TrafficClass::Attack(Category::DDoS),
        TrafficClass::Attack(Category::DoS),
        TrafficClass::Attack(Category::OSScan),
        TrafficClass::Attack(Category::ServiceScan),
        TrafficClass::Attack(Category::Keylogging),
    ];

    pub fn of(verdict: &Verdict) -> Self {
        verdict.category.map_or(TrafficClass::Normal, TrafficClass::Attack)
    }

    pub fn label(self) -> &'static str {
        match self {
            TrafficClass::Normal => "Normal",
            TrafficClass::Attack(_) => "Attack",
        }
    }

    pub fn category_name(self) -> &'static str {
        match self {
            TrafficClass::Normal => "Normal",
            TrafficClass::Attack(c) => c.as_str(),
        }
    }
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.category_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow {
    pub record: FlowRecord,
    pub class: Option<TrafficClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("flow CSV row {row}, column {column}: {reason}")]
pub struct SchemaError {
    /// 1-based data row; 0 means the header.
    pub row: usize,
    pub column: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Reads a flow CSV. With `require_labels`, the label and category columns
/// must be present and filled.
pub fn read_flow_csv<R: Read>(reader: R, require_labels: bool) -> Result<Vec<FlowRow>, SchemaError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| schema(0, "header", e.to_string()))?.clone();
    if headers.is_empty() && rdr.is_done() {
        return Ok(Vec::new());
    }
    let width = if headers.len() == UNLABELLED_COLUMNS && !require_labels {
        UNLABELLED_COLUMNS
    } else {
        FLOW_CSV_HEADER.len()
    };
    if headers.len() != width {
        return Err(schema(0, "header", format!("expected {width} columns, found {}", headers.len())));
    }
    for (i, expected) in FLOW_CSV_HEADER[..width].iter().enumerate() {
        if &headers[i] != *expected {
            return Err(schema(0, expected, format!("found {:?}", &headers[i])));
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| schema(row, "record", e.to_string()))?;
        if rec.len() != width {
            return Err(schema(row, "record", format!("expected {width} fields, found {}", rec.len())));
        }
        out.push(parse_row(&rec, row, width == FLOW_CSV_HEADER.len())?);
    }
    Ok(out)
}

fn schema(row: usize, column: &str, reason: impl Into<String>) -> SchemaError {
    SchemaError {
        row,
        column: column.to_string(),
        reason: reason.into(),
    }
}

fn parse_row(rec: &csv::StringRecord, row: usize, labelled: bool) -> Result<FlowRow, SchemaError> {
    fn get<T: std::str::FromStr>(rec: &csv::StringRecord, row: usize, i: usize) -> Result<T, SchemaError> {
        rec[i]
            .parse()
            .map_err(|_| schema(row, FLOW_CSV_HEADER[i], format!("invalid value {:?}", &rec[i])))
    }
    let float = |i: usize| -> Result<f64, SchemaError> {
        let v: f64 = get(rec, row, i)?;
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(schema(row, FLOW_CSV_HEADER[i], "must be a finite non-negative number"))
        }
    };
    let first: u64 = get(rec, row, 0)?;
    let last: u64 = get(rec, row, 1)?;
    if last < first {
        return Err(schema(row, "ts_end_us", "earlier than ts_start_us"));
    }
    let proto: Proto = get(rec, row, 6)?;
    let key = FlowKey {
        initiator_ip: get(rec, row, 2)?,
        initiator_port: get(rec, row, 3)?,
        responder_ip: get(rec, row, 4)?,
        responder_port: get(rec, row, 5)?,
        proto,
    };
    let (fwd_pkts, bwd_pkts): (u64, u64) = (get(rec, row, 7)?, get(rec, row, 8)?);
    let total = fwd_pkts + bwd_pkts;
    if total == 0 {
        return Err(schema(row, "fwd_pkts", "flow has no packets"));
    }
    let (syn, fin, rst): (u64, u64, u64) = (get(rec, row, 13)?, get(rec, row, 14)?, get(rec, row, 15)?);
    let record = FlowRecord {
        key,
        first_ts_us: first,
        last_ts_us: last,
        fwd_pkts,
        bwd_pkts,
        fwd_bytes: get(rec, row, 9)?,
        bwd_bytes: get(rec, row, 10)?,
        iat: RunningStats::from_moments(total - 1, float(11)? * 1e3, float(12)? * 1e3),
        flags: FlagCounts {
            syn,
            fin,
            rst,
            anomalous: u64::from(looks_anomalous(proto, total, syn, fin)),
            ..FlagCounts::default()
        },
        state: FlowState::ExpiredIdle,
    };
    let class = if labelled { parse_class(rec, row)? } else { None };
    Ok(FlowRow { record, class })
}

fn parse_class(rec: &csv::StringRecord, row: usize) -> Result<Option<TrafficClass>, SchemaError> {
    let (label, category) = (&rec[16], &rec[17]);
    if label.is_empty() && category.is_empty() {
        return Ok(None);
    }
    let class = match category {
        "Normal" => TrafficClass::Normal,
        other => TrafficClass::Attack(
            other
                .parse()
                .map_err(|_| schema(row, "category", format!("unknown category {other:?}")))?,
        ),
    };
    match label {
        "Normal" | "Attack" if label == class.label() => Ok(Some(class)),
        "Normal" | "Attack" => Err(schema(
            row,
            "label",
            format!("label {label:?} contradicts category {category:?}"),
        )),
        other => Err(schema(row, "label", format!("unknown label {other:?}"))),
    }
}

/// Flow summaries carry flag totals but not per-packet combinations, so a
/// short TCP exchange is taken as a probe when it never set SYN, or set
/// both SYN and FIN.
fn looks_anomalous(proto: Proto, total_pkts: u64, syn: u64, fin: u64) -> bool {
    proto == Proto::Tcp && total_pkts <= 2 && (syn == 0 || fin > 0)
}

pub fn write_flow_csv<W: Write>(writer: W, rows: &[FlowRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FLOW_CSV_HEADER)?;
    for r in rows {
        let f = &r.record;
        let (mean_ms, std_ms) = if f.total_pkts() < 2 {
            (0.0, 0.0)
        } else {
            (f.iat.mean / 1e3, f.iat.std_dev() / 1e3)
        };
        let (label, category) = r.class.map_or(("", ""), |c| (c.label(), c.category_name()));
        w.write_record([
            f.first_ts_us.to_string(),
            f.last_ts_us.to_string(),
            f.key.initiator_ip.to_string(),
            f.key.initiator_port.to_string(),
            f.key.responder_ip.to_string(),
            f.key.responder_port.to_string(),
            f.key.proto.to_string(),
            f.fwd_pkts.to_string(),
            f.bwd_pkts.to_string(),
            f.fwd_bytes.to_string(),
            f.bwd_bytes.to_string(),
            mean_ms.to_string(),
            std_ms.to_string(),
            f.flags.syn.to_string(),
            f.flags.fin.to_string(),
            f.flags.rst.to_string(),
            label.to_string(),
            category.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Classifies flow records, each in the window its first packet falls in.
/// Output order follows the input.
pub fn classify_flows(records: &[FlowRecord], cfg: &NidsConfig) -> Vec<Verdict> {
    let w = cfg.window_len_s;
    let mut windows: BTreeMap<u64, Vec<&FlowRecord>> = BTreeMap::new();
    for r in records {
        windows.entry(window_id(r.first_ts_us, w)).or_default().push(r);
    }
    let stats: BTreeMap<u64, _> = windows
        .into_iter()
        .map(|(id, flows)| (id, aggregate_flows(flows, id, w)))
        .collect();
    records
        .iter()
        .map(|r| {
            let s = &stats[&window_id(r.first_ts_us, w)];
            classify(&extract_features(r), s, &r.key, &cfg.detector)
        })
        .collect()
}

pub fn evaluate(rows: &[FlowRow], cfg: &NidsConfig) -> EvaluationReport {
    let records: Vec<FlowRecord> = rows.iter().map(|r| r.record.clone()).collect();
    let verdicts = classify_flows(&records, cfg);
    let mut report = EvaluationReport::default();
    for (row, v) in rows.iter().zip(&verdicts) {
        report.record(row.class.unwrap_or(TrafficClass::Normal), TrafficClass::of(v));
    }
    report
}

pub fn replay_dataset(path: &Path, cfg: &NidsConfig) -> Result<EvaluationReport, ReplayError> {
    let file = std::fs::File::open(path).map_err(|source| ReplayError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows = read_flow_csv(std::io::BufReader::new(file), true)?;
    Ok(evaluate(&rows, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        safe_div(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        safe_div(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn safe_div(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Confusion counts keyed by (truth, predicted). Only counts are kept, so
/// rows may be recorded in any order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EvaluationReport {
    confusion: BTreeMap<(TrafficClass, TrafficClass), u64>,
}

impl EvaluationReport {
    pub fn record(&mut self, truth: TrafficClass, predicted: TrafficClass) {
        *self.confusion.entry((truth, predicted)).or_default() += 1;
    }

    pub fn merge(&mut self, other: &EvaluationReport) {
        for (k, n) in &other.confusion {
            *self.confusion.entry(*k).or_default() += n;
        }
    }

    pub fn rows(&self) -> u64 {
        self.confusion.values().sum()
    }

    pub fn counts(&self, class: TrafficClass) -> ClassCounts {
        let mut c = ClassCounts::default();
        for (&(truth, pred), &n) in &self.confusion {
            match (truth == class, pred == class) {
                (true, true) => c.tp += n,
                (false, true) => c.fp += n,
                (true, false) => c.fn_ += n,
                (false, false) => c.tn += n,
            }
        }
        c
    }

    pub fn recall(&self, category: Category) -> f64 {
        self.counts(TrafficClass::Attack(category)).recall()
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self.confusion.iter().filter(|((t, p), _)| t == p).map(|(_, n)| n).sum();
        safe_div(correct, self.rows())
    }

    /// Share of Normal rows predicted as any attack.
    pub fn false_positive_rate(&self) -> f64 {
        let normal = |t: &TrafficClass| *t == TrafficClass::Normal;
        let negatives = self.confusion.iter().filter(|((t, _), _)| normal(t)).map(|(_, n)| n).sum();
        let false_alarms = self
            .confusion
            .iter()
            .filter(|((t, p), _)| normal(t) && !normal(p))
            .map(|(_, n)| n)
            .sum();
        safe_div(false_alarms, negatives)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in TrafficClass::ALL {
            let c = self.counts(class);
            let _ = writeln!(out, "category {class}");
            let _ = writeln!(out, "  tp {}\n  fp {}\n  fn {}\n  tn {}", c.tp, c.fp, c.fn_, c.tn);
            let _ = writeln!(
                out,
                "  precision {:.4}\n  recall {:.4}\n  f1 {:.4}",
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        let _ = writeln!(out, "overall");
        let _ = writeln!(out, "  rows {}", self.rows());
        let _ = writeln!(out, "  accuracy {:.4}", self.accuracy());
        let _ = writeln!(out, "  fpr {:.4}", self.false_positive_rate());
        out
    }
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "ts_start_us,ts_end_us,src_ip,src_port,dst_ip,dst_port,proto,fwd_pkts,bwd_pkts,fwd_bytes,bwd_bytes,iat_mean_ms,iat_std_ms,syn,fin,rst,label,category\n";

    fn three_rows() -> String {
        format!(
            "{HEADER}\
0,4000000,192.168.1.10,40000,52.1.1.1,443,TCP,10,8,2000,9000,235.3,120.1,2,2,0,Normal,Normal
1000000,1100000,192.168.1.11,53000,8.8.8.8,53,UDP,1,1,60,200,100,0,0,0,0,Normal,Normal
2000000,11990000,10.66.0.1,30000,192.168.50.10,80,TCP,6000,0,3000000,0,1.665,0.5,0,0,0,Attack,DoS
"
        )
    }

    #[test]
    fn three_row_dataset_hand_computed() {
        let rows = read_flow_csv(three_rows().as_bytes(), true).unwrap();
        let report = evaluate(&rows, &NidsConfig::default());
        let dos = report.counts(TrafficClass::Attack(Category::DoS));
        assert_eq!(dos, ClassCounts { tp: 1, fp: 0, fn_: 0, tn: 2 });
        assert_eq!(report.recall(Category::DoS), 1.0);
        assert_eq!(report.false_positive_rate(), 0.0);
        assert_eq!(report.accuracy(), 1.0);
        let text = report.to_text();
        assert!(text.contains("category DoS\n  tp 1\n  fp 0\n  fn 0\n  tn 2\n  precision 1.0000\n  recall 1.0000\n  f1 1.0000\n"), "{text}");
        assert!(text.ends_with("overall\n  rows 3\n  accuracy 1.0000\n  fpr 0.0000\n"));
    }

    #[test]
    fn empty_dataset_gives_zero_report() {
        let report = evaluate(&read_flow_csv(HEADER.as_bytes(), true).unwrap(), &NidsConfig::default());
        assert_eq!(report.rows(), 0);
        assert_eq!(report.accuracy(), 0.0);
        assert!(report.to_text().contains("category Keylogging\n  tp 0\n  fp 0\n  fn 0\n  tn 0\n  precision 0.0000"));
        assert!(read_flow_csv(&b""[..], true).unwrap().is_empty());
        assert!(read_flow_csv(&b"ts_start_us\n"[..], true).is_err());
    }

    #[test]
    fn unknown_label_names_the_row() {
        let text = three_rows().replace("Attack,DoS", "Theft,DoS");
        let err = read_flow_csv(text.as_bytes(), true).unwrap_err();
        assert_eq!((err.row, err.column.as_str()), (3, "label"));
        assert!(err.to_string().contains("row 3"));
        let text = three_rows().replace("Attack,DoS", "Attack,Theft");
        assert_eq!(read_flow_csv(text.as_bytes(), true).unwrap_err().column, "category");
        let text = three_rows().replace("Attack,DoS", "Normal,DoS");
        assert_eq!(read_flow_csv(text.as_bytes(), true).unwrap_err().column, "label");
    }

    #[test]
    fn labels_required_for_replay() {
        let text = three_rows().replace("Attack,DoS", ",");
        assert!(read_flow_csv(text.as_bytes(), true).unwrap().iter().any(|r| r.class.is_none()));
        let short = HEADER.replace(",label,category", "");
        assert!(read_flow_csv(short.as_bytes(), true).is_err());
        assert!(read_flow_csv(short.as_bytes(), false).unwrap().is_empty());
    }

    #[test]
    fn write_then_read_round_trips() {
        let rows = read_flow_csv(three_rows().as_bytes(), true).unwrap();
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, &rows).unwrap();
        let back = read_flow_csv(buf.as_slice(), true).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.class, b.class);
            assert_eq!(a.record.key, b.record.key);
            assert!((a.record.iat.mean - b.record.iat.mean).abs() < 1e-6);
        }
    }

    #[test]
    fn report_is_order_independent() {
        let mut a = EvaluationReport::default();
        let mut b = EvaluationReport::default();
        let pairs = [
            (TrafficClass::Normal, TrafficClass::Normal),
            (TrafficClass::Normal, TrafficClass::Attack(Category::DoS)),
            (TrafficClass::Attack(Category::DDoS), TrafficClass::Attack(Category::DDoS)),
        ];
        pairs.iter().for_each(|&(t, p)| a.record(t, p));
        pairs.iter().rev().for_each(|&(t, p)| b.record(t, p));
        assert_eq!(a, b);
        assert_eq!(a.false_positive_rate(), 0.5);
    }
}
