use std::fmt;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FIN: u8 = 0x01;
pub const SYN: u8 = 0x02;
pub const RST: u8 = 0x04;
pub const PSH: u8 = 0x08;
pub const ACK: u8 = 0x10;
pub const URG: u8 = 0x20;

pub const PACKET_CSV_HEADER: [&str; 8] = [
    "ts_us", "src_ip", "src_port", "dst_ip", "dst_port", "proto", "length", "tcp_flags",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Proto {
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "UDP")]
    Udp,
    #[serde(rename = "ICMP")]
    Icmp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "TCP",
            Proto::Udp => "UDP",
            Proto::Icmp => "ICMP",
        })
    }
}

impl FromStr for Proto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TCP" => Ok(Proto::Tcp),
            "UDP" => Ok(Proto::Udp),
            "ICMP" => Ok(Proto::Icmp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketSummary {
    pub ts_us: u64,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Proto,
    pub length: u32,
    pub tcp_flags: u8,
}

impl PacketSummary {
    /// SYN+FIN, no flags at all (NULL), or FIN+PSH+URG (Xmas).
    pub fn has_anomalous_flags(&self) -> bool {
        self.proto == Proto::Tcp && is_anomalous_flag_set(self.tcp_flags)
    }
}

pub fn is_anomalous_flag_set(flags: u8) -> bool {
    let xmas = FIN | PSH | URG;
    flags & (SYN | FIN) == SYN | FIN || flags == 0 || flags & xmas == xmas
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed packet at row {row}: {reason}")]
pub struct MalformedPacket {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum PacketCsvError {
    #[error("packet CSV header: expected column {expected:?} at position {position}, found {found:?}")]
    Header {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("packet CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// A packet CSV row: either a packet (with optional generator label) or a
/// malformed row that should be counted and skipped.
#[derive(Debug, Clone, PartialEq)]
pub enum PacketRow {
    Packet { packet: PacketSummary, label: Option<String> },
    Malformed(MalformedPacket),
}

/// Reads `ts_us,src_ip,src_port,dst_ip,dst_port,proto,length,tcp_flags`
/// (an optional trailing `label` column is accepted).
pub fn read_packet_csv<R: Read>(reader: R) -> Result<Vec<PacketRow>, PacketCsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (position, expected) in PACKET_CSV_HEADER.iter().enumerate() {
        let found = headers.get(position).unwrap_or("");
        if found != *expected {
            return Err(PacketCsvError::Header {
                position: position + 1,
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
    }
    let labelled = match headers.get(8) {
        None => false,
        Some("label") if headers.len() == 9 => true,
        Some(other) => {
            return Err(PacketCsvError::Header {
                position: 9,
                expected: "label".into(),
                found: other.to_string(),
            })
        }
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        rows.push(match parse_packet_record(&rec) {
            Ok(packet) => PacketRow::Packet {
                packet,
                label: labelled.then(|| rec.get(8).unwrap_or("").to_string()),
            },
            Err(reason) => PacketRow::Malformed(MalformedPacket { row, reason }),
        });
    }
    Ok(rows)
}

fn parse_packet_record(rec: &csv::StringRecord) -> Result<PacketSummary, String> {
    let field = |i: usize| rec.get(i).ok_or_else(|| format!("missing {}", PACKET_CSV_HEADER[i]));
    let int = |i: usize| -> Result<i64, String> {
        field(i)?
            .parse::<i64>()
            .map_err(|_| format!("{} is not an integer", PACKET_CSV_HEADER[i]))
    };
    let ip = |i: usize| -> Result<Ipv4Addr, String> {
        field(i)?
            .parse::<Ipv4Addr>()
            .map_err(|_| format!("invalid {} {:?}", PACKET_CSV_HEADER[i], rec.get(i).unwrap_or("")))
    };
    let port = |i: usize| -> Result<u16, String> {
        u16::try_from(int(i)?).map_err(|_| format!("{} out of range", PACKET_CSV_HEADER[i]))
    };
    let ts = int(0)?;
    if ts < 0 {
        return Err("negative timestamp".into());
    }
    let length = int(6)?;
    if length < 0 {
        return Err("negative length".into());
    }
    let proto: Proto = field(5)?.parse()?;
    let flags = u8::try_from(int(7)?).map_err(|_| "tcp_flags out of range 0-255".to_string())?;
    let (src_port, dst_port) = (port(2)?, port(4)?);
    if proto == Proto::Icmp && (src_port != 0 || dst_port != 0) {
        return Err("ICMP packets must have zero ports".into());
    }
    if proto != Proto::Tcp && flags != 0 {
        return Err("tcp_flags set on a non-TCP packet".into());
    }
    Ok(PacketSummary {
        ts_us: ts as u64,
        src_ip: ip(1)?,
        src_port,
        dst_ip: ip(3)?,
        dst_port,
        proto,
        length: u32::try_from(length).map_err(|_| "length out of range".to_string())?,
        tcp_flags: flags,
    })
}

/// Writes packets as CSV; with labels, a trailing `label` column is added.
pub fn write_packet_csv<W: Write>(
    writer: W,
    packets: &[PacketSummary],
    labels: Option<&[String]>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = PACKET_CSV_HEADER.to_vec();
    if labels.is_some() {
        header.push("label");
    }
    w.write_record(&header)?;
    for (i, p) in packets.iter().enumerate() {
        let mut rec = vec![
            p.ts_us.to_string(),
            p.src_ip.to_string(),
            p.src_port.to_string(),
            p.dst_ip.to_string(),
            p.dst_port.to_string(),
            p.proto.to_string(),
            p.length.to_string(),
            p.tcp_flags.to_string(),
        ];
        if let Some(labels) = labels {
            rec.push(labels.get(i).cloned().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anomalous_flag_combinations() {
        assert!(is_anomalous_flag_set(SYN | FIN));
        assert!(is_anomalous_flag_set(0));
        assert!(is_anomalous_flag_set(FIN | PSH | URG));
        assert!(is_anomalous_flag_set(FIN | PSH | URG | ACK));
        assert!(!is_anomalous_flag_set(SYN));
        assert!(!is_anomalous_flag_set(SYN | ACK));
        assert!(!is_anomalous_flag_set(FIN | ACK));
        assert!(!is_anomalous_flag_set(PSH | ACK));
    }

    #[test]
    fn parses_rows_and_flags_malformed_ones() {
        let text = "\
ts_us,src_ip,src_port,dst_ip,dst_port,proto,length,tcp_flags
0,157.240.227.35,443,172.16.221.89,37288,TCP,100,24
1,300.1.1.1,1,1.1.1.1,1,TCP,0,0
2,1.1.1.1,1,1.1.1.1,1,TCP,-5,0
3,1.1.1.1,5,1.1.1.1,0,ICMP,10,0
4,1.1.1.1,0,2.2.2.2,0,ICMP,10,0
";
        let rows = read_packet_csv(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(matches!(&rows[0], PacketRow::Packet { packet, label: None } if packet.src_port == 443 && packet.tcp_flags == PSH | ACK));
        for (i, row) in rows[1..4].iter().enumerate() {
            assert!(matches!(row, PacketRow::Malformed(m) if m.row == i + 2), "{row:?}");
        }
        assert!(matches!(&rows[4], PacketRow::Packet { .. }));
    }

    #[test]
    fn bad_header_names_the_column() {
        let err = read_packet_csv("ts_us,src,src_port\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("\"src_ip\""), "{err}");
    }

    #[test]
    fn labelled_round_trip() {
        let p = PacketSummary {
            ts_us: 5,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            src_port: 1234,
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            dst_port: 80,
            proto: Proto::Tcp,
            length: 60,
            tcp_flags: SYN,
        };
        let mut buf = Vec::new();
        write_packet_csv(&mut buf, &[p.clone()], Some(&["DoS".to_string()])).unwrap();
        let rows = read_packet_csv(buf.as_slice()).unwrap();
        assert_eq!(rows, vec![PacketRow::Packet { packet: p, label: Some("DoS".into()) }]);
    }
}
