//! Canonical trace CSV reading and writing, plus ingestion filters.
//!
//! Format: a header line `ts,src_ip,dst_ip,src_port,dst_port,seq,payload_len`
//! followed by one row per packet, sorted by nondecreasing `ts` (decimal
//! seconds). Rows with an empty payload are dropped on ingestion because
//! they cannot advance the sequence space.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{FlowId, PacketRecord};

pub const TRACE_HEADER: [&str; 7] = ["ts", "src_ip", "dst_ip", "src_port", "dst_port", "seq", "payload_len"];

/// Summary counts of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TraceMeta {
    pub packet_count: u64,
    pub flow_count: u64,
    pub prefix_count: u64,
    pub duration_seconds: f64,
}

impl TraceMeta {
    pub fn scan(packets: &[PacketRecord]) -> Self {
        let flows: HashSet<FlowId> = packets.iter().map(|p| p.flow).collect();
        let prefixes: HashSet<_> = flows.iter().map(|f| f.prefix()).collect();
        let duration_seconds = match (packets.first(), packets.last()) {
            (Some(a), Some(b)) => b.ts - a.ts,
            _ => 0.0,
        };
        Self {
            packet_count: packets.len() as u64,
            flow_count: flows.len() as u64,
            prefix_count: prefixes.len() as u64,
            duration_seconds,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub packets: Vec<PacketRecord>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(packets: Vec<PacketRecord>) -> Self {
        let meta = TraceMeta::scan(&packets);
        Self { packets, meta }
    }
}

fn field<T: FromStr>(record: &csv::StringRecord, idx: usize, line: u64) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        line,
        message: format!("expected {} fields, found {}", TRACE_HEADER.len(), record.len()),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {} value {raw:?}", TRACE_HEADER[idx]),
    })
}

/// Reads a canonical trace, dropping zero-payload rows.
pub fn parse_trace<R: Read>(source: R) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut rows = reader.records();

    match rows.next() {
        None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
        Some(header) => {
            let header = header?;
            let names: Vec<&str> = header.iter().map(str::trim).collect();
            if names != TRACE_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header {:?}", TRACE_HEADER.join(",")),
                });
            }
        }
    }

    let mut packets = Vec::new();
    let mut prev_ts = f64::NEG_INFINITY;
    for row in rows {
        let record = row?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != TRACE_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", TRACE_HEADER.len(), record.len()),
            });
        }
        let ts: f64 = field(&record, 0, line)?;
        if !ts.is_finite() {
            return Err(Error::Parse { line, message: format!("non-finite timestamp {ts}") });
        }
        if ts < prev_ts {
            return Err(Error::DecreasingTimestamp { line, ts, prev: prev_ts });
        }
        prev_ts = ts;
        let src: Ipv4Addr = field(&record, 1, line)?;
        let dst: Ipv4Addr = field(&record, 2, line)?;
        let payload_len: u32 = field(&record, 6, line)?;
        if payload_len == 0 {
            continue;
        }
        packets.push(PacketRecord {
            flow: FlowId::new(src, dst, field(&record, 3, line)?, field(&record, 4, line)?),
            seq: field(&record, 5, line)?,
            payload_len,
            ts,
        });
    }
    Ok(Trace::new(packets))
}

pub fn read_trace_file(path: impl AsRef<std::path::Path>) -> Result<Trace> {
    let file = std::fs::File::open(path)?;
    parse_trace(std::io::BufReader::new(file))
}

/// Writes packets in the canonical format. Timestamps use the shortest
/// decimal form that parses back to the same `f64`.
pub fn write_trace<W: Write>(sink: W, packets: &[PacketRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "{}", TRACE_HEADER.join(","))?;
    for p in packets {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.ts,
            p.flow.src_addr(),
            p.flow.dst_addr(),
            p.flow.src_port,
            p.flow.dst_port,
            p.seq,
            p.payload_len
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps packets sent from the server side of a connection, identified by
/// the numerically lower port. Ties are dropped.
pub fn filter_server_to_client(packets: &[PacketRecord]) -> Vec<PacketRecord> {
    packets
        .iter()
        .filter(|p| p.flow.src_port < p.flow.dst_port)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "ts,src_ip,dst_ip,src_port,dst_port,seq,payload_len\n";

    #[test]
    fn header_only_is_empty() {
        let t = parse_trace(HEADER.as_bytes()).unwrap();
        assert!(t.packets.is_empty());
        assert_eq!(t.meta, TraceMeta::default());
    }

    #[test]
    fn single_row_maps_fields() {
        let text = format!("{HEADER}0.000001,10.0.0.1,10.0.1.1,443,50000,1000,100\n");
        let t = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(t.packets.len(), 1);
        let p = t.packets[0];
        assert_eq!(p.ts, 0.000001);
        assert_eq!(p.flow.src_addr(), Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(p.flow.dst_addr(), Ipv4Addr::new(10, 0, 1, 1));
        assert_eq!((p.flow.src_port, p.flow.dst_port), (443, 50000));
        assert_eq!((p.seq, p.payload_len), (1000, 100));
        assert_eq!(t.meta.flow_count, 1);
        assert_eq!(t.meta.prefix_count, 1);
    }

    #[test]
    fn zero_payload_rows_are_dropped() {
        let text = format!(
            "{HEADER}0.1,10.0.0.1,10.0.1.1,443,50000,1000,0\n0.2,10.0.0.1,10.0.1.1,443,50000,1000,100\n"
        );
        let t = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(t.packets.len(), 1);
        assert_eq!(t.packets[0].payload_len, 100);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = format!("{HEADER}0.1,10.0.0.1,10.0.1.1,443,50000,1000,100\n0.2,10.0.0,10.0.1.1,443,1,1,1\n");
        match parse_trace(text.as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("src_ip"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        let short = format!("{HEADER}0.1,10.0.0.1\n");
        assert!(matches!(parse_trace(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn decreasing_timestamp_is_rejected() {
        let text = format!(
            "{HEADER}0.2,10.0.0.1,10.0.1.1,443,50000,1000,100\n0.1,10.0.0.1,10.0.1.1,443,50000,1100,100\n"
        );
        assert!(matches!(
            parse_trace(text.as_bytes()),
            Err(Error::DecreasingTimestamp { line: 3, .. })
        ));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_trace("a,b,c\n".as_bytes()).is_err());
        assert!(parse_trace("".as_bytes()).is_err());
    }

    #[test]
    fn server_to_client_filter() {
        let mk = |sp, dp| PacketRecord {
            flow: FlowId::new([1, 1, 1, 1].into(), [2, 2, 2, 2].into(), sp, dp),
            seq: 0,
            payload_len: 1,
            ts: 0.0,
        };
        let kept = filter_server_to_client(&[mk(443, 51234), mk(51234, 443), mk(80, 80)]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].flow.src_port, 443);
    }

    fn arb_packets() -> impl Strategy<Value = Vec<PacketRecord>> {
        prop::collection::vec(
            (any::<u32>(), any::<u32>(), any::<u16>(), any::<u16>(), any::<u32>(), 1u32..65536, 0.0f64..1e-3),
            0..60,
        )
        .prop_map(|rows| {
            let mut ts = 0.0;
            rows.into_iter()
                .map(|(src, dst, sp, dp, seq, len, gap)| {
                    ts += gap;
                    PacketRecord {
                        flow: FlowId { src_ip: src, dst_ip: dst, src_port: sp, dst_port: dp },
                        seq,
                        payload_len: len,
                        ts,
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(packets in arb_packets()) {
            let mut buf = Vec::new();
            write_trace(&mut buf, &packets).unwrap();
            let t = parse_trace(buf.as_slice()).unwrap();
            prop_assert_eq!(&t.packets, &packets);
            prop_assert_eq!(t.meta, TraceMeta::scan(&packets));
        }
    }
}
