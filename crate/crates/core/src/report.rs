use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::access::AccessStats;
use crate::error::Result;
use crate::model::{PacketRecord, Prefix};

/// Where a report was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    ArrayEviction,
    ArrayFlush,
    HhEviction,
    HhFlush,
}

impl fmt::Display for ReportSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportSource::ArrayEviction => "array_eviction",
            ReportSource::ArrayFlush => "array_flush",
            ReportSource::HhEviction => "hh_eviction",
            ReportSource::HhFlush => "hh_flush",
        })
    }
}

/// Data-plane to control-plane message: prefix, packets monitored and
/// out-of-order packets among them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Report {
    pub prefix: Prefix,
    pub n: u64,
    pub o: u64,
    pub source: ReportSource,
}

/// A streaming detector that turns packets into reports.
pub trait Detector {
    /// Processes one packet, appending any reports it triggers.
    fn process(&mut self, pkt: &PacketRecord, out: &mut Vec<Report>);

    /// Emits end-of-interval reports and clears the state.
    fn flush_into(&mut self, out: &mut Vec<Report>);

    fn access_stats(&self) -> AccessStats;

    /// Streams a whole trace and flushes.
    fn run(&mut self, packets: &[PacketRecord]) -> Vec<Report> {
        let mut out = Vec::new();
        for pkt in packets {
            self.process(pkt, &mut out);
        }
        self.flush_into(&mut out);
        out
    }
}

/// Writes reports as `prefix,n,o,source`.
pub fn write_reports<W: Write>(sink: W, reports: &[Report]) -> Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "prefix,n,o,source")?;
    for r in reports {
        writeln!(out, "{},{},{},{}", r.prefix, r.n, r.o, r.source)?;
    }
    out.flush()?;
    Ok(())
}
