//! Flow-sampling array.
//!
//! `B` buckets, each holding at most one flow record, indexed by a hash of
//! the packet's /24 prefix so that one prefix cannot spread over the whole
//! array. A resident record is replaced lazily, only when a packet from a
//! different flow lands in its bucket and the record is stale (idle for
//! more than `T` seconds), has seen more than `C` packets, or has counted
//! more than `R` out-of-order packets. The last condition also sends a
//! report to the control plane.

use serde::Serialize;

use crate::access::{AccessMeter, AccessStats};
use crate::error::{Error, Result};
use crate::model::{pairwise_out_of_order, FlowId, PacketRecord, ReorderDef, SeqState};
use crate::report::{Detector, Report, ReportSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplerParams {
    pub buckets: usize,
    /// Staleness threshold `T`, seconds.
    pub staleness: f64,
    /// Packet-count threshold `C`.
    pub max_packets: u64,
    /// Out-of-order report threshold `R`.
    pub report_threshold: u64,
    pub def: ReorderDef,
    /// Report every evicted or flushed record, not only suspicious ones.
    pub report_all: bool,
    pub hash_seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            buckets: 1024,
            staleness: 2f64.powi(-15),
            max_packets: 16,
            report_threshold: 1,
            def: ReorderDef::Decrease,
            report_all: false,
            hash_seed: 0,
        }
    }
}

impl SamplerParams {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<()> {
        if !self.def.is_pairwise() {
            return Err(Error::UnsupportedDefinition(self.def));
        }
        if self.buckets == 0 {
            return Err(Error::InvalidConfig("bucket count must be at least 1".into()));
        }
        if !(self.staleness > 0.0) {
            return Err(Error::InvalidConfig("staleness threshold T must be positive".into()));
        }
        if self.max_packets == 0 || self.report_threshold == 0 {
            return Err(Error::InvalidConfig("C and R must be at least 1".into()));
        }
        Ok(())
    }
}

/// One monitored flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketRecord {
    pub flow: FlowId,
    pub seq_state: SeqState,
    pub last_ts: f64,
    /// Packets seen since admission, not counting the admitting packet.
    pub n: u64,
    pub o: u64,
}

impl BucketRecord {
    fn admit(pkt: &PacketRecord) -> Self {
        Self {
            flow: pkt.flow,
            seq_state: SeqState::new(pkt),
            last_ts: pkt.ts,
            n: 0,
            o: 0,
        }
    }

    fn report(&self, source: ReportSource) -> Report {
        Report {
            prefix: self.flow.prefix(),
            n: self.n,
            o: self.o,
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlowSampler {
    params: SamplerParams,
    buckets: Vec<Option<BucketRecord>>,
    meter: AccessMeter,
}

impl FlowSampler {
    pub fn new(params: SamplerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            buckets: vec![None; params.buckets],
            meter: AccessMeter::default(),
        })
    }

    pub fn params(&self) -> &SamplerParams {
        &self.params
    }

    pub fn bucket_index(&self, pkt: &PacketRecord) -> usize {
        pkt.prefix().bucket(self.params.hash_seed, self.params.buckets)
    }

    pub fn bucket(&self, index: usize) -> Option<&BucketRecord> {
        self.buckets[index].as_ref()
    }

    pub fn occupied(&self) -> usize {
        self.buckets.iter().filter(|b| b.is_some()).count()
    }

    fn wants_report(&self, rec: &BucketRecord) -> bool {
        if self.params.report_all {
            rec.n >= 1
        } else {
            rec.o > self.params.report_threshold
        }
    }

    /// Processes one packet; at most one bucket is read and written.
    pub fn process_packet(&mut self, pkt: &PacketRecord) -> Option<Report> {
        let idx = self.bucket_index(pkt);
        let p = self.params;
        self.meter.read();
        let slot = &mut self.buckets[idx];
        let report = match slot {
            None => {
                *slot = Some(BucketRecord::admit(pkt));
                self.meter.write();
                None
            }
            Some(rec) if rec.flow == pkt.flow => {
                if pairwise_out_of_order(&rec.seq_state, pkt, p.def) {
                    rec.o += 1;
                }
                rec.n += 1;
                rec.seq_state.observe(pkt);
                rec.last_ts = pkt.ts;
                self.meter.write();
                None
            }
            Some(rec) => {
                let stale = pkt.ts - rec.last_ts > p.staleness;
                let hogging = rec.n > p.max_packets;
                let suspicious = rec.o > p.report_threshold;
                if stale || hogging || suspicious {
                    let old = *rec;
                    *rec = BucketRecord::admit(pkt);
                    self.meter.write();
                    let report = if p.report_all { old.n >= 1 } else { suspicious };
                    report.then(|| old.report(ReportSource::ArrayEviction))
                } else {
                    None
                }
            }
        };
        self.meter.end_packet();
        report
    }

    /// Scans every bucket at interval end and clears the array.
    pub fn flush(&mut self) -> Vec<Report> {
        let mut out = Vec::new();
        self.flush_into(&mut out);
        out
    }

    pub fn access_stats(&self) -> AccessStats {
        self.meter.stats()
    }
}

impl Detector for FlowSampler {
    fn process(&mut self, pkt: &PacketRecord, out: &mut Vec<Report>) {
        if let Some(r) = self.process_packet(pkt) {
            out.push(r);
        }
    }

    fn flush_into(&mut self, out: &mut Vec<Report>) {
        for i in 0..self.buckets.len() {
            if let Some(rec) = self.buckets[i].take() {
                if self.wants_report(&rec) {
                    out.push(rec.report(ReportSource::ArrayFlush));
                }
            }
        }
    }

    fn access_stats(&self) -> AccessStats {
        self.meter.stats()
    }
}
