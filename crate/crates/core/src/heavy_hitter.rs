//! Multi-stage heavy-hitter table that also tracks reordering.
//!
//! A PRECISION-style structure: `d` stages of buckets, each keyed by a
//! per-stage hash of the packet's /24 prefix, so all flows of one prefix
//! compete for the same `d` entries. A packet of a resident flow updates
//! its entry in place. Any other packet finds the smallest count estimate
//! among its `d` candidate entries (empty entries count as zero) and takes
//! it over with probability `1/(min+1)`, inheriting `min+1` as its estimate.
//! Entries keep sequence state and out-of-order counters for the flow while
//! it stays resident.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::access::{AccessMeter, AccessStats};
use crate::error::{Error, Result};
use crate::model::{mix64, pairwise_out_of_order, FlowId, PacketRecord, ReorderDef, SeqState};
use crate::report::{Detector, Report, ReportSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HhParams {
    /// Number of stages `d`.
    pub stages: usize,
    pub buckets_per_stage: usize,
    /// Out-of-order fraction above which a flow's prefix is reported.
    pub report_fraction: f64,
    /// Entries with fewer observed packets are never reported.
    pub min_report_packets: u64,
    pub def: ReorderDef,
    pub hash_seed: u64,
    pub rng_seed: u64,
}

impl Default for HhParams {
    fn default() -> Self {
        Self {
            stages: 2,
            buckets_per_stage: 512,
            report_fraction: 0.01,
            min_report_packets: 16,
            def: ReorderDef::Decrease,
            hash_seed: 0,
            rng_seed: 0,
        }
    }
}

impl HhParams {
    pub fn validate(&self) -> Result<()> {
        if !self.def.is_pairwise() {
            return Err(Error::UnsupportedDefinition(self.def));
        }
        if self.stages == 0 || self.buckets_per_stage == 0 {
            return Err(Error::InvalidConfig("heavy-hitter table needs d >= 1 and buckets per stage >= 1".into()));
        }
        if !(self.report_fraction > 0.0 && self.report_fraction < 1.0) {
            return Err(Error::InvalidConfig("R_hh must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: usize) -> u64 {
        mix64(self.hash_seed ^ mix64(stage as u64 + 1))
    }

    pub fn total_buckets(&self) -> usize {
        self.stages * self.buckets_per_stage
    }
}

/// Decides randomized admissions.
pub trait Admission {
    /// Whether a newcomer replaces an entry whose count estimate is
    /// `min_count`.
    fn admit(&mut self, min_count: u64) -> bool;
}

/// Admits with probability `1/(min_count+1)`. Taking over an empty entry
/// (`min_count == 0`) is certain and draws nothing from the generator.
#[derive(Debug, Clone)]
pub struct RandomAdmission(ChaCha8Rng);

impl RandomAdmission {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl Admission for RandomAdmission {
    fn admit(&mut self, min_count: u64) -> bool {
        min_count == 0 || self.0.random_range(0..=min_count) == 0
    }
}

/// Admits every newcomer.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysAdmit;

impl Admission for AlwaysAdmit {
    fn admit(&mut self, _min_count: u64) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhEntry {
    pub flow: FlowId,
    pub count_est: u64,
    pub seq_state: SeqState,
    /// Packets seen while resident, not counting the admitting packet.
    pub n: u64,
    pub o: u64,
}

/// Result of offering one packet to the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HhOutcome {
    /// The packet's flow is resident after the call.
    pub resident: bool,
    /// Some flow of the packet's prefix is resident after the call.
    pub prefix_resident: bool,
    pub report: Option<Report>,
}

#[derive(Debug, Clone)]
pub struct HeavyHitterTable<A = RandomAdmission> {
    params: HhParams,
    seeds: Vec<u64>,
    entries: Vec<Option<HhEntry>>,
    admission: A,
    meter: AccessMeter,
}

impl HeavyHitterTable<RandomAdmission> {
    pub fn new(params: HhParams) -> Result<Self> {
        Self::with_admission(params, RandomAdmission::new(params.rng_seed))
    }
}

impl<A: Admission> HeavyHitterTable<A> {
    pub fn with_admission(params: HhParams, admission: A) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            seeds: (0..params.stages).map(|i| params.stage_seed(i)).collect(),
            entries: vec![None; params.total_buckets()],
            params,
            admission,
            meter: AccessMeter::default(),
        })
    }

    pub fn params(&self) -> &HhParams {
        &self.params
    }

    pub fn admission(&self) -> &A {
        &self.admission
    }

    fn slot(&self, stage: usize, flow: &FlowId) -> usize {
        let w = self.params.buckets_per_stage;
        stage * w + flow.prefix().bucket(self.seeds[stage], w)
    }

    fn should_report(&self, e: &HhEntry) -> bool {
        e.n >= self.params.min_report_packets && e.o as f64 > self.params.report_fraction * e.n as f64
    }

    /// Entry at `(stage, bucket)`.
    pub fn entry(&self, stage: usize, bucket: usize) -> Option<&HhEntry> {
        self.entries[stage * self.params.buckets_per_stage + bucket].as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = &HhEntry> {
        self.entries.iter().flatten()
    }

    /// Probes at most `d` entries and writes at most one.
    pub fn process_packet(&mut self, pkt: &PacketRecord) -> HhOutcome {
        let prefix = pkt.prefix();
        let mut min: Option<(usize, u64)> = None;
        let mut same_prefix = 0usize;
        for stage in 0..self.params.stages {
            let idx = self.slot(stage, &pkt.flow);
            self.meter.read();
            match &mut self.entries[idx] {
                Some(e) if e.flow == pkt.flow => {
                    if pairwise_out_of_order(&e.seq_state, pkt, self.params.def) {
                        e.o += 1;
                    }
                    e.n += 1;
                    e.count_est += 1;
                    e.seq_state.observe(pkt);
                    self.meter.write();
                    self.meter.end_packet();
                    return HhOutcome {
                        resident: true,
                        prefix_resident: true,
                        report: None,
                    };
                }
                Some(e) => {
                    if e.flow.prefix() == prefix {
                        same_prefix += 1;
                    }
                    if min.is_none_or(|(_, c)| e.count_est < c) {
                        min = Some((stage, e.count_est));
                    }
                }
                None => {
                    if min.is_none_or(|(_, c)| c > 0) {
                        min = Some((stage, 0));
                    }
                }
            }
        }

        let (stage, min_count) = min.expect("at least one stage");
        let admitted = self.admission.admit(min_count);
        let mut report = None;
        if admitted {
            let idx = self.slot(stage, &pkt.flow);
            let victim = self.entries[idx].replace(HhEntry {
                flow: pkt.flow,
                count_est: min_count + 1,
                seq_state: SeqState::new(pkt),
                n: 0,
                o: 0,
            });
            self.meter.write();
            if victim.is_none_or(|v| v.flow.prefix() != prefix) {
                same_prefix += 1;
            }
            if let Some(v) = victim {
                if self.should_report(&v) {
                    report = Some(Report {
                        prefix: v.flow.prefix(),
                        n: v.n,
                        o: v.o,
                        source: ReportSource::HhEviction,
                    });
                }
            }
        }
        self.meter.end_packet();
        HhOutcome {
            resident: admitted,
            prefix_resident: same_prefix > 0,
            report,
        }
    }

    /// Whether `flow` currently holds an entry.
    pub fn contains(&self, flow: &FlowId) -> bool {
        (0..self.params.stages).any(|stage| {
            self.entries[self.slot(stage, flow)]
                .as_ref()
                .is_some_and(|e| e.flow == *flow)
        })
    }

    pub fn flush(&mut self) -> Vec<Report> {
        let mut out = Vec::new();
        self.flush_into(&mut out);
        out
    }

    pub fn access_stats(&self) -> AccessStats {
        self.meter.stats()
    }
}

impl<A: Admission> Detector for HeavyHitterTable<A> {
    fn process(&mut self, pkt: &PacketRecord, out: &mut Vec<Report>) {
        if let Some(r) = self.process_packet(pkt).report {
            out.push(r);
        }
    }

    fn flush_into(&mut self, out: &mut Vec<Report>) {
        for i in 0..self.entries.len() {
            if let Some(e) = self.entries[i].take() {
                if self.should_report(&e) {
                    out.push(Report {
                        prefix: e.flow.prefix(),
                        n: e.n,
                        o: e.o,
                        source: ReportSource::HhFlush,
                    });
                }
            }
        }
    }

    fn access_stats(&self) -> AccessStats {
        self.meter.stats()
    }
}
