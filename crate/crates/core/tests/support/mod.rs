//! Straightforward reference implementations the optimized code is checked
//! against. They favour obviousness over speed.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reorder_core::{Admission, FlowId, PacketRecord, Prefix, Report, ReportSource};

pub fn flow(prefix: u32, host: u8, port: u16) -> FlowId {
    FlowId {
        src_ip: 0x0A00_0000 | (prefix << 8) | u32::from(host),
        dst_ip: 0xC0A8_0001,
        src_port: 443,
        dst_port: port,
    }
}

/// Random trace with jittery sequence numbers: in-order advances, exact
/// repeats, backward jumps and forward gaps all occur.
pub fn random_trace(seed: u64, packets: usize, flows: usize, prefixes: u32) -> Vec<PacketRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<FlowId> = (0..flows)
        .map(|i| flow(rng.random_range(0..prefixes.max(1)), rng.random_range(1..=254), 1024 + i as u16))
        .collect();
    let mut next: Vec<u32> = (0..flows).map(|_| rng.random_range(0..1 << 20)).collect();
    let mut ts = 0.0;
    (0..packets)
        .map(|_| {
            let f = rng.random_range(0..flows);
            let len = rng.random_range(1..=3) * 100;
            let seq = match rng.random_range(0..10) {
                0 => next[f].saturating_sub(rng.random_range(1..=500)),
                1 => next[f] + rng.random_range(1..=500),
                2 => next[f].saturating_sub(len),
                _ => next[f],
            };
            next[f] = next[f].max(seq + len);
            ts += rng.random_range(0.0..2e-5);
            PacketRecord { flow: ids[f], seq, payload_len: len, ts }
        })
        .collect()
}

/// Per flow: packet count and Def1/Def2/Def3 events, recomputed from the
/// full per-flow history of each packet.
pub fn brute_force_counts(packets: &[PacketRecord]) -> BTreeMap<FlowId, (u64, [u64; 3])> {
    let mut by_flow: BTreeMap<FlowId, Vec<&PacketRecord>> = BTreeMap::new();
    for p in packets {
        by_flow.entry(p.flow).or_default().push(p);
    }
    by_flow
        .into_iter()
        .map(|(f, ps)| {
            let mut o = [0u64; 3];
            for i in 1..ps.len() {
                let prev = ps[i - 1];
                if ps[i].seq < prev.seq {
                    o[0] += 1;
                }
                if u64::from(ps[i].seq) > u64::from(prev.seq) + u64::from(prev.payload_len) {
                    o[1] += 1;
                }
                if (0..i).any(|j| ps[j].seq > ps[i].seq) {
                    o[2] += 1;
                }
            }
            (f, (ps.len() as u64, o))
        })
        .collect()
}

fn ooo_pairwise(def: u8, last_seq: u32, last_len: u32, seq: u32) -> bool {
    match def {
        1 => seq < last_seq,
        2 => u64::from(seq) > u64::from(last_seq) + u64::from(last_len),
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy)]
struct RefRecord {
    flow: FlowId,
    last_seq: u32,
    last_len: u32,
    last_ts: f64,
    n: u64,
    o: u64,
}

/// The array algorithm written as plainly as possible: a map from bucket
/// index to record.
pub struct RefSampler {
    pub bucket_of: Box<dyn Fn(Prefix) -> usize>,
    pub buckets: usize,
    pub t: f64,
    pub c: u64,
    pub r: u64,
    pub def: u8,
    pub report_all: bool,
    slots: HashMap<usize, RefRecord>,
}

impl RefSampler {
    pub fn new(bucket_of: Box<dyn Fn(Prefix) -> usize>, buckets: usize, t: f64, c: u64, r: u64, def: u8, report_all: bool) -> Self {
        Self { bucket_of, buckets, t, c, r, def, report_all, slots: HashMap::new() }
    }

    fn fresh(p: &PacketRecord) -> RefRecord {
        RefRecord { flow: p.flow, last_seq: p.seq, last_len: p.payload_len, last_ts: p.ts, n: 0, o: 0 }
    }

    pub fn step(&mut self, p: &PacketRecord) -> Option<Report> {
        let b = (self.bucket_of)(p.flow.prefix());
        let Some(rec) = self.slots.get(&b).copied() else {
            self.slots.insert(b, Self::fresh(p));
            return None;
        };
        if rec.flow == p.flow {
            let mut rec = rec;
            if ooo_pairwise(self.def, rec.last_seq, rec.last_len, p.seq) {
                rec.o += 1;
            }
            rec.n += 1;
            rec.last_seq = p.seq;
            rec.last_len = p.payload_len;
            rec.last_ts = p.ts;
            self.slots.insert(b, rec);
            return None;
        }
        let evict = p.ts - rec.last_ts > self.t || rec.n > self.c || rec.o > self.r;
        if !evict {
            return None;
        }
        self.slots.insert(b, Self::fresh(p));
        let report = if self.report_all { rec.n >= 1 } else { rec.o > self.r };
        report.then(|| Report { prefix: rec.flow.prefix(), n: rec.n, o: rec.o, source: ReportSource::ArrayEviction })
    }

    pub fn flush(&mut self) -> Vec<Report> {
        let mut idx: Vec<usize> = self.slots.keys().copied().collect();
        idx.sort_unstable();
        idx.into_iter()
            .filter_map(|b| {
                let rec = self.slots.remove(&b).unwrap();
                let report = if self.report_all { rec.n >= 1 } else { rec.o > self.r };
                report.then(|| Report { prefix: rec.flow.prefix(), n: rec.n, o: rec.o, source: ReportSource::ArrayFlush })
            })
            .collect()
    }
}

/// Admission decisions read from a fixed tape, one per consultation.
#[derive(Debug, Clone)]
pub struct TapeAdmission {
    pub tape: VecDeque<bool>,
    pub consulted: Vec<u64>,
}

impl TapeAdmission {
    pub fn new(tape: &[bool]) -> Self {
        Self { tape: tape.iter().copied().collect(), consulted: Vec::new() }
    }
}

impl Admission for TapeAdmission {
    fn admit(&mut self, min_count: u64) -> bool {
        self.consulted.push(min_count);
        self.tape.pop_front().expect("tape exhausted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefEntry {
    pub flow: FlowId,
    pub count: u64,
    pub last_seq: u32,
    pub last_len: u32,
    pub n: u64,
    pub o: u64,
}

/// Heavy-hitter table as a list of stages, each a map from bucket to entry.
/// Admission is consulted for every non-resident packet.
pub struct RefPrecision {
    pub stages: Vec<Box<dyn Fn(Prefix) -> usize>>,
    pub table: Vec<HashMap<usize, RefEntry>>,
    pub def: u8,
    pub min_n: u64,
    pub frac: f64,
    pub tape: VecDeque<bool>,
}

impl RefPrecision {
    pub fn step(&mut self, p: &PacketRecord) -> (bool, Option<Report>) {
        let pre = p.flow.prefix();
        for s in 0..self.stages.len() {
            let b = (self.stages[s])(pre);
            if let Some(e) = self.table[s].get_mut(&b) {
                if e.flow == p.flow {
                    if ooo_pairwise(self.def, e.last_seq, e.last_len, p.seq) {
                        e.o += 1;
                    }
                    e.n += 1;
                    e.count += 1;
                    e.last_seq = p.seq;
                    e.last_len = p.payload_len;
                    return (true, None);
                }
            }
        }
        let counts: Vec<u64> = (0..self.stages.len())
            .map(|s| self.table[s].get(&(self.stages[s])(pre)).map_or(0, |e| e.count))
            .collect();
        let min = *counts.iter().min().unwrap();
        let s = counts.iter().position(|&c| c == min).unwrap();
        if !self.tape.pop_front().expect("tape exhausted") {
            return (false, None);
        }
        let b = (self.stages[s])(pre);
        let old = self.table[s].insert(
            b,
            RefEntry { flow: p.flow, count: min + 1, last_seq: p.seq, last_len: p.payload_len, n: 0, o: 0 },
        );
        let report = old
            .filter(|e| e.n >= self.min_n && e.o as f64 > self.frac * e.n as f64)
            .map(|e| Report { prefix: e.flow.prefix(), n: e.n, o: e.o, source: ReportSource::HhEviction });
        (true, report)
    }
}
