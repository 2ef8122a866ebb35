//! Exhaustive per-flow reference tracker.
//!
//! Keeps one sequence state per flow for the whole trace, so its memory
//! grows with the number of flows. It provides the ground truth detectors
//! are scored against and the traffic characterization analyses.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{is_out_of_order, FlowId, PacketRecord, Prefix, ReorderDef, SeqState};

/// Exact counts for one flow. `o_f` is indexed by [`ReorderDef::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlowStats {
    pub flow: FlowId,
    pub n_f: u64,
    pub o_f: [u64; 3],
}

impl FlowStats {
    pub fn o(&self, def: ReorderDef) -> u64 {
        self.o_f[def.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrefixStats {
    pub prefix: Prefix,
    pub n_g: u64,
    pub o_g: [u64; 3],
    pub flow_count: u64,
}

impl PrefixStats {
    pub fn o(&self, def: ReorderDef) -> u64 {
        self.o_g[def.index()]
    }

    /// `O_g > eps * N_g`.
    pub fn is_reorder_heavy(&self, def: ReorderDef, eps: f64) -> bool {
        self.o(def) as f64 > eps * self.n_g as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleStats {
    /// Sorted by flow id.
    pub flows: Vec<FlowStats>,
    pub prefixes: BTreeMap<Prefix, PrefixStats>,
}

impl OracleStats {
    pub fn packet_count(&self) -> u64 {
        self.prefixes.values().map(|p| p.n_g).sum()
    }

    pub fn flow(&self, flow: &FlowId) -> Option<&FlowStats> {
        self.flows
            .binary_search_by(|f| f.flow.cmp(flow))
            .ok()
            .map(|i| &self.flows[i])
    }
}

/// One pass over the trace, tracking all three definitions at once.
pub fn compute_stats(packets: &[PacketRecord]) -> OracleStats {
    let mut table: HashMap<FlowId, (SeqState, FlowStats)> = HashMap::new();
    for pkt in packets {
        match table.get_mut(&pkt.flow) {
            None => {
                let stats = FlowStats {
                    flow: pkt.flow,
                    n_f: 1,
                    o_f: [0; 3],
                };
                table.insert(pkt.flow, (SeqState::with_max(pkt), stats));
            }
            Some((state, stats)) => {
                for def in ReorderDef::ALL {
                    if is_out_of_order(state, pkt, def).expect("oracle tracks the running maximum") {
                        stats.o_f[def.index()] += 1;
                    }
                }
                stats.n_f += 1;
                state.observe(pkt);
            }
        }
    }

    let mut flows: Vec<FlowStats> = table.into_values().map(|(_, s)| s).collect();
    flows.sort_unstable_by_key(|f| f.flow);
    let mut prefixes: BTreeMap<Prefix, PrefixStats> = BTreeMap::new();
    for f in &flows {
        let prefix = f.flow.prefix();
        let p = prefixes.entry(prefix).or_insert(PrefixStats {
            prefix,
            n_g: 0,
            o_g: [0; 3],
            flow_count: 0,
        });
        p.n_g += f.n_f;
        p.flow_count += 1;
        for i in 0..3 {
            p.o_g[i] += f.o_f[i];
        }
    }
    OracleStats { flows, prefixes }
}

/// Thresholds of the detection goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    pub eps: f64,
    pub alpha: u64,
    pub beta: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eps: 0.01,
            alpha: 16,
            beta: 128,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidConfig(format!("eps must be in (0, 1), got {}", self.eps)));
        }
        if self.alpha >= self.beta {
            return Err(Error::InvalidConfig(format!(
                "alpha ({}) must be below beta ({})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GroundTruth {
    /// Reorder-heavy prefixes with at least `beta` packets.
    pub heavy_set: BTreeSet<Prefix>,
    /// Reorder-heavy prefixes with more than `alpha` packets.
    pub above_alpha_set: BTreeSet<Prefix>,
    /// Prefixes with at most `alpha` packets, which should never be output.
    pub small_exempt_set: BTreeSet<Prefix>,
}

pub fn ground_truth(stats: &OracleStats, th: Thresholds, def: ReorderDef) -> Result<GroundTruth> {
    th.validate()?;
    let mut gt = GroundTruth::default();
    for (prefix, p) in &stats.prefixes {
        if p.n_g <= th.alpha {
            gt.small_exempt_set.insert(*prefix);
            continue;
        }
        if p.is_reorder_heavy(def, th.eps) {
            gt.above_alpha_set.insert(*prefix);
            if p.n_g >= th.beta {
                gt.heavy_set.insert(*prefix);
            }
        }
    }
    Ok(gt)
}

/// Pearson correlation coefficient of two equally long samples.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("flow fraction"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("rest-of-prefix fraction"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Flows whose prefix has at least two flows, with their (x, y) pair:
/// the flow's own out-of-order fraction and that of the rest of its prefix.
pub fn correlation_population(stats: &OracleStats, def: ReorderDef) -> Vec<(f64, f64)> {
    stats
        .flows
        .iter()
        .filter_map(|f| {
            let p = &stats.prefixes[&f.flow.prefix()];
            if p.flow_count < 2 {
                return None;
            }
            let x = f.o(def) as f64 / f.n_f as f64;
            let y = (p.o(def) - f.o(def)) as f64 / (p.n_g - f.n_f) as f64;
            Some((x, y))
        })
        .collect()
}

fn sampled_pearson(population: &[(f64, f64)], n_samples: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n_samples)
        .map(|_| population[rng.random_range(0..population.len())])
        .unzip();
    pearson(&xs, &ys)
}

/// Draws `n_samples` eligible flows i.i.d. uniformly and correlates each
/// flow's out-of-order fraction with that of the rest of its prefix.
pub fn pearson_correlation(stats: &OracleStats, n_samples: usize, def: ReorderDef, seed: u64) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("need at least two samples".into()));
    }
    let population = correlation_population(stats, def);
    if population.is_empty() {
        return Err(Error::UndefinedMetric("no prefix has two or more flows"));
    }
    sampled_pearson(&population, n_samples, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PccParams {
    pub repetitions: usize,
    /// Samples per repetition as a fraction of the eligible flows.
    pub sample_fraction: f64,
    pub def: ReorderDef,
    pub seed: u64,
}

impl Default for PccParams {
    fn default() -> Self {
        Self {
            repetitions: 100,
            sample_fraction: 0.005,
            def: ReorderDef::Decrease,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PccSummary {
    pub def: ReorderDef,
    pub eligible_flows: usize,
    pub samples_per_repetition: usize,
    /// Mean over the repetitions whose coefficient was defined.
    pub mean: f64,
    pub values: Vec<f64>,
    pub undefined: usize,
}

/// Repeats [`pearson_correlation`] and averages the coefficients.
pub fn pearson_repeated(stats: &OracleStats, params: PccParams) -> Result<PccSummary> {
    let population = correlation_population(stats, params.def);
    if population.is_empty() {
        return Err(Error::UndefinedMetric("no prefix has two or more flows"));
    }
    let n = ((population.len() as f64 * params.sample_fraction).round() as usize).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut values = Vec::with_capacity(params.repetitions);
    let mut undefined = 0;
    for _ in 0..params.repetitions {
        match sampled_pearson(&population, n, &mut rng) {
            Ok(r) => values.push(r),
            Err(Error::UndefinedCorrelation(_)) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(Error::UndefinedCorrelation("every repetition"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(PccSummary {
        def: params.def,
        eligible_flows: population.len(),
        samples_per_repetition: n,
        mean,
        values,
        undefined,
    })
}

/// Counts of positive values by `floor(log2(v))`, with zeros kept apart.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Log2Histogram {
    pub bins: BTreeMap<i32, u64>,
    pub zeros: u64,
    pub count: u64,
    pub sum: f64,
}

impl Log2Histogram {
    pub fn add(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        if v > 0.0 {
            *self.bins.entry(v.log2().floor() as i32).or_default() += 1;
        } else {
            self.zeros += 1;
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Same-flow inter-arrival times of in-order packets (under the requested
/// definition) and of packets that are out of order by decrease or by gap.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InterarrivalHistograms {
    pub def: Option<ReorderDef>,
    pub in_order: Log2Histogram,
    pub decrease: Log2Histogram,
    pub gap: Log2Histogram,
}

pub fn interarrival_histogram(packets: &[PacketRecord], def: ReorderDef) -> InterarrivalHistograms {
    let mut last: HashMap<FlowId, (SeqState, f64)> = HashMap::new();
    let mut h = InterarrivalHistograms {
        def: Some(def),
        ..Default::default()
    };
    for pkt in packets {
        match last.get_mut(&pkt.flow) {
            None => {
                last.insert(pkt.flow, (SeqState::with_max(pkt), pkt.ts));
            }
            Some((state, prev_ts)) => {
                let dt = pkt.ts - *prev_ts;
                let ooo = |d| is_out_of_order(state, pkt, d).expect("running maximum is tracked");
                if !ooo(def) {
                    h.in_order.add(dt);
                }
                if ooo(ReorderDef::Decrease) {
                    h.decrease.add(dt);
                }
                if ooo(ReorderDef::Gap) {
                    h.gap.add(dt);
                }
                state.observe(pkt);
                *prev_ts = pkt.ts;
            }
        }
    }
    h
}

/// Power-of-two flow size bin edges `1, 2, 4, ..., 2^max_exp`.
pub fn log2_size_edges(max_exp: u32) -> Vec<u64> {
    (0..=max_exp).map(|e| 1u64 << e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixBreakdown {
    pub prefix: Prefix,
    pub n_g: u64,
    pub o_g: u64,
    /// Flows per size bin.
    pub flow_counts: Vec<u64>,
    /// Share of the prefix's out-of-order packets carried by each size bin;
    /// `None` when the prefix has no out-of-order packets.
    pub reorder_fraction: Option<Vec<f64>>,
}

fn size_bin(edges: &[u64], n: u64) -> usize {
    edges.partition_point(|&e| e <= n).saturating_sub(1)
}

/// Per prefix: how its flows spread over size bins and which bins carry its
/// reordering. `edges` must be ascending; bin `i` covers
/// `[edges[i], edges[i+1])` and the last bin is open-ended.
pub fn flow_size_reorder_breakdown(stats: &OracleStats, def: ReorderDef, edges: &[u64]) -> Vec<PrefixBreakdown> {
    assert!(!edges.is_empty() && edges.windows(2).all(|w| w[0] < w[1]));
    let mut acc: BTreeMap<Prefix, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for f in &stats.flows {
        let (counts, ooo) = acc
            .entry(f.flow.prefix())
            .or_insert_with(|| (vec![0; edges.len()], vec![0; edges.len()]));
        let bin = size_bin(edges, f.n_f);
        counts[bin] += 1;
        ooo[bin] += f.o(def);
    }
    acc.into_iter()
        .map(|(prefix, (flow_counts, ooo))| {
            let p = &stats.prefixes[&prefix];
            let o_g = p.o(def);
            let reorder_fraction = (o_g > 0).then(|| ooo.iter().map(|&o| o as f64 / o_g as f64).collect());
            PrefixBreakdown {
                prefix,
                n_g: p.n_g,
                o_g,
                flow_counts,
                reorder_fraction,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow(host: u8, port: u16) -> FlowId {
        FlowId::new([10, 0, 0, host].into(), [10, 9, 9, 9].into(), 443, port)
    }

    fn pkts(f: FlowId, seqs: &[u32], len: u32, gap: f64) -> Vec<PacketRecord> {
        seqs.iter()
            .enumerate()
            .map(|(i, &seq)| PacketRecord {
                flow: f,
                seq,
                payload_len: len,
                ts: i as f64 * gap,
            })
            .collect()
    }

    #[test]
    fn in_order_flow_has_no_events() {
        let s = compute_stats(&pkts(flow(1, 5000), &[1000, 1100, 1200], 100, 0.001));
        assert_eq!(s.flows[0].n_f, 3);
        assert_eq!(s.flows[0].o_f, [0, 0, 0]);
    }

    #[test]
    fn single_swap_counts_once_per_definition() {
        let s = compute_stats(&pkts(flow(1, 5000), &[1000, 1200, 1100], 100, 0.001));
        assert_eq!(s.flows[0].o_f, [1, 1, 1]);
    }

    #[test]
    fn prefix_totals_sum_flows() {
        let mut trace = pkts(flow(1, 5000), &[0, 200, 100, 300], 100, 0.001);
        trace.extend(pkts(flow(2, 5001), &[0, 100, 50], 100, 0.001));
        trace.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let s = compute_stats(&trace);
        assert_eq!(s.prefixes.len(), 1);
        let p = s.prefixes.values().next().unwrap();
        assert_eq!(p.n_g, 7);
        assert_eq!(p.flow_count, 2);
        let total: u64 = s.flows.iter().map(|f| f.o(ReorderDef::Decrease)).sum();
        assert_eq!(p.o(ReorderDef::Decrease), total);
        assert_eq!(s.packet_count(), 7);
    }

    fn stats_with(n_g: u64, o_g: u64) -> OracleStats {
        let prefix = Prefix::from_addr(0x0A00_0000);
        let mut prefixes = BTreeMap::new();
        prefixes.insert(
            prefix,
            PrefixStats {
                prefix,
                n_g,
                o_g: [o_g; 3],
                flow_count: 1,
            },
        );
        OracleStats {
            flows: Vec::new(),
            prefixes,
        }
    }

    #[test]
    fn ground_truth_threshold_arithmetic() {
        let th = Thresholds {
            eps: 0.01,
            alpha: 16,
            beta: 128,
        };
        let gt = |n, o| ground_truth(&stats_with(n, o), th, ReorderDef::Decrease).unwrap();
        assert_eq!(gt(128, 2).heavy_set.len(), 1);
        assert!(gt(127, 100).heavy_set.is_empty());
        assert_eq!(gt(127, 100).above_alpha_set.len(), 1);
        assert!(gt(128, 1).heavy_set.is_empty());
        assert_eq!(gt(16, 10).small_exempt_set.len(), 1);
        assert!(gt(16, 10).above_alpha_set.is_empty());
    }

    #[test]
    fn ground_truth_rejects_bad_thresholds() {
        let s = stats_with(10, 1);
        let bad = [
            Thresholds { eps: 0.0, ..Default::default() },
            Thresholds { eps: 1.0, ..Default::default() },
            Thresholds { alpha: 128, beta: 128, ..Default::default() },
        ];
        for th in bad {
            assert!(ground_truth(&s, th, ReorderDef::Decrease).is_err());
        }
    }

    #[test]
    fn pearson_perfect_and_degenerate() {
        let xs = [0.1, 0.2, 0.4, 0.9];
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[0.3; 4], &xs), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&xs, &[0.3; 4]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn pearson_correlation_on_identical_fractions_is_one() {
        // Prefix A: two flows each 1 of 10 out of order; prefix B: two flows
        // each 0 of 10. Every flow's fraction equals its sibling's.
        let mut trace = Vec::new();
        let mk = |host: u8, third: u8, port, ooo: bool| {
            let f = FlowId::new([10, 0, third, host].into(), [1, 1, 1, 1].into(), 443, port);
            let mut seqs: Vec<u32> = (0..10).map(|i| i * 100).collect();
            if ooo {
                seqs.swap(4, 5);
            }
            pkts(f, &seqs, 100, 0.01)
        };
        trace.extend(mk(1, 0, 2000, true));
        trace.extend(mk(2, 0, 2001, true));
        trace.extend(mk(1, 1, 2002, false));
        trace.extend(mk(2, 1, 2003, false));
        trace.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let s = compute_stats(&trace);
        let r = pearson_correlation(&s, 200, ReorderDef::Decrease, 7).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn pearson_correlation_identical_x_is_undefined() {
        let mut trace = Vec::new();
        for (i, port) in [(1u8, 3000u16), (2, 3001)] {
            trace.extend(pkts(flow(i, port), &[0, 100, 200], 100, 0.01));
        }
        trace.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let s = compute_stats(&trace);
        assert!(matches!(
            pearson_correlation(&s, 10, ReorderDef::Decrease, 1),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn interarrival_uniform_gaps() {
        let seqs: Vec<u32> = (0..20).map(|i| i * 100).collect();
        let h = interarrival_histogram(&pkts(flow(1, 4000), &seqs, 100, 0.001), ReorderDef::Decrease);
        assert_eq!(h.in_order.count, 19);
        assert_eq!(h.in_order.bins.len(), 1);
        assert_eq!(h.in_order.bins[&(0.001f64.log2().floor() as i32)], 19);
        assert_eq!(h.decrease.count + h.gap.count, 0);
    }

    #[test]
    fn interarrival_empty_trace() {
        let h = interarrival_histogram(&[], ReorderDef::Gap);
        assert_eq!(h.in_order, Log2Histogram::default());
        assert_eq!(h.decrease, Log2Histogram::default());
        assert_eq!(h.gap, Log2Histogram::default());
    }

    #[test]
    fn breakdown_single_flow_and_clean_prefix() {
        let seqs = [0, 200, 100, 300, 500, 400, 600, 700, 800, 900];
        let mut trace = pkts(flow(1, 4000), &seqs, 100, 0.001);
        let clean = FlowId::new([10, 0, 5, 1].into(), [1, 1, 1, 1].into(), 443, 4001);
        trace.extend(pkts(clean, &[0, 100, 200], 100, 0.001));
        trace.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let s = compute_stats(&trace);
        let edges = log2_size_edges(10);
        let b = flow_size_reorder_breakdown(&s, ReorderDef::Decrease, &edges);
        assert_eq!(b.len(), 2);
        let noisy = &b[0];
        assert_eq!(noisy.o_g, 2);
        assert_eq!(noisy.flow_counts[3], 1); // 10 packets fall in [8, 16)
        let frac = noisy.reorder_fraction.as_ref().unwrap();
        assert_eq!(frac[3], 1.0);
        assert_eq!(frac.iter().sum::<f64>(), 1.0);
        assert!(b[1].reorder_fraction.is_none());
    }

    #[test]
    fn size_bins() {
        let edges = [1, 2, 4, 8];
        assert_eq!(size_bin(&edges, 1), 0);
        assert_eq!(size_bin(&edges, 3), 1);
        assert_eq!(size_bin(&edges, 4), 2);
        assert_eq!(size_bin(&edges, 1000), 3);
        assert_eq!(size_bin(&[2, 4], 1), 0);
    }
}
