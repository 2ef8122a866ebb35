//! Experiment driver: streams a workload through a detector, aggregates its
//! reports and scores the output against the oracle's ground truth.
//!
//! Every run is a pure function of `(workload, spec, buckets, x, seed)`, so
//! configurations are evaluated in parallel and collected in input order.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::control::{Aggregator, AggregatorParams, OutputMode};
use crate::error::{Error, Result};
use crate::heavy_hitter::{HeavyHitterTable, HhParams};
use crate::hybrid::{HybridDetector, HybridFilter, HybridParams};
use crate::metrics;
use crate::model::{mix64, PacketRecord, Prefix, ReorderDef};
use crate::oracle::{compute_stats, ground_truth, GroundTruth, OracleStats, Thresholds};
use crate::report::{Detector, Report};
use crate::sampler::{FlowSampler, SamplerParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Array,
    Hh,
    Hybrid,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Array => "array",
            Algorithm::Hh => "hh",
            Algorithm::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "array" => Ok(Algorithm::Array),
            "hh" => Ok(Algorithm::Hh),
            "hybrid" => Ok(Algorithm::Hybrid),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// Every knob of a detector run except the bucket budget and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorConfig {
    pub algorithm: Algorithm,
    pub def: ReorderDef,
    pub staleness: f64,
    pub max_packets: u64,
    pub report_threshold: u64,
    pub report_all: bool,
    pub hh_report_fraction: f64,
    pub hh_stages: usize,
    pub hh_min_report_packets: u64,
    pub filter: HybridFilter,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let s = SamplerParams::default();
        let h = HhParams::default();
        Self {
            algorithm: Algorithm::Array,
            def: s.def,
            staleness: s.staleness,
            max_packets: s.max_packets,
            report_threshold: s.report_threshold,
            report_all: s.report_all,
            hh_report_fraction: h.report_fraction,
            hh_stages: h.stages,
            hh_min_report_packets: h.min_report_packets,
            filter: HybridFilter::Flow,
        }
    }
}

impl DetectorConfig {
    fn sampler(&self, buckets: usize, seed: u64) -> SamplerParams {
        SamplerParams {
            buckets,
            staleness: self.staleness,
            max_packets: self.max_packets,
            report_threshold: self.report_threshold,
            def: self.def,
            report_all: self.report_all,
            hash_seed: seed,
        }
    }

    fn hh(&self, buckets: usize, seed: u64) -> HhParams {
        HhParams {
            stages: self.hh_stages,
            buckets_per_stage: buckets / self.hh_stages.max(1),
            report_fraction: self.hh_report_fraction,
            min_report_packets: self.hh_min_report_packets,
            def: self.def,
            hash_seed: seed,
            rng_seed: mix64(seed ^ 0x5EED),
        }
    }

    /// Builds the detector for one `(B, x, seed)` configuration.
    pub fn build(&self, buckets: usize, hh_fraction: f64, seed: u64) -> Result<Box<dyn Detector + Send>> {
        Ok(match self.algorithm {
            Algorithm::Array => Box::new(FlowSampler::new(self.sampler(buckets, seed))?),
            Algorithm::Hh => Box::new(HeavyHitterTable::new(self.hh(buckets, seed))?),
            Algorithm::Hybrid => Box::new(HybridDetector::new(HybridParams {
                total_buckets: buckets,
                hh_fraction,
                sampler: self.sampler(buckets, seed),
                hh: self.hh(buckets, seed),
                filter: self.filter,
            })?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub detector: DetectorConfig,
    pub aggregator: AggregatorParams,
    pub beta: u64,
    pub buckets: Vec<usize>,
    /// Heavy-hitter shares to evaluate; only the hybrid uses more than one.
    pub hh_fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            aggregator: AggregatorParams::default(),
            beta: 128,
            buckets: vec![1 << 8],
            hh_fractions: vec![0.5],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentSpec {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            eps: self.aggregator.eps,
            alpha: self.aggregator.alpha,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds().validate()?;
        self.aggregator.validate()?;
        if self.buckets.is_empty() || self.seeds.is_empty() || self.hh_fractions.is_empty() {
            return Err(Error::InvalidConfig("bucket, seed and hh-fraction lists must be non-empty".into()));
        }
        Ok(())
    }

    fn fractions(&self) -> Vec<f64> {
        match self.detector.algorithm {
            Algorithm::Hybrid => self.hh_fractions.clone(),
            _ => vec![0.0],
        }
    }
}

/// A trace together with its oracle statistics and ground truth.
#[derive(Debug, Clone)]
pub struct Workload<'a> {
    pub packets: &'a [PacketRecord],
    pub stats: OracleStats,
    pub truth: GroundTruth,
}

impl<'a> Workload<'a> {
    pub fn new(packets: &'a [PacketRecord], thresholds: Thresholds, def: ReorderDef) -> Result<Self> {
        let stats = compute_stats(packets);
        let truth = ground_truth(&stats, thresholds, def)?;
        Ok(Self { packets, stats, truth })
    }
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub algorithm: Algorithm,
    pub def: u8,
    pub buckets: usize,
    pub hh_fraction: f64,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub communication_overhead: f64,
    pub report_count: u64,
    pub output_count: usize,
    pub truth_count: usize,
    pub truth_above_alpha_count: usize,
    pub packets: u64,
    pub max_reads_per_packet: u32,
    pub max_writes_per_packet: u32,
    pub staleness: f64,
    pub max_packets: u64,
    pub report_threshold: u64,
    pub report_all: bool,
    pub hh_report_fraction: f64,
    pub hh_stages: usize,
    pub alpha: u64,
    pub beta: u64,
    pub eps: f64,
    pub c: f64,
    pub mode: OutputMode,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: EvalResult,
    pub reports: Vec<Report>,
    pub output: BTreeSet<Prefix>,
}

pub fn run_one(
    workload: &Workload<'_>,
    spec: &ExperimentSpec,
    buckets: usize,
    hh_fraction: f64,
    seed: u64,
) -> Result<RunOutcome> {
    let mut detector = spec.detector.build(buckets, hh_fraction, seed)?;
    let reports = detector.run(workload.packets);
    let access = detector.access_stats();

    let mut agg = Aggregator::new();
    agg.ingest_all(&reports);
    let output = agg.finalize(&spec.aggregator);
    debug_assert_eq!(agg.report_count(), reports.len() as u64);

    let d = &spec.detector;
    let a = &spec.aggregator;
    let result = EvalResult {
        algorithm: d.algorithm,
        def: d.def.number(),
        buckets,
        hh_fraction,
        seed,
        accuracy: metrics::accuracy(&output, &workload.truth.heavy_set).ok(),
        false_positive_rate: metrics::false_positive_rate(&output, &workload.truth.above_alpha_set).ok(),
        communication_overhead: metrics::communication_overhead(reports.len() as u64, workload.packets.len() as u64)
            .unwrap_or(0.0),
        report_count: reports.len() as u64,
        output_count: output.len(),
        truth_count: workload.truth.heavy_set.len(),
        truth_above_alpha_count: workload.truth.above_alpha_set.len(),
        packets: workload.packets.len() as u64,
        max_reads_per_packet: access.max_reads_per_packet,
        max_writes_per_packet: access.max_writes_per_packet,
        staleness: d.staleness,
        max_packets: d.max_packets,
        report_threshold: d.report_threshold,
        report_all: d.report_all,
        hh_report_fraction: d.hh_report_fraction,
        hh_stages: d.hh_stages,
        alpha: a.alpha,
        beta: spec.beta,
        eps: a.eps,
        c: a.c,
        mode: a.mode,
    };
    Ok(RunOutcome {
        result,
        reports,
        output,
    })
}

/// Evaluates every `(B, x, seed)` combination, in that nesting order.
pub fn run_experiment(workload: &Workload<'_>, spec: &ExperimentSpec) -> Result<Vec<EvalResult>> {
    spec.validate()?;
    let mut configs = Vec::new();
    for &b in &spec.buckets {
        for x in spec.fractions() {
            for &seed in &spec.seeds {
                configs.push((b, x, seed));
            }
        }
    }
    configs
        .into_par_iter()
        .map(|(b, x, seed)| run_one(workload, spec, b, x, seed).map(|o| o.result))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridBest {
    pub buckets: usize,
    pub best_hh_fraction: f64,
    /// Seed-averaged accuracy at the best share.
    pub accuracy: Option<f64>,
}

/// The default grid `0.1, 0.2, ..., 0.9`.
pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn mean_accuracy(rows: &[&EvalResult]) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Runs the hybrid over `grid` for each bucket budget and picks the share
/// with the highest seed-averaged accuracy; ties go to the smaller share.
pub fn grid_search_hybrid(
    workload: &Workload<'_>,
    spec: &ExperimentSpec,
    grid: &[f64],
) -> Result<(Vec<EvalResult>, Vec<GridBest>)> {
    if spec.detector.algorithm != Algorithm::Hybrid {
        return Err(Error::InvalidConfig("grid search needs the hybrid algorithm".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty hh-fraction grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let spec = ExperimentSpec {
        hh_fractions: sorted.clone(),
        ..spec.clone()
    };
    let rows = run_experiment(workload, &spec)?;
    let best = spec
        .buckets
        .iter()
        .map(|&b| {
            let mut best: Option<(f64, Option<f64>)> = None;
            for &x in &sorted {
                let at: Vec<&EvalResult> = rows.iter().filter(|r| r.buckets == b && r.hh_fraction == x).collect();
                let acc = mean_accuracy(&at);
                let better = match best {
                    None => true,
                    Some((_, cur)) => acc.unwrap_or(f64::NEG_INFINITY) > cur.unwrap_or(f64::NEG_INFINITY),
                };
                if better {
                    best = Some((x, acc));
                }
            }
            let (x, acc) = best.expect("grid is non-empty");
            GridBest {
                buckets: b,
                best_hh_fraction: x,
                accuracy: acc,
            }
        })
        .collect();
    Ok((rows, best))
}
