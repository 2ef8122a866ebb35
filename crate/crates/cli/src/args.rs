use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use reorder_core::control::AggregatorParams;
use reorder_core::{Algorithm, DetectorConfig, HybridFilter, OutputMode, ReorderDef, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "reorder",
    version,
    about = "Detect heavily reordered /24 prefixes with small data-plane memory",
    args_override_self = true
)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any flag of the
    /// subcommand; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic trace and its injected-displacement sidecar.
    Generate {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Characterize a trace: per-prefix counts, ground truth, correlation,
    /// inter-arrival histograms and the flow-size breakdown.
    Analyze {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        /// Reordering definition for correlation, histograms and breakdown.
        #[arg(long, default_value = "1", value_parser = parse_def)]
        def: ReorderDef,
        #[arg(long, default_value_t = 100)]
        pcc_repetitions: usize,
        #[arg(long, default_value_t = 0.005)]
        pcc_fraction: f64,
        #[arg(long, default_value_t = 1)]
        pcc_seed: u64,
        /// Largest flow-size bin edge, as a power of two.
        #[arg(long, default_value_t = 16)]
        size_bins: u32,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run one detector configuration for each seed and keep its reports.
    Run {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, default_value_t = 1024)]
        buckets: usize,
        #[arg(long = "hh-fraction", default_value_t = 0.5)]
        hh_fraction: f64,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Sweep bucket budgets (and optionally one more parameter) over seeds.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "32,64,128,256,512,1024,2048,4096")]
        buckets: Vec<usize>,
        #[arg(long = "hh-fraction", value_delimiter = ',', action = ArgAction::Set, default_value = "0.5")]
        hh_fraction: Vec<f64>,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Also sweep one parameter: `NAME=v1,v2,...` with NAME one of
        /// T, C, R, r-hh, d, c, alpha, eps.
        #[arg(long, value_name = "NAME=LIST")]
        vary: Option<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Pick the heavy-hitter share of the hybrid per bucket budget.
    GridHybrid {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "32,64,128,256,512,1024,2048,4096")]
        buckets: Vec<usize>,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Monte Carlo check of the per-prefix check-count bound.
    ValidateLemma {
        /// JSON model; without it the built-in presets are checked.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Where packets come from: a trace file, or a synthetic trace built from
/// the generator flags.
#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Keep only packets with `src_port < dst_port`.
    #[arg(long)]
    pub server_to_client: bool,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_prefixes: Option<u32>,
    #[arg(long)]
    pub flows_per_prefix_zipf: Option<f64>,
    #[arg(long)]
    pub max_flows_per_prefix: Option<u32>,
    /// Pareto tail index of flow sizes.
    #[arg(long)]
    pub flow_size_tail: Option<f64>,
    #[arg(long)]
    pub mean_flow_size: Option<f64>,
    #[arg(long)]
    pub max_flow_size: Option<u32>,
    #[arg(long)]
    pub bad_prefix_fraction: Option<f64>,
    #[arg(long)]
    pub bad_reorder_prob: Option<f64>,
    #[arg(long)]
    pub good_reorder_prob: Option<f64>,
    #[arg(long)]
    pub hot_flow_fraction: Option<f64>,
    #[arg(long)]
    pub displacement_max: Option<u32>,
    /// Mean same-flow packet gap in seconds.
    #[arg(long)]
    pub mean_gap: Option<f64>,
    /// Window flow start times are spread over, in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub synth_seed: Option<u64>,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_prefixes: self.n_prefixes.unwrap_or(d.n_prefixes),
            flows_per_prefix_zipf_exponent: self.flows_per_prefix_zipf.unwrap_or(d.flows_per_prefix_zipf_exponent),
            max_flows_per_prefix: self.max_flows_per_prefix.unwrap_or(d.max_flows_per_prefix),
            flow_size_zipf_exponent: self.flow_size_tail.unwrap_or(d.flow_size_zipf_exponent),
            mean_flow_size: self.mean_flow_size.unwrap_or(d.mean_flow_size),
            max_flow_size: self.max_flow_size.unwrap_or(d.max_flow_size),
            bad_prefix_fraction: self.bad_prefix_fraction.unwrap_or(d.bad_prefix_fraction),
            bad_reorder_prob: self.bad_reorder_prob.unwrap_or(d.bad_reorder_prob),
            good_reorder_prob: self.good_reorder_prob.unwrap_or(d.good_reorder_prob),
            hot_flow_fraction: self.hot_flow_fraction.unwrap_or(d.hot_flow_fraction),
            displacement_max: self.displacement_max.unwrap_or(d.displacement_max),
            mean_gap_seconds: self.mean_gap.unwrap_or(d.mean_gap_seconds),
            duration_seconds: self.duration.unwrap_or(d.duration_seconds),
            seed: self.synth_seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    #[arg(long, default_value = "array", value_parser = parse_algo)]
    pub algo: Algorithm,
    /// Pairwise reordering definition used by the detectors (1 or 2).
    #[arg(long, default_value = "1", value_parser = parse_pairwise_def)]
    pub def: ReorderDef,
    /// Staleness threshold in seconds.
    #[arg(long = "T", default_value_t = 2f64.powi(-15))]
    pub staleness: f64,
    /// Packets a flow may hold a bucket for before yielding it.
    #[arg(long = "C", default_value_t = 16)]
    pub max_packets: u64,
    /// Out-of-order packets that make a record reportable.
    #[arg(long = "R", default_value_t = 1)]
    pub report_threshold: u64,
    /// Report every evicted record with at least one packet.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub report_all: bool,
    /// Out-of-order fraction above which the heavy-hitter table reports.
    #[arg(long = "r-hh", default_value_t = 0.01)]
    pub r_hh: f64,
    /// Heavy-hitter stages.
    #[arg(long = "d", default_value_t = 2)]
    pub stages: usize,
    #[arg(long, default_value_t = 16)]
    pub hh_min_packets: u64,
    /// Hybrid array filter: `flow` or `prefix` residency.
    #[arg(long, default_value = "flow", value_parser = parse_filter)]
    pub filter: HybridFilter,
}

impl DetectorArgs {
    pub fn config(&self) -> DetectorConfig {
        DetectorConfig {
            algorithm: self.algo,
            def: self.def,
            staleness: self.staleness,
            max_packets: self.max_packets,
            report_threshold: self.report_threshold,
            report_all: self.report_all,
            hh_report_fraction: self.r_hh,
            hh_stages: self.stages,
            hh_min_report_packets: self.hh_min_packets,
            filter: self.filter,
        }
    }
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long, default_value_t = 16)]
    pub alpha: u64,
    #[arg(long, default_value_t = 128)]
    pub beta: u64,
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct ControlArgs {
    #[arg(long, default_value = "count", value_parser = parse_mode)]
    pub mode: OutputMode,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

impl ControlArgs {
    pub fn params(&self, th: &ThresholdArgs) -> AggregatorParams {
        AggregatorParams {
            alpha: th.alpha,
            eps: th.eps,
            c: self.c,
            mode: self.mode,
        }
    }
}

fn parse_algo(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: reorder_core::Error| e.to_string())
}

fn parse_def(s: &str) -> Result<ReorderDef, String> {
    s.parse().map_err(|e: reorder_core::Error| e.to_string())
}

fn parse_pairwise_def(s: &str) -> Result<ReorderDef, String> {
    let def = parse_def(s)?;
    if def.is_pairwise() {
        Ok(def)
    } else {
        Err("detectors support definitions 1 and 2".into())
    }
}

fn parse_mode(s: &str) -> Result<OutputMode, String> {
    s.parse().map_err(|e: reorder_core::Error| e.to_string())
}

fn parse_filter(s: &str) -> Result<HybridFilter, String> {
    match s {
        "flow" => Ok(HybridFilter::Flow),
        "prefix" => Ok(HybridFilter::Prefix),
        _ => Err(format!("unknown filter {s:?}; expected flow or prefix")),
    }
}
