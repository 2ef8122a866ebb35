//! Detecting TCP packet reordering per /24 destination prefix under tight
//! memory budgets.
//!
//! The crate holds the data-plane detectors ([`FlowSampler`],
//! [`HeavyHitterTable`], [`HybridDetector`]), the control-plane
//! [`Aggregator`], an exact offline [`oracle`], a synthetic trace generator
//! and the experiment driver used by the `reorder` CLI.

pub mod access;
pub mod control;
pub mod error;
pub mod experiment;
pub mod heavy_hitter;
pub mod hybrid;
pub mod lemma;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod report;
pub mod sampler;
pub mod synth;
pub mod trace;

pub use access::{AccessMeter, AccessStats};
pub use control::{Aggregator, AggregatorParams, OutputMode, PrefixTally};
pub use error::{Error, Result};
pub use experiment::{Algorithm, DetectorConfig, EvalResult, ExperimentSpec, Workload};
pub use heavy_hitter::{Admission, AlwaysAdmit, HeavyHitterTable, HhParams, RandomAdmission};
pub use hybrid::{HybridDetector, HybridFilter, HybridParams};
pub use model::{is_out_of_order, prefix_of, FlowId, PacketRecord, Prefix, ReorderDef, SeqState};
pub use oracle::{compute_stats, ground_truth, GroundTruth, OracleStats, Thresholds};
pub use report::{Detector, Report, ReportSource};
pub use sampler::{FlowSampler, SamplerParams};
pub use synth::{generate_synthetic, SynthConfig};
pub use trace::{parse_trace, read_trace_file, write_trace, Trace};
