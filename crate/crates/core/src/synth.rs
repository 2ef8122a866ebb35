//! Seeded synthetic traces with prefix-correlated reordering.
//!
//! Each prefix is either on a "bad" path or not. Flows get in-order
//! sequence numbers first; then every packet is delayed, with its prefix's
//! displacement probability, by 1..=`displacement_max` positions within its
//! flow. A delayed packet also waits one extra inter-packet gap, so late
//! packets show longer inter-arrival times than in-order ones.
//!
//! Flow arrivals are independent: a flow starts uniformly inside the trace
//! duration and emits packets with exponential gaps.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Pareto, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FlowId, PacketRecord};
use crate::trace::Trace;

const MSS: u32 = 1448;
const SERVER_PORTS: [u16; 4] = [443, 80, 22, 993];
const FIRST_PREFIX: u32 = 0x0B00_0000; // 11.0.0.0
const FIRST_CLIENT: u32 = 0xC0A8_0000; // 192.168.0.0
const CLIENT_PORTS: u32 = 60_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_prefixes: u32,
    /// Exponent of the Zipf law over 1..=`max_flows_per_prefix` flows.
    pub flows_per_prefix_zipf_exponent: f64,
    pub max_flows_per_prefix: u32,
    /// Tail index of the Pareto law flow sizes are drawn from; must exceed 1.
    pub flow_size_zipf_exponent: f64,
    /// Mean of the uncapped flow size law, in packets.
    pub mean_flow_size: f64,
    pub max_flow_size: u32,
    pub bad_prefix_fraction: f64,
    pub bad_reorder_prob: f64,
    pub good_reorder_prob: f64,
    /// Share of flows outside bad prefixes that still reorder at
    /// `bad_reorder_prob`, e.g. because their own path is bad.
    pub hot_flow_fraction: f64,
    pub displacement_max: u32,
    /// Mean gap between consecutive packets of one flow, in seconds.
    pub mean_gap_seconds: f64,
    /// Flow start times are spread uniformly over this window.
    pub duration_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_prefixes: 4096,
            flows_per_prefix_zipf_exponent: 1.2,
            max_flows_per_prefix: 256,
            flow_size_zipf_exponent: 1.3,
            mean_flow_size: 40.0,
            max_flow_size: 100_000,
            bad_prefix_fraction: 0.05,
            bad_reorder_prob: 0.05,
            good_reorder_prob: 0.0002,
            hot_flow_fraction: 0.01,
            displacement_max: 1,
            mean_gap_seconds: 2f64.powi(-17),
            duration_seconds: 0.3,
            seed: 1,
        }
    }
}

impl SynthConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_prefixes == 0 || self.n_prefixes > 1 << 20 {
            return bad("n_prefixes must be in 1..=2^20");
        }
        if !(self.flows_per_prefix_zipf_exponent >= 0.0) || self.max_flows_per_prefix == 0 {
            return bad("flows-per-prefix law needs exponent >= 0 and a positive maximum");
        }
        if !(self.flow_size_zipf_exponent > 1.0) || !(self.mean_flow_size >= 1.0) {
            return bad("flow size law needs tail index > 1 and mean >= 1");
        }
        if self.max_flow_size == 0 || self.max_flow_size > 1_000_000 {
            return bad("max_flow_size must be in 1..=1000000");
        }
        if !(0.0..=1.0).contains(&self.bad_prefix_fraction) || !(0.0..=1.0).contains(&self.hot_flow_fraction) {
            return bad("bad_prefix_fraction and hot_flow_fraction must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.good_reorder_prob)
            || !(0.0..=1.0).contains(&self.bad_reorder_prob)
            || self.bad_reorder_prob < self.good_reorder_prob
        {
            return bad("need 0 <= good_reorder_prob <= bad_reorder_prob <= 1");
        }
        if self.displacement_max == 0 {
            return bad("displacement_max must be at least 1");
        }
        if !(self.mean_gap_seconds > 0.0) || !(self.duration_seconds > 0.0) {
            return bad("mean_gap_seconds and duration_seconds must be positive");
        }
        Ok(())
    }
}

/// Generated packets plus the number of displacements injected per flow.
#[derive(Debug, Clone)]
pub struct SyntheticTrace {
    pub trace: Trace,
    pub injected: Vec<(FlowId, u64)>,
    pub bad_prefixes: Vec<crate::model::Prefix>,
}

struct Pending {
    ts: f64,
    flow_idx: u32,
    pos: u32,
    pkt: PacketRecord,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let flows_per_prefix = Zipf::new(cfg.max_flows_per_prefix as f64, cfg.flows_per_prefix_zipf_exponent)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let a = cfg.flow_size_zipf_exponent;
    let size_law = Pareto::new(cfg.mean_flow_size * (a - 1.0) / a, a)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let gap = Exp::new(1.0 / cfg.mean_gap_seconds).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut pending = Vec::new();
    let mut injected = Vec::new();
    let mut bad_prefixes = Vec::new();
    let mut flow_idx: u32 = 0;
    for g in 0..cfg.n_prefixes {
        let prefix_bits = FIRST_PREFIX + (g << 8);
        let is_bad = rng.random_bool(cfg.bad_prefix_fraction);
        let p = if is_bad {
            bad_prefixes.push(crate::model::Prefix::from_addr(prefix_bits));
            cfg.bad_reorder_prob
        } else {
            cfg.good_reorder_prob
        };
        let n_flows = flows_per_prefix.sample(&mut rng) as u32;
        for _ in 0..n_flows {
            let flow = FlowId {
                src_ip: prefix_bits | rng.random_range(1..=254),
                dst_ip: FIRST_CLIENT + flow_idx / CLIENT_PORTS,
                src_port: SERVER_PORTS[rng.random_range(0..SERVER_PORTS.len())],
                dst_port: (1024 + flow_idx % CLIENT_PORTS) as u16,
            };
            let size = (size_law.sample(&mut rng).ceil() as u32).clamp(1, cfg.max_flow_size);
            let hot = !is_bad && cfg.hot_flow_fraction > 0.0 && rng.random_bool(cfg.hot_flow_fraction);
            let p = if hot { cfg.bad_reorder_prob } else { p };
            let displaced = emit_flow(&mut rng, cfg, flow, size, p, &gap, flow_idx, &mut pending);
            injected.push((flow, displaced));
            flow_idx += 1;
        }
    }

    pending.sort_by(|x, y| {
        x.ts.total_cmp(&y.ts)
            .then(x.flow_idx.cmp(&y.flow_idx))
            .then(x.pos.cmp(&y.pos))
    });
    let packets = pending.into_iter().map(|p| p.pkt).collect();
    Ok(SyntheticTrace {
        trace: Trace::new(packets),
        injected,
        bad_prefixes,
    })
}

#[allow(clippy::too_many_arguments)]
fn emit_flow(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    flow: FlowId,
    size: u32,
    reorder_prob: f64,
    gap: &Exp<f64>,
    flow_idx: u32,
    out: &mut Vec<Pending>,
) -> u64 {
    let isn: u32 = rng.random_range(0..1 << 30);
    let last_len: u32 = rng.random_range(1..=MSS);

    // Sort keys: an undisplaced packet i sits at 2i; a packet delayed by k
    // lands right after packet i+k, at 2(i+k)+1.
    let mut order: Vec<(u64, u32, bool)> = Vec::with_capacity(size as usize);
    let mut displaced = 0;
    for i in 0..size {
        let mut key = 2 * u64::from(i);
        let mut late = false;
        if reorder_prob > 0.0 && rng.random_bool(reorder_prob) {
            let k = rng.random_range(1..=cfg.displacement_max).min(size - 1 - i);
            if k > 0 {
                key = 2 * u64::from(i + k) + 1;
                late = true;
                displaced += 1;
            }
        }
        order.push((key, i, late));
    }
    order.sort_by_key(|&(key, i, _)| (key, i));

    let mut ts = rng.random_range(0.0..cfg.duration_seconds);
    for (pos, &(_, i, late)) in order.iter().enumerate() {
        if pos > 0 {
            ts += gap.sample(rng);
        }
        if late {
            ts += gap.sample(rng);
        }
        let payload_len = if i + 1 == size { last_len } else { MSS };
        out.push(Pending {
            ts,
            flow_idx,
            pos: pos as u32,
            pkt: PacketRecord {
                flow,
                seq: isn + i * MSS,
                payload_len,
                ts,
            },
        });
    }
    displaced
}

/// Writes the `flow_key,injected_displacements` sidecar.
pub fn write_sidecar<W: Write>(sink: W, injected: &[(FlowId, u64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "flow_key,injected_displacements")?;
    for (flow, count) in injected {
        writeln!(out, "{flow},{count}")?;
    }
    out.flush()?;
    Ok(())
}
