//! Monte Carlo check of the lower bound on how often a prefix gets checked
//! by the flow-sampling array.
//!
//! The simulated process is the idealized one the bound is stated for, not
//! the real sampler: packets are i.i.d. draws from `p_f`, only flows with
//! `p_{f|b} >= p_min` are ever checked, and a check consumes exactly `C + 1`
//! packets of its flow before the bucket frees up.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaFlow {
    /// Prefix label; only equality matters.
    pub prefix: u32,
    /// Global packet probability `p_f`.
    pub p: f64,
    /// Whether the flow's prefix hashes to the bucket under study.
    pub in_bucket: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaModel {
    pub flows: Vec<LemmaFlow>,
    pub target_prefix: u32,
    pub p_min: f64,
    /// Packets per check after the first, `C`.
    pub c: u64,
    pub stream_len: u64,
    pub eps: f64,
    pub delta: f64,
}

/// Closed-form quantities of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaBound {
    /// `sum_{f in b} p_f`.
    pub bucket_mass: f64,
    /// Flows in the bucket with `p_{f|b} >= p_min`.
    pub f_b: u64,
    pub p_g_given_b: f64,
    pub t1: u64,
    /// `(1 - delta) * t1 * p_{g|b}`.
    pub threshold: f64,
    pub failure_bound: f64,
}

impl LemmaModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("lemma model: {m}")));
        if self.flows.iter().any(|f| !(f.p >= 0.0 && f.p <= 1.0)) {
            return bad("flow probabilities must be in [0, 1]");
        }
        let total: f64 = self.flows.iter().map(|f| f.p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad("flow probabilities must sum to 1");
        }
        if !(self.eps > 0.0 && self.eps < 1.0 && self.delta > 0.0 && self.delta < 1.0) {
            return bad("eps and delta must be in (0, 1)");
        }
        if !(self.p_min >= 0.0 && self.p_min <= 1.0) {
            return bad("p_min must be in [0, 1]");
        }
        if self.c == 0 {
            return bad("C must be at least 1");
        }
        if !self
            .flows
            .iter()
            .any(|f| f.in_bucket && f.prefix == self.target_prefix)
        {
            return bad("target prefix has no flow in the bucket");
        }
        if self.eligible().is_empty() {
            return bad("no flow in the bucket reaches p_min");
        }
        Ok(())
    }

    pub fn bucket_mass(&self) -> f64 {
        self.flows.iter().filter(|f| f.in_bucket).map(|f| f.p).sum()
    }

    /// In-bucket flows with `p_{f|b} >= p_min`.
    fn eligible(&self) -> Vec<LemmaFlow> {
        let mass = self.bucket_mass();
        self.flows
            .iter()
            .filter(|f| f.in_bucket && mass > 0.0 && f.p / mass >= self.p_min)
            .copied()
            .collect()
    }

    pub fn bound(&self) -> Result<LemmaBound> {
        self.validate()?;
        let mass = self.bucket_mass();
        let eligible = self.eligible();
        let f_b = eligible.len() as u64;
        let p_g: f64 = eligible
            .iter()
            .filter(|f| f.prefix == self.target_prefix)
            .map(|f| f.p)
            .sum::<f64>()
            / mass;
        let s = self.stream_len as f64;
        let cf = self.c as f64 * f_b as f64;
        let t1 = (s * mass / ((1.0 + self.eps / 2.0) * cf)).floor() as u64;
        let t = t1 as f64;
        let e2 = self.eps * self.eps;
        let failure_bound = (-self.p_min * t * cf * e2 / 24.0).exp()
            + (-e2 * s * mass / 3.0).exp()
            + (-self.delta * self.delta * t * p_g / 2.0).exp();
        Ok(LemmaBound {
            bucket_mass: mass,
            f_b,
            p_g_given_b: p_g,
            t1,
            threshold: (1.0 - self.delta) * t * p_g,
            failure_bound,
        })
    }
}

/// Failures before the `C`-th success of a Bernoulli(`p`) sequence, drawn
/// as a Poisson variate whose rate is Gamma(`C`, (1-p)/p) distributed.
enum CheckWait {
    Immediate,
    Mixture(Gamma<f64>),
}

impl CheckWait {
    fn new(c: u64, p: f64) -> Result<Self> {
        if p >= 1.0 {
            return Ok(CheckWait::Immediate);
        }
        Gamma::new(c as f64, (1.0 - p) / p)
            .map(CheckWait::Mixture)
            .map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        match self {
            CheckWait::Immediate => 0,
            CheckWait::Mixture(gamma) => {
                let rate = gamma.sample(rng);
                if rate > 0.0 {
                    Poisson::new(rate).map_or(0, |d| d.sample(rng) as u64)
                } else {
                    0
                }
            }
        }
    }
}

struct Sim {
    /// Probability that a bucket packet belongs to an eligible flow.
    q: f64,
    cumulative: Vec<f64>,
    waits: Vec<CheckWait>,
    is_target: Vec<bool>,
    idle_wait: Geometric,
    c: u64,
}

impl Sim {
    fn new(m: &LemmaModel) -> Result<Self> {
        let mass = m.bucket_mass();
        let eligible = m.eligible();
        let geo = |p: f64| Geometric::new(p.min(1.0)).map_err(|e| Error::InvalidConfig(e.to_string()));
        let q: f64 = eligible.iter().map(|f| f.p / mass).sum::<f64>().min(1.0);
        let mut acc = 0.0;
        let cumulative = eligible
            .iter()
            .map(|f| {
                acc += f.p;
                acc
            })
            .collect();
        Ok(Self {
            q,
            cumulative,
            waits: eligible
                .iter()
                .map(|f| CheckWait::new(m.c, f.p / mass))
                .collect::<Result<_>>()?,
            is_target: eligible.iter().map(|f| f.prefix == m.target_prefix).collect(),
            idle_wait: geo(q)?,
            c: m.c,
        })
    }

    fn pick(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }

    /// Completed checks of the target prefix over a bucket substream of
    /// `len` packets.
    fn run(&self, len: u64, rng: &mut impl Rng) -> u64 {
        let mut left = len;
        let mut checks = 0;
        loop {
            // Packets up to and including the next one of an eligible flow.
            let start = if self.q >= 1.0 { 1 } else { self.idle_wait.sample(rng) + 1 };
            if start > left {
                return checks;
            }
            left -= start;
            // The next `C` packets of the chosen flow, plus whatever other
            // traffic hits the bucket in between.
            let f = self.pick(rng);
            let span = self.c + self.waits[f].sample(rng);
            if span > left {
                return checks;
            }
            left -= span;
            if self.is_target[f] {
                checks += 1;
            }
        }
    }
}

/// Checks of the target prefix in each of `trials` independent streams.
pub fn simulate_checks(model: &LemmaModel, trials: usize, seed: u64) -> Result<Vec<u64>> {
    model.validate()?;
    let sim = Sim::new(model)?;
    let mass = model.bucket_mass().min(1.0);
    let substream = Binomial::new(model.stream_len, mass).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..trials)
        .map(|_| {
            let len = substream.sample(&mut rng);
            sim.run(len, &mut rng)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaOutcome {
    pub bound: LemmaBound,
    pub trials: usize,
    /// False when the bound is vacuous (`>= 1`) and nothing was simulated.
    pub evaluated: bool,
    pub success_fraction: Option<f64>,
    pub mean_checks: Option<f64>,
    pub passed: Option<bool>,
}

/// Simulates `trials` streams and compares the share of streams meeting the
/// threshold with `1 - failure_bound`.
pub fn validate_lemma(model: &LemmaModel, trials: usize, seed: u64) -> Result<LemmaOutcome> {
    let bound = model.bound()?;
    if bound.failure_bound >= 1.0 || trials == 0 {
        return Ok(LemmaOutcome {
            bound,
            trials,
            evaluated: false,
            success_fraction: None,
            mean_checks: None,
            passed: None,
        });
    }
    let checks = simulate_checks(model, trials, seed)?;
    let ok = checks.iter().filter(|&&k| k as f64 >= bound.threshold).count();
    let frac = ok as f64 / trials as f64;
    Ok(LemmaOutcome {
        bound,
        trials,
        evaluated: true,
        success_fraction: Some(frac),
        mean_checks: Some(checks.iter().sum::<u64>() as f64 / trials as f64),
        passed: Some(frac >= 1.0 - bound.failure_bound),
    })
}

fn flow(prefix: u32, p: f64, in_bucket: bool) -> LemmaFlow {
    LemmaFlow { prefix, p, in_bucket }
}

/// Hand-built configurations whose failure bound is below 0.5.
pub fn presets() -> Vec<(&'static str, LemmaModel)> {
    // Five equal flows share the bucket; the target prefix owns two.
    let mut uniform: Vec<LemmaFlow> = (0..5).map(|i| flow(u32::from(i >= 2), 0.04, true)).collect();
    uniform.push(flow(99, 0.8, false));

    // Zipf-like weights; the two lightest flows fall below p_min.
    let weights = [8.0, 4.0, 3.0, 2.0, 2.0, 1.0, 0.25, 0.25];
    let wsum: f64 = weights.iter().sum();
    let mut skewed: Vec<LemmaFlow> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| flow(if i == 1 || i == 3 || i == 7 { 0 } else { i as u32 + 1 }, 0.3 * w / wsum, true))
        .collect();
    skewed.push(flow(99, 0.7, false));

    // Forty flows in a crowded bucket; the target prefix owns four.
    let mut crowded: Vec<LemmaFlow> = (0..40).map(|i| flow(i / 4, 0.5 / 40.0, true)).collect();
    crowded.push(flow(99, 0.5, false));

    vec![
        (
            "uniform",
            LemmaModel {
                flows: uniform,
                target_prefix: 0,
                p_min: 0.1,
                c: 16,
                stream_len: 200_000,
                eps: 0.5,
                delta: 0.2,
            },
        ),
        (
            "skewed",
            LemmaModel {
                flows: skewed,
                target_prefix: 0,
                p_min: 0.05,
                c: 16,
                stream_len: 200_000,
                eps: 0.5,
                delta: 0.2,
            },
        ),
        (
            "crowded",
            LemmaModel {
                flows: crowded,
                target_prefix: 0,
                p_min: 0.01,
                c: 16,
                stream_len: 1_000_000,
                eps: 0.5,
                delta: 0.3,
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(stream_len: u64, c: u64) -> LemmaModel {
        LemmaModel {
            flows: vec![flow(0, 1.0, true)],
            target_prefix: 0,
            p_min: 0.0,
            c,
            stream_len,
            eps: 0.5,
            delta: 0.5,
        }
    }

    #[test]
    fn single_flow_is_deterministic() {
        for (len, c) in [(1000, 16), (17, 16), (16, 16), (100, 1), (5, 4)] {
            let checks = simulate_checks(&single(len, c), 20, 3).unwrap();
            assert!(checks.iter().all(|&k| k == len / (c + 1)), "len={len} c={c}");
        }
    }

    #[test]
    fn check_wait_has_negative_binomial_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [0.05, 0.5, 0.9] {
            let w = CheckWait::new(16, p).unwrap();
            let xs: Vec<f64> = (0..200_000).map(|_| w.sample(&mut rng) as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            let (m, v) = (16.0 * (1.0 - p) / p, 16.0 * (1.0 - p) / (p * p));
            assert!((mean - m).abs() < 0.02 * m, "p={p}: mean {mean} vs {m}");
            assert!((var - v).abs() < 0.05 * v, "p={p}: var {var} vs {v}");
        }
        assert_eq!(CheckWait::new(16, 1.0).unwrap().sample(&mut rng), 0);
    }

    #[test]
    fn zero_p_min_bound_is_vacuous() {
        let out = validate_lemma(&single(1000, 16), 100, 1).unwrap();
        assert!(out.bound.failure_bound >= 1.0);
        assert!(!out.evaluated);
        assert_eq!(out.passed, None);
    }

    #[test]
    fn t1_matches_formula() {
        let (_, m) = &presets()[0];
        let b = m.bound().unwrap();
        // 200000 * 0.2 / (1.25 * 16 * 5)
        assert_eq!(b.t1, 400);
        assert_eq!(b.f_b, 5);
        assert!((b.p_g_given_b - 0.4).abs() < 1e-12);
    }

    #[test]
    fn presets_are_valid_and_non_vacuous() {
        for (name, m) in presets() {
            let b = m.bound().unwrap();
            assert!(b.failure_bound < 0.5, "{name}: {}", b.failure_bound);
        }
    }

    #[test]
    fn rejects_bad_models() {
        let mut m = single(10, 1);
        m.flows[0].p = 0.9;
        assert!(m.validate().is_err());
        let mut m = single(10, 1);
        m.target_prefix = 4;
        assert!(m.validate().is_err());
        let mut m = single(10, 1);
        m.c = 0;
        assert!(m.validate().is_err());
    }
}
