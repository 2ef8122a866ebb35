//! Control-plane aggregation of data-plane reports.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Prefix;
use crate::report::Report;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// Output a prefix once its reports cover at least `alpha` packets.
    #[default]
    CountOnly,
    /// Additionally require the aggregated out-of-order fraction to exceed
    /// `c * eps`.
    Fraction,
}

impl FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" | "count_only" => Ok(OutputMode::CountOnly),
            "fraction" => Ok(OutputMode::Fraction),
            _ => Err(Error::InvalidConfig(format!("unknown output mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregatorParams {
    pub alpha: u64,
    pub eps: f64,
    pub c: f64,
    pub mode: OutputMode,
}

impl Default for AggregatorParams {
    fn default() -> Self {
        Self {
            alpha: 16,
            eps: 0.01,
            c: 1.0,
            mode: OutputMode::CountOnly,
        }
    }
}

impl AggregatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 {
            return Err(Error::InvalidConfig("alpha must be at least 1".into()));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(Error::InvalidConfig("c must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PrefixTally {
    pub prefix: Prefix,
    pub sum_n: u64,
    pub sum_o: u64,
    pub report_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Aggregator {
    tallies: HashMap<Prefix, PrefixTally>,
}

impl Aggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&mut self, report: &Report) {
        let t = self.tallies.entry(report.prefix).or_insert(PrefixTally {
            prefix: report.prefix,
            sum_n: 0,
            sum_o: 0,
            report_count: 0,
        });
        t.sum_n += report.n;
        t.sum_o += report.o;
        t.report_count += 1;
    }

    pub fn ingest_all<'a>(&mut self, reports: impl IntoIterator<Item = &'a Report>) {
        for r in reports {
            self.ingest(r);
        }
    }

    pub fn tally(&self, prefix: &Prefix) -> Option<&PrefixTally> {
        self.tallies.get(prefix)
    }

    /// Tallies sorted by prefix.
    pub fn tallies(&self) -> Vec<PrefixTally> {
        let mut v: Vec<_> = self.tallies.values().copied().collect();
        v.sort_unstable_by_key(|t| t.prefix);
        v
    }

    pub fn report_count(&self) -> u64 {
        self.tallies.values().map(|t| t.report_count).sum()
    }

    pub fn finalize(&self, params: &AggregatorParams) -> BTreeSet<Prefix> {
        self.tallies
            .values()
            .filter(|t| passes(t, params))
            .map(|t| t.prefix)
            .collect()
    }
}

fn passes(t: &PrefixTally, p: &AggregatorParams) -> bool {
    if t.sum_n < p.alpha {
        return false;
    }
    match p.mode {
        OutputMode::CountOnly => true,
        OutputMode::Fraction => t.sum_o as f64 / t.sum_n as f64 > p.c * p.eps,
    }
}

/// Writes an output set as a sorted `prefix` column.
pub fn write_prefix_list<W: Write>(sink: W, prefixes: &BTreeSet<Prefix>) -> Result<()> {
    let mut out = std::io::BufWriter::new(sink);
    writeln!(out, "prefix")?;
    for p in prefixes {
        writeln!(out, "{p}")?;
    }
    out.flush()?;
    Ok(())
}
