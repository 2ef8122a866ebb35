//! Heavy-hitter table in front of a flow-sampling array.
//!
//! Every packet is offered to the heavy-hitter table first. The array only
//! sees packets whose flow is not resident in the table after that call, so
//! large flows are tracked continuously and the array samples the rest.

use serde::Serialize;

use crate::access::{AccessMeter, AccessStats};
use crate::error::{Error, Result};
use crate::heavy_hitter::{HeavyHitterTable, HhParams};
use crate::model::PacketRecord;
use crate::report::{Detector, Report};
use crate::sampler::{FlowSampler, SamplerParams};

/// What keeps a packet away from the array.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HybridFilter {
    /// Its flow is resident in the heavy-hitter table.
    #[default]
    Flow,
    /// Any flow of its prefix is resident in the heavy-hitter table.
    Prefix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HybridParams {
    pub total_buckets: usize,
    /// Share `x` of the buckets given to the heavy-hitter table.
    pub hh_fraction: f64,
    /// Array settings; `buckets` is overwritten by the split.
    pub sampler: SamplerParams,
    /// Table settings; `buckets_per_stage` is overwritten by the split.
    pub hh: HhParams,
    pub filter: HybridFilter,
}

impl HybridParams {
    /// `(floor(x*B), B - floor(x*B))`.
    pub fn split(&self) -> (usize, usize) {
        let hh = ((self.hh_fraction * self.total_buckets as f64).floor() as usize).min(self.total_buckets);
        (hh, self.total_buckets - hh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_buckets == 0 {
            return Err(Error::InvalidConfig("total bucket count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hh_fraction) {
            return Err(Error::InvalidConfig("hh fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HybridDetector {
    hh: Option<HeavyHitterTable>,
    array: Option<FlowSampler>,
    filter: HybridFilter,
    meter: AccessMeter,
}

impl HybridDetector {
    /// Builds both parts. The table's share is divided evenly over its `d`
    /// stages; any remainder buckets stay unused, and a share smaller than
    /// `d` leaves the table out entirely.
    pub fn new(params: HybridParams) -> Result<Self> {
        params.validate()?;
        let (hh_total, array_buckets) = params.split();
        let per_stage = hh_total / params.hh.stages.max(1);
        let hh_params = HhParams {
            buckets_per_stage: per_stage.max(1),
            ..params.hh
        };
        hh_params.validate()?;
        let hh = if per_stage > 0 {
            Some(HeavyHitterTable::new(hh_params)?)
        } else {
            None
        };
        let array = if array_buckets > 0 {
            Some(FlowSampler::new(SamplerParams {
                buckets: array_buckets,
                ..params.sampler
            })?)
        } else {
            None
        };
        Ok(Self {
            hh,
            array,
            filter: params.filter,
            meter: AccessMeter::default(),
        })
    }

    pub fn heavy_hitter(&self) -> Option<&HeavyHitterTable> {
        self.hh.as_ref()
    }

    pub fn array(&self) -> Option<&FlowSampler> {
        self.array.as_ref()
    }

    fn charged(stats: Option<AccessStats>) -> (u64, u64) {
        stats.map_or((0, 0), |s| (s.reads, s.writes))
    }

    /// Processes one packet, appending up to two reports.
    pub fn process_packet(&mut self, pkt: &PacketRecord, out: &mut Vec<Report>) {
        let before_hh = Self::charged(self.hh.as_ref().map(|h| h.access_stats()));
        let before_arr = Self::charged(self.array.as_ref().map(|a| a.access_stats()));

        let filtered = match self.hh.as_mut() {
            Some(hh) => {
                let outcome = hh.process_packet(pkt);
                out.extend(outcome.report);
                match self.filter {
                    HybridFilter::Flow => outcome.resident,
                    HybridFilter::Prefix => outcome.prefix_resident,
                }
            }
            None => false,
        };
        if !filtered {
            if let Some(array) = self.array.as_mut() {
                out.extend(array.process_packet(pkt));
            }
        }

        let after_hh = Self::charged(self.hh.as_ref().map(|h| h.access_stats()));
        let after_arr = Self::charged(self.array.as_ref().map(|a| a.access_stats()));
        self.meter.charge(
            (after_hh.0 - before_hh.0) + (after_arr.0 - before_arr.0),
            (after_hh.1 - before_hh.1) + (after_arr.1 - before_arr.1),
        );
        self.meter.end_packet();
    }

    /// Table reports first, then array reports.
    pub fn flush(&mut self) -> Vec<Report> {
        let mut out = Vec::new();
        self.flush_into(&mut out);
        out
    }
}

impl Detector for HybridDetector {
    fn process(&mut self, pkt: &PacketRecord, out: &mut Vec<Report>) {
        self.process_packet(pkt, out);
    }

    fn flush_into(&mut self, out: &mut Vec<Report>) {
        if let Some(hh) = self.hh.as_mut() {
            hh.flush_into(out);
        }
        if let Some(array) = self.array.as_mut() {
            array.flush_into(out);
        }
    }

    fn access_stats(&self) -> AccessStats {
        self.meter.stats()
    }
}
