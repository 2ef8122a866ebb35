//! Packets, flows, /24 prefixes and the out-of-order predicate shared by
//! every detector and by the oracle.
//!
//! Sequence numbers are compared as plain unsigned integers. Rollover is
//! not handled: a flow whose sequence space wraps inside a trace produces
//! spurious out-of-order events.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// TCP connection identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowId {
    pub src_ip: u32,
    pub dst_ip: u32,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowId {
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, src_port: u16, dst_port: u16) -> Self {
        Self {
            src_ip: src_ip.into(),
            dst_ip: dst_ip.into(),
            src_port,
            dst_port,
        }
    }

    pub fn src_addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.src_ip)
    }

    pub fn dst_addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.dst_ip)
    }

    pub fn prefix(&self) -> Prefix {
        prefix_of(self)
    }

    /// Seeded 64-bit hash of the full 4-tuple.
    pub fn hash_with_seed(&self, seed: u64) -> u64 {
        let addrs = (u64::from(self.src_ip) << 32) | u64::from(self.dst_ip);
        let ports = (u64::from(self.src_port) << 16) | u64::from(self.dst_port);
        mix64(mix64(addrs ^ mix64(seed)) ^ ports)
    }
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}-{}:{}",
            self.src_addr(),
            self.src_port,
            self.dst_addr(),
            self.dst_port
        )
    }
}

/// A 24-bit source prefix, stored as an address with the low byte cleared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prefix(u32);

impl Prefix {
    pub const MASK: u32 = 0xFFFF_FF00;

    pub fn from_addr(addr: u32) -> Self {
        Prefix(addr & Self::MASK)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn addr(self) -> Ipv4Addr {
        Ipv4Addr::from(self.0)
    }

    /// Seeded 64-bit hash of the prefix. Detectors index their buckets with
    /// this so that all flows of a prefix share the same buckets.
    pub fn hash_with_seed(self, seed: u64) -> u64 {
        mix64(u64::from(self.0) ^ mix64(seed))
    }

    pub fn bucket(self, seed: u64, buckets: usize) -> usize {
        debug_assert!(buckets > 0);
        (self.hash_with_seed(seed) % buckets as u64) as usize
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/24", self.addr())
    }
}

impl FromStr for Prefix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let addr = s.strip_suffix("/24").unwrap_or(s);
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad prefix {s:?}")))?;
        Ok(Prefix::from_addr(addr.into()))
    }
}

/// Returns the /24 source prefix of a flow.
pub fn prefix_of(flow: &FlowId) -> Prefix {
    Prefix::from_addr(flow.src_ip)
}

/// One TCP data packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub flow: FlowId,
    pub seq: u32,
    pub payload_len: u32,
    /// Seconds since the start of the trace.
    pub ts: f64,
}

impl PacketRecord {
    pub fn prefix(&self) -> Prefix {
        prefix_of(&self.flow)
    }

    /// Sequence number the next in-order packet of this flow should carry.
    pub fn next_seq(&self) -> u32 {
        self.seq.wrapping_add(self.payload_len)
    }
}

/// Which reordering definition an out-of-order count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReorderDef {
    /// Sequence number lower than the predecessor's.
    Decrease,
    /// Sequence number past the one expected from the predecessor.
    Gap,
    /// Sequence number below the maximum seen so far. Oracle only.
    BelowMax,
}

impl ReorderDef {
    pub const ALL: [ReorderDef; 3] = [ReorderDef::Decrease, ReorderDef::Gap, ReorderDef::BelowMax];

    pub fn index(self) -> usize {
        match self {
            ReorderDef::Decrease => 0,
            ReorderDef::Gap => 1,
            ReorderDef::BelowMax => 2,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(ReorderDef::Decrease),
            2 => Ok(ReorderDef::Gap),
            3 => Ok(ReorderDef::BelowMax),
            _ => Err(Error::InvalidConfig(format!("unknown reordering definition {n}"))),
        }
    }

    /// Whether the definition only needs the immediately preceding packet.
    pub fn is_pairwise(self) -> bool {
        !matches!(self, ReorderDef::BelowMax)
    }
}

impl fmt::Display for ReorderDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "def{}", self.number())
    }
}

impl FromStr for ReorderDef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("def");
        let n: u8 = digits
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad reordering definition {s:?}")))?;
        Self::from_number(n)
    }
}

/// Per-flow sequence state left behind by the most recent packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqState {
    pub last_seq: u32,
    pub expected_next: u32,
    /// Maximum over every packet seen so far; only the oracle keeps it.
    pub max_seq: Option<u32>,
}

impl SeqState {
    /// State after a flow's first packet, without the running maximum.
    pub fn new(pkt: &PacketRecord) -> Self {
        Self {
            last_seq: pkt.seq,
            expected_next: pkt.next_seq(),
            max_seq: None,
        }
    }

    /// State after a flow's first packet, tracking the running maximum.
    pub fn with_max(pkt: &PacketRecord) -> Self {
        Self {
            max_seq: Some(pkt.seq),
            ..Self::new(pkt)
        }
    }

    pub fn observe(&mut self, pkt: &PacketRecord) {
        self.last_seq = pkt.seq;
        self.expected_next = pkt.next_seq();
        if let Some(max) = self.max_seq.as_mut() {
            *max = (*max).max(pkt.seq);
        }
    }
}

/// Decides whether `pkt` is out of order given the state its flow was left
/// in by all earlier packets.
pub fn is_out_of_order(state: &SeqState, pkt: &PacketRecord, def: ReorderDef) -> Result<bool> {
    match def {
        ReorderDef::Decrease => Ok(pkt.seq < state.last_seq),
        ReorderDef::Gap => Ok(pkt.seq > state.expected_next),
        ReorderDef::BelowMax => state
            .max_seq
            .map(|max| pkt.seq < max)
            .ok_or(Error::InvalidState("running maximum is not tracked")),
    }
}

/// The pairwise check used on detector hot paths. `def` must be pairwise.
#[inline]
pub(crate) fn pairwise_out_of_order(state: &SeqState, pkt: &PacketRecord, def: ReorderDef) -> bool {
    match def {
        ReorderDef::Decrease => pkt.seq < state.last_seq,
        _ => pkt.seq > state.expected_next,
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
