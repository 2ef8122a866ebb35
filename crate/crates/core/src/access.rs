//! Per-packet memory access accounting.
//!
//! Data-plane targets can only touch memory a few times per packet. Every
//! detector routes its bucket reads and writes through an [`AccessMeter`]
//! so tests can check the per-packet budget on real traces.

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessStats {
    pub packets: u64,
    pub reads: u64,
    pub writes: u64,
    pub max_reads_per_packet: u32,
    pub max_writes_per_packet: u32,
}

#[derive(Debug, Clone, Default)]
pub struct AccessMeter {
    stats: AccessStats,
    cur_reads: u32,
    cur_writes: u32,
}

impl AccessMeter {
    #[inline]
    pub fn read(&mut self) {
        self.cur_reads += 1;
    }

    #[inline]
    pub fn write(&mut self) {
        self.cur_writes += 1;
    }

    /// Charges accesses performed on this meter's behalf by a component.
    #[inline]
    pub fn charge(&mut self, reads: u64, writes: u64) {
        self.cur_reads += reads as u32;
        self.cur_writes += writes as u32;
    }

    /// Closes the accounting window of the current packet.
    #[inline]
    pub fn end_packet(&mut self) {
        let s = &mut self.stats;
        s.packets += 1;
        s.reads += u64::from(self.cur_reads);
        s.writes += u64::from(self.cur_writes);
        s.max_reads_per_packet = s.max_reads_per_packet.max(self.cur_reads);
        s.max_writes_per_packet = s.max_writes_per_packet.max(self.cur_writes);
        self.cur_reads = 0;
        self.cur_writes = 0;
    }

    pub fn stats(&self) -> AccessStats {
        self.stats
    }
}
