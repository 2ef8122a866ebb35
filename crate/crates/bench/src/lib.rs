//! Shared inputs for the detector benchmarks in `benches/`.

use reorder_core::{generate_synthetic, PacketRecord, SynthConfig};

/// A seeded synthetic trace; 1024 prefixes yield roughly a million packets.
pub fn bench_trace(n_prefixes: u32) -> Vec<PacketRecord> {
    generate_synthetic(&SynthConfig { n_prefixes, ..SynthConfig::default() })
        .expect("default generator settings are valid")
        .trace
        .packets
}
