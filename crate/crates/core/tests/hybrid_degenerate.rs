mod support;

use reorder_core::{
    Detector, FlowSampler, HeavyHitterTable, HhParams, HybridDetector, HybridFilter, HybridParams, SamplerParams,
};
use reorder_core::synth::{generate_synthetic, SynthConfig};
use support::random_trace;

fn hybrid(total: usize, x: f64, seed: u64, filter: HybridFilter) -> HybridParams {
    HybridParams {
        total_buckets: total,
        hh_fraction: x,
        sampler: SamplerParams { hash_seed: seed, report_all: seed % 2 == 1, ..SamplerParams::default() },
        hh: HhParams { hash_seed: seed, rng_seed: seed ^ 77, min_report_packets: 4, ..HhParams::default() },
        filter,
    }
}

fn traces() -> Vec<Vec<reorder_core::PacketRecord>> {
    let synth = generate_synthetic(&SynthConfig { n_prefixes: 256, bad_prefix_fraction: 0.2, ..SynthConfig::default() })
        .unwrap()
        .trace
        .packets;
    vec![random_trace(1, 5000, 40, 10), random_trace(2, 5000, 300, 60), synth]
}

#[test]
fn zero_share_is_the_array() {
    for packets in traces() {
        for (b, seed) in [(1, 0), (32, 1), (1024, 2)] {
            for filter in [HybridFilter::Flow, HybridFilter::Prefix] {
                let h = hybrid(b, 0.0, seed, filter);
                let mut alone = FlowSampler::new(SamplerParams { buckets: b, ..h.sampler }).unwrap();
                assert_eq!(HybridDetector::new(h).unwrap().run(&packets), alone.run(&packets));
            }
        }
    }
}

#[test]
fn full_share_is_the_table() {
    for packets in traces() {
        for (b, seed) in [(2, 0), (32, 1), (1024, 2)] {
            let h = hybrid(b, 1.0, seed, HybridFilter::Flow);
            let mut alone = HeavyHitterTable::new(HhParams { buckets_per_stage: b / 2, ..h.hh }).unwrap();
            assert_eq!(HybridDetector::new(h).unwrap().run(&packets), alone.run(&packets));
        }
    }
}

#[test]
fn access_budget_is_d_plus_one() {
    for packets in traces() {
        for x in [0.1, 0.5, 0.9] {
            let mut h = HybridDetector::new(hybrid(64, x, 3, HybridFilter::Flow)).unwrap();
            h.run(&packets);
            let a = h.access_stats();
            assert!(a.max_reads_per_packet <= 3, "x={x}: {a:?}");
            assert!(a.max_writes_per_packet <= 2, "x={x}: {a:?}");
            assert_eq!(a.packets, packets.len() as u64);
        }
    }
}

#[test]
fn prefix_filter_sends_fewer_packets_to_the_array() {
    let packets = &traces()[2];
    let count_array = |filter| {
        let mut h = HybridDetector::new(hybrid(64, 0.5, 4, filter)).unwrap();
        h.run(packets);
        h.array().map_or(0, |a| a.access_stats().packets)
    };
    assert!(count_array(HybridFilter::Prefix) <= count_array(HybridFilter::Flow));
}
