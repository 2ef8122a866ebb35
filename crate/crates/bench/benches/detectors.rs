use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use reorder_bench::bench_trace;
use reorder_core::{
    compute_stats, Detector, FlowSampler, HeavyHitterTable, HhParams, HybridDetector, HybridFilter, HybridParams, SamplerParams,
};

fn detectors(c: &mut Criterion) {
    let packets = bench_trace(1024);
    let mut group = c.benchmark_group("detectors");
    group.throughput(Throughput::Elements(packets.len() as u64));
    group.sample_size(10);

    for buckets in [32usize, 1024, 65536] {
        group.bench_with_input(BenchmarkId::new("array", buckets), &buckets, |b, &buckets| {
            b.iter(|| {
                let mut s = FlowSampler::new(SamplerParams { buckets, ..SamplerParams::default() }).unwrap();
                s.run(&packets)
            })
        });
        group.bench_with_input(BenchmarkId::new("heavy_hitter", buckets), &buckets, |b, &buckets| {
            b.iter(|| {
                let p = HhParams { buckets_per_stage: buckets / 2, ..HhParams::default() };
                HeavyHitterTable::new(p).unwrap().run(&packets)
            })
        });
        group.bench_with_input(BenchmarkId::new("hybrid", buckets), &buckets, |b, &buckets| {
            b.iter(|| {
                let p = HybridParams {
                    total_buckets: buckets,
                    hh_fraction: 0.5,
                    sampler: SamplerParams::default(),
                    hh: HhParams::default(),
                    filter: HybridFilter::Flow,
                };
                HybridDetector::new(p).unwrap().run(&packets)
            })
        });
    }
    group.bench_function("oracle", |b| b.iter(|| compute_stats(&packets)));
    group.finish();
}

criterion_group!(benches, detectors);
criterion_main!(benches);
