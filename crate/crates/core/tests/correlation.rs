use reorder_core::oracle::{pearson_repeated, PccParams};
use reorder_core::synth::{generate_synthetic, SynthConfig};
use reorder_core::{compute_stats, ReorderDef};

fn mean_pcc(cfg: &SynthConfig, def: ReorderDef) -> f64 {
    let stats = compute_stats(&generate_synthetic(cfg).unwrap().trace.packets);
    let s = pearson_repeated(&stats, PccParams { def, ..PccParams::default() }).unwrap();
    assert_eq!(s.values.len(), 100);
    s.mean
}

#[test]
fn correlated_trace_has_positive_pcc() {
    let cfg = SynthConfig { n_prefixes: 1000, bad_prefix_fraction: 0.05, ..SynthConfig::default() };
    assert!(mean_pcc(&cfg, ReorderDef::Decrease) > 0.2);
}

#[test]
fn uncorrelated_control_is_near_zero() {
    let cfg = SynthConfig {
        n_prefixes: 1000,
        bad_prefix_fraction: 0.0,
        hot_flow_fraction: 0.0,
        good_reorder_prob: 0.01,
        ..SynthConfig::default()
    };
    assert!(mean_pcc(&cfg, ReorderDef::Decrease).abs() < 0.1);
}

#[test]
fn correlated_trace_regression() {
    let cfg = SynthConfig {
        n_prefixes: 1000,
        bad_prefix_fraction: 0.05,
        bad_reorder_prob: 0.05,
        good_reorder_prob: 0.001,
        ..SynthConfig::default()
    };
    let r = mean_pcc(&cfg, ReorderDef::Decrease);
    assert!((r - 0.569).abs() <= 0.05, "mean PCC {r}");
}
