use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use reorder_core::control::{write_prefix_list, AggregatorParams};
use reorder_core::experiment::{grid_search_hybrid, run_experiment, run_one, EvalResult};
use reorder_core::lemma::{presets, validate_lemma, LemmaModel, LemmaOutcome};
use reorder_core::oracle::{
    flow_size_reorder_breakdown, interarrival_histogram, log2_size_edges, pearson_repeated, Log2Histogram, PccParams,
};
use reorder_core::report::write_reports;
use reorder_core::synth::write_sidecar;
use reorder_core::trace::{filter_server_to_client, TraceMeta};
use reorder_core::{
    generate_synthetic, read_trace_file, write_trace, Aggregator, Algorithm, DetectorConfig, Error, ExperimentSpec,
    PacketRecord, SynthConfig, Thresholds, Workload,
};

use crate::args::{Command, ControlArgs, DetectorArgs, InputArgs, ThresholdArgs};

/// Exit status for a failed command: 1 for bad parameters, 2 for anything
/// wrong with the data or the file system.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::InvalidConfig(_) | Error::UnsupportedDefinition(_))
        )
    });
    if usage {
        1
    } else {
        2
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::InvalidConfig(msg.into()).into()
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate { synth, out } => generate(&synth.config(), &out),
        Command::Analyze {
            input,
            thresholds,
            def,
            pcc_repetitions,
            pcc_fraction,
            pcc_seed,
            size_bins,
            out,
        } => {
            let pcc = PccParams {
                repetitions: pcc_repetitions,
                sample_fraction: pcc_fraction,
                def,
                seed: pcc_seed,
            };
            analyze(&input, threshold_values(&thresholds), pcc, size_bins, &out)
        }
        Command::Run {
            input,
            detector,
            thresholds,
            control,
            buckets,
            hh_fraction,
            seeds,
            out,
        } => {
            let spec = experiment_spec(&detector, &thresholds, &control, vec![buckets], vec![hh_fraction], seeds);
            run(&input, &spec, &out)
        }
        Command::Sweep {
            input,
            detector,
            thresholds,
            control,
            buckets,
            hh_fraction,
            seeds,
            vary,
            out,
        } => {
            let spec = experiment_spec(&detector, &thresholds, &control, buckets, hh_fraction, seeds);
            sweep(&input, &spec, vary.as_deref(), &out)
        }
        Command::GridHybrid {
            input,
            detector,
            thresholds,
            control,
            buckets,
            grid,
            seeds,
            out,
        } => {
            let mut spec = experiment_spec(&detector, &thresholds, &control, buckets, grid.clone(), seeds);
            spec.detector.algorithm = Algorithm::Hybrid;
            grid_hybrid(&input, &spec, &grid, &out)
        }
        Command::ValidateLemma {
            model,
            trials,
            seed,
            out,
        } => lemma(model.as_deref(), trials, seed, &out),
    }
}

fn threshold_values(t: &ThresholdArgs) -> Thresholds {
    Thresholds {
        eps: t.eps,
        alpha: t.alpha,
        beta: t.beta,
    }
}

fn experiment_spec(
    detector: &DetectorArgs,
    thresholds: &ThresholdArgs,
    control: &ControlArgs,
    buckets: Vec<usize>,
    hh_fractions: Vec<f64>,
    seeds: Vec<u64>,
) -> ExperimentSpec {
    ExperimentSpec {
        detector: detector.config(),
        aggregator: control.params(thresholds),
        beta: thresholds.beta,
        buckets,
        hh_fractions,
        seeds,
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
enum Source {
    Trace { path: String, server_to_client: bool },
    Synthetic { config: SynthConfig, server_to_client: bool },
}

fn load(input: &InputArgs) -> Result<(Vec<PacketRecord>, Source)> {
    let (packets, source) = match &input.trace {
        Some(path) => {
            let trace = read_trace_file(path).with_context(|| format!("reading trace {}", path.display()))?;
            let source = Source::Trace {
                path: path.display().to_string(),
                server_to_client: input.server_to_client,
            };
            (trace.packets, source)
        }
        None => {
            let config = input.synth.config();
            let packets = generate_synthetic(&config)?.trace.packets;
            let source = Source::Synthetic {
                config,
                server_to_client: input.server_to_client,
            };
            (packets, source)
        }
    };
    let packets = if input.server_to_client {
        filter_server_to_client(&packets)
    } else {
        packets
    };
    Ok((packets, source))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn generate(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let synth = generate_synthetic(cfg)?;
    create_out(out)?;
    write_trace(create(&out.join("trace.csv"))?, &synth.trace.packets)?;
    write_sidecar(create(&out.join("injected.csv"))?, &synth.injected)?;
    let bad: Vec<String> = synth.bad_prefixes.iter().map(|p| p.to_string()).collect();
    write_json(
        &out.join("synth.json"),
        &serde_json::json!({ "config": cfg, "meta": synth.trace.meta, "bad_prefixes": bad }),
    )?;
    println!(
        "wrote {} packets, {} flows, {} prefixes to {}",
        synth.trace.meta.packet_count,
        synth.trace.meta.flow_count,
        synth.trace.meta.prefix_count,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PrefixRow {
    prefix: String,
    flow_count: u64,
    n_g: u64,
    o_def1: u64,
    o_def2: u64,
    o_def3: u64,
}

#[derive(Serialize)]
struct FlowRow {
    flow: String,
    prefix: String,
    n_f: u64,
    o_def1: u64,
    o_def2: u64,
    o_def3: u64,
}

#[derive(Serialize)]
struct TruthRow {
    prefix: String,
    n_g: u64,
    o_g: u64,
    heavy: bool,
}

#[derive(Serialize)]
struct HistRow {
    class: &'static str,
    log2_bin: String,
    count: u64,
}

#[derive(Serialize)]
struct BreakdownRow {
    prefix: String,
    n_g: u64,
    o_g: u64,
    size_bin_lower: u64,
    flow_count: u64,
    reorder_fraction: Option<f64>,
}

#[derive(Serialize)]
struct PccOut {
    def: u8,
    repetitions: usize,
    sample_fraction: f64,
    seed: u64,
    eligible_flows: usize,
    samples_per_repetition: usize,
    mean: Option<f64>,
    undefined_repetitions: usize,
    values: Vec<f64>,
    note: Option<String>,
}

fn hist_rows(class: &'static str, h: &Log2Histogram, rows: &mut Vec<HistRow>) {
    if h.zeros > 0 {
        rows.push(HistRow {
            class,
            log2_bin: "zero".into(),
            count: h.zeros,
        });
    }
    for (bin, count) in &h.bins {
        rows.push(HistRow {
            class,
            log2_bin: bin.to_string(),
            count: *count,
        });
    }
}

fn analyze(input: &InputArgs, th: Thresholds, pcc: PccParams, size_bins: u32, out: &Path) -> Result<()> {
    th.validate()?;
    let (packets, source) = load(input)?;
    if packets.is_empty() {
        return Err(Error::EmptyTrace.into());
    }
    let meta = TraceMeta::scan(&packets);
    let def = pcc.def;
    let workload = Workload::new(&packets, th, def)?;
    let stats = &workload.stats;
    let truth = &workload.truth;
    create_out(out)?;

    let prefix_rows: Vec<PrefixRow> = stats
        .prefixes
        .values()
        .map(|p| PrefixRow {
            prefix: p.prefix.to_string(),
            flow_count: p.flow_count,
            n_g: p.n_g,
            o_def1: p.o_g[0],
            o_def2: p.o_g[1],
            o_def3: p.o_g[2],
        })
        .collect();
    write_csv(&out.join("prefix_stats.csv"), &prefix_rows)?;

    let flow_rows: Vec<FlowRow> = stats
        .flows
        .iter()
        .map(|f| FlowRow {
            flow: f.flow.to_string(),
            prefix: f.flow.prefix().to_string(),
            n_f: f.n_f,
            o_def1: f.o_f[0],
            o_def2: f.o_f[1],
            o_def3: f.o_f[2],
        })
        .collect();
    write_csv(&out.join("flow_stats.csv"), &flow_rows)?;

    let truth_rows: Vec<TruthRow> = truth
        .above_alpha_set
        .iter()
        .map(|p| {
            let s = &stats.prefixes[p];
            TruthRow {
                prefix: p.to_string(),
                n_g: s.n_g,
                o_g: s.o(def),
                heavy: truth.heavy_set.contains(p),
            }
        })
        .collect();
    write_csv(&out.join("ground_truth.csv"), &truth_rows)?;

    let pcc_out = match pearson_repeated(stats, pcc) {
        Ok(s) => PccOut {
            def: def.number(),
            repetitions: pcc.repetitions,
            sample_fraction: pcc.sample_fraction,
            seed: pcc.seed,
            eligible_flows: s.eligible_flows,
            samples_per_repetition: s.samples_per_repetition,
            mean: Some(s.mean),
            undefined_repetitions: s.undefined,
            values: s.values,
            note: None,
        },
        Err(e @ (Error::UndefinedMetric(_) | Error::UndefinedCorrelation(_))) => PccOut {
            def: def.number(),
            repetitions: pcc.repetitions,
            sample_fraction: pcc.sample_fraction,
            seed: pcc.seed,
            eligible_flows: 0,
            samples_per_repetition: 0,
            mean: None,
            undefined_repetitions: pcc.repetitions,
            values: Vec::new(),
            note: Some(e.to_string()),
        },
        Err(e) => return Err(e.into()),
    };
    write_json(&out.join("pcc.json"), &pcc_out)?;

    let hist = interarrival_histogram(&packets, def);
    let mut hist_out = Vec::new();
    hist_rows("in_order", &hist.in_order, &mut hist_out);
    hist_rows("decrease", &hist.decrease, &mut hist_out);
    hist_rows("gap", &hist.gap, &mut hist_out);
    write_csv(&out.join("interarrival.csv"), &hist_out)?;

    let edges = log2_size_edges(size_bins);
    let mut breakdown = Vec::new();
    for row in flow_size_reorder_breakdown(stats, def, &edges) {
        for (i, &count) in row.flow_counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            breakdown.push(BreakdownRow {
                prefix: row.prefix.to_string(),
                n_g: row.n_g,
                o_g: row.o_g,
                size_bin_lower: edges[i],
                flow_count: count,
                reorder_fraction: row.reorder_fraction.as_ref().map(|f| f[i]),
            });
        }
    }
    write_csv(&out.join("breakdown.csv"), &breakdown)?;

    let summary = serde_json::json!({
        "source": source,
        "meta": meta,
        "thresholds": th,
        "def": def.number(),
        "heavy_prefixes": truth.heavy_set.len(),
        "above_alpha_prefixes": truth.above_alpha_set.len(),
        "small_prefixes": truth.small_exempt_set.len(),
        "pcc_mean": pcc_out.mean,
        "interarrival_mean_seconds": {
            "in_order": hist.in_order.mean(),
            "decrease": hist.decrease.mean(),
            "gap": hist.gap.mean(),
        },
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} packets, {} prefixes, {} heavy, mean PCC {}",
        meta.packet_count,
        meta.prefix_count,
        truth.heavy_set.len(),
        pcc_out.mean.map_or("undefined".to_string(), |m| format!("{m:.4}"))
    );
    Ok(())
}

fn write_spec(out: &Path, source: &Source, spec: &ExperimentSpec, extra: serde_json::Value) -> Result<()> {
    write_json(
        &out.join("spec.json"),
        &serde_json::json!({ "input": source, "experiment": spec, "extra": extra }),
    )
}

fn print_rows(rows: &[EvalResult]) {
    for r in rows {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{} B={} x={} seed={}: accuracy {} fp {} overhead {:.6}",
            r.algorithm,
            r.buckets,
            r.hh_fraction,
            r.seed,
            fmt(r.accuracy),
            fmt(r.false_positive_rate),
            r.communication_overhead
        );
    }
}

#[derive(Serialize)]
struct TallyRow {
    prefix: String,
    sum_n: u64,
    sum_o: u64,
    report_count: u64,
}

fn run(input: &InputArgs, spec: &ExperimentSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let (packets, source) = load(input)?;
    let workload = Workload::new(&packets, spec.thresholds(), spec.detector.def)?;
    create_out(out)?;
    let (b, x) = (spec.buckets[0], spec.hh_fractions[0]);
    let mut rows = Vec::new();
    for &seed in &spec.seeds {
        let outcome = run_one(&workload, spec, b, x, seed)?;
        write_reports(create(&out.join(format!("reports_seed{seed}.csv")))?, &outcome.reports)?;
        write_prefix_list(create(&out.join(format!("prefixes_seed{seed}.csv")))?, &outcome.output)?;
        let mut agg = Aggregator::new();
        agg.ingest_all(&outcome.reports);
        let tallies: Vec<TallyRow> = agg
            .tallies()
            .into_iter()
            .map(|t| TallyRow {
                prefix: t.prefix.to_string(),
                sum_n: t.sum_n,
                sum_o: t.sum_o,
                report_count: t.report_count,
            })
            .collect();
        write_csv(&out.join(format!("tallies_seed{seed}.csv")), &tallies)?;
        rows.push(outcome.result);
    }
    write_csv(&out.join("results.csv"), &rows)?;
    write_spec(out, &source, spec, serde_json::Value::Null)?;
    print_rows(&rows);
    Ok(())
}

/// One parameter swept alongside the bucket budgets.
#[derive(Debug, Clone)]
struct Vary {
    name: String,
    values: Vec<f64>,
}

fn parse_vary(s: &str) -> Result<Vary> {
    let (name, list) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("--vary expects NAME=v1,v2,..., got {s:?}")))?;
    let values = list
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad --vary value {v:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(usage("--vary needs at least one value"));
    }
    let name = name.trim().to_string();
    if !["T", "C", "R", "r-hh", "d", "c", "alpha", "eps"].contains(&name.as_str()) {
        return Err(usage(format!("cannot vary {name:?}")));
    }
    Ok(Vary { name, values })
}

fn whole(name: &str, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as u64)
    } else {
        Err(usage(format!("{name} must be a whole number, got {v}")))
    }
}

fn apply_vary(spec: &ExperimentSpec, name: &str, v: f64) -> Result<ExperimentSpec> {
    let mut s = spec.clone();
    let d: &mut DetectorConfig = &mut s.detector;
    let a: &mut AggregatorParams = &mut s.aggregator;
    match name {
        "T" => d.staleness = v,
        "C" => d.max_packets = whole(name, v)?,
        "R" => d.report_threshold = whole(name, v)?,
        "r-hh" => d.hh_report_fraction = v,
        "d" => d.hh_stages = whole(name, v)? as usize,
        "c" => a.c = v,
        "alpha" => a.alpha = whole(name, v)?,
        "eps" => a.eps = v,
        _ => unreachable!("checked by parse_vary"),
    }
    Ok(s)
}

#[derive(Serialize)]
struct SummaryRow {
    vary: String,
    value: Option<f64>,
    algorithm: Algorithm,
    buckets: usize,
    hh_fraction: f64,
    runs: usize,
    accuracy_mean: Option<f64>,
    false_positive_rate_mean: Option<f64>,
    communication_overhead_mean: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(vary: &str, value: Option<f64>, rows: &[EvalResult], out: &mut Vec<SummaryRow>) {
    let mut groups: BTreeMap<(usize, u64), Vec<&EvalResult>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.buckets, r.hh_fraction.to_bits())).or_default().push(r);
    }
    for ((buckets, x), g) in groups {
        out.push(SummaryRow {
            vary: vary.to_string(),
            value,
            algorithm: g[0].algorithm,
            buckets,
            hh_fraction: f64::from_bits(x),
            runs: g.len(),
            accuracy_mean: mean(g.iter().filter_map(|r| r.accuracy)),
            false_positive_rate_mean: mean(g.iter().filter_map(|r| r.false_positive_rate)),
            communication_overhead_mean: mean(g.iter().map(|r| r.communication_overhead)).unwrap_or(0.0),
        });
    }
}

fn sweep(input: &InputArgs, spec: &ExperimentSpec, vary: Option<&str>, out: &Path) -> Result<()> {
    let vary = vary.map(parse_vary).transpose()?;
    let variants: Vec<(Option<f64>, ExperimentSpec)> = match &vary {
        None => vec![(None, spec.clone())],
        Some(v) => v
            .values
            .iter()
            .map(|&x| apply_vary(spec, &v.name, x).map(|s| (Some(x), s)))
            .collect::<Result<_>>()?,
    };
    for (_, s) in &variants {
        s.validate()?;
    }
    let (packets, source) = load(input)?;
    create_out(out)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let vary_name = vary.as_ref().map_or(String::new(), |v| v.name.clone());
    for (value, s) in &variants {
        let workload = Workload::new(&packets, s.thresholds(), s.detector.def)?;
        let part = run_experiment(&workload, s)?;
        summarize(&vary_name, *value, &part, &mut summary);
        rows.extend(part);
    }
    write_csv(&out.join("results.csv"), &rows)?;
    write_csv(&out.join("summary.csv"), &summary)?;
    write_spec(
        out,
        &source,
        spec,
        serde_json::json!({ "vary": vary.map(|v| serde_json::json!({ "name": v.name, "values": v.values })) }),
    )?;
    for s in &summary {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}{} B={} x={}: accuracy {} fp {} overhead {:.6}",
            if s.vary.is_empty() { String::new() } else { format!("{}={} ", s.vary, s.value.unwrap_or_default()) },
            s.algorithm,
            s.buckets,
            s.hh_fraction,
            fmt(s.accuracy_mean),
            fmt(s.false_positive_rate_mean),
            s.communication_overhead_mean
        );
    }
    Ok(())
}

fn grid_hybrid(input: &InputArgs, spec: &ExperimentSpec, grid: &[f64], out: &Path) -> Result<()> {
    spec.validate()?;
    let (packets, source) = load(input)?;
    let workload = Workload::new(&packets, spec.thresholds(), spec.detector.def)?;
    let (rows, best) = grid_search_hybrid(&workload, spec, grid)?;
    create_out(out)?;
    write_csv(&out.join("results.csv"), &rows)?;
    write_csv(&out.join("best.csv"), &best)?;
    write_spec(out, &source, spec, serde_json::json!({ "grid": grid }))?;
    for b in &best {
        println!(
            "B={}: best x={} accuracy {}",
            b.buckets,
            b.best_hh_fraction,
            b.accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct LemmaRow {
    name: String,
    trials: usize,
    f_b: u64,
    p_g_given_b: f64,
    t1: u64,
    threshold: f64,
    failure_bound: f64,
    evaluated: bool,
    success_fraction: Option<f64>,
    mean_checks: Option<f64>,
    passed: Option<bool>,
}

fn lemma_row(name: &str, o: &LemmaOutcome) -> LemmaRow {
    LemmaRow {
        name: name.to_string(),
        trials: o.trials,
        f_b: o.bound.f_b,
        p_g_given_b: o.bound.p_g_given_b,
        t1: o.bound.t1,
        threshold: o.bound.threshold,
        failure_bound: o.bound.failure_bound,
        evaluated: o.evaluated,
        success_fraction: o.success_fraction,
        mean_checks: o.mean_checks,
        passed: o.passed,
    }
}

fn lemma(model: Option<&Path>, trials: usize, seed: u64, out: &Path) -> Result<()> {
    let models: Vec<(String, LemmaModel)> = match model {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m: LemmaModel =
                serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))?;
            let name = path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
            vec![(name, m)]
        }
        None => presets().into_iter().map(|(n, m)| (n.to_string(), m)).collect(),
    };
    let mut rows = Vec::new();
    for (name, m) in &models {
        let o = validate_lemma(m, trials, seed)?;
        match (o.evaluated, o.passed, o.success_fraction) {
            (true, Some(passed), Some(frac)) => println!(
                "{name}: bound {:.4}, {:.4} of {trials} trials reached {:.1} checks: {}",
                o.bound.failure_bound,
                frac,
                o.bound.threshold,
                if passed { "ok" } else { "VIOLATED" }
            ),
            _ => println!(
                "{name}: skipped, failure bound {:.4} is vacuous",
                o.bound.failure_bound
            ),
        }
        rows.push(lemma_row(name, &o));
    }
    create_out(out)?;
    write_csv(&out.join("lemma.csv"), &rows)?;
    Ok(())
}
