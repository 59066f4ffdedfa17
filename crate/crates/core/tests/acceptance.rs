//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --release --test acceptance -- 1 7`.

mod common;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hyperdet::eval::metrics::twice_u;
use hyperdet::eval::experiment::TABLE_HEADER;
use hyperdet::eval::{auc, confusion_metrics, write_table, TableRow};
use hyperdet::learning::{classify, cross_entropy, gnn_forward, hgnn_forward, Mode, Model, Parameters};
use hyperdet::pipeline::{run_experiment, table1, ExperimentConfig, ExperimentReport};
use hyperdet::sampling::{filter_hyperedges, refine_edge};
use hyperdet::synth::{generate, SynthConfig};
use hyperdet::{
    build_feature_matrix, extract_account_features, hyper_to_homo, hypergraph_operators, normalize_adjacency,
    sample_hypergraph, sample_khop, AccountId, Channel, Class, Dataset, Hypergraph, ModelConfig, Normalization,
    SamplerConfig, Tensor, TransactionRecord, TxHash,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// 1 -----------------------------------------------------------------------

fn conversion_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let m = rng.random_range(0..=30);
        let hg = random_hypergraph(&mut rng, n, m, n);
        if hyper_to_homo(&hg).to_dense() != brute_co_membership(&hg) {
            mismatches += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        mismatches == 0 && took < Duration::from_secs(10),
        format!("1000 hypergraphs (n<=50, m<=30), {mismatches} mismatches, {}", secs(took)),
    )
}

// 2 -----------------------------------------------------------------------

fn sampling_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(2..=40);
        let m = rng.random_range(0..=60);
        let hg = random_hypergraph(&mut rng, n, m, 12);
        let t = rng.random_range(0..n as u32);
        let cfg = SamplerConfig {
            alpha: rng.random_range(1..=10),
            beta: rng.random_range(2..=8),
            seed: rng.random(),
            ..Default::default()
        };
        let retained = filter_hyperedges(&hg, &[t], &cfg).expect("valid case");
        let kept = &retained[&t];
        let incident = hg.incident(t);
        let distinct = kept.windows(2).all(|w| w[0] < w[1]);
        if kept.len() != incident.len().min(cfg.alpha) || !distinct || kept.iter().any(|e| !incident.contains(e)) {
            violations += 1;
        }
        for &e in kept {
            let nodes = refine_edge(&hg, t, e, &cfg).expect("incident edge");
            let all = hg.edge(e);
            let distinct = nodes.windows(2).all(|w| w[0] < w[1]);
            if nodes.len() != all.len().min(cfg.beta)
                || !nodes.contains(&t)
                || !distinct
                || nodes.iter().any(|v| !all.contains(v))
            {
                violations += 1;
            }
        }
        let sample = sample_hypergraph(&hg, &[t], &cfg).expect("valid case");
        if sample.sampled.local_node(t).is_none() {
            violations += 1;
        }
    }

    let (ds, labels) = synth_dataset(&SynthConfig {
        n_normal: 300,
        n_ponzi: 40,
        n_background: 600,
        seed: 2,
        ..Default::default()
    });
    let targets = labels.nodes();
    let sampler = SamplerConfig { alpha: 20, beta: 3, k1: 10, k2: 10, seed: 7 };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        pool.install(|| {
            let two = sample_hypergraph(&ds.hypergraph.graph, &targets, &sampler).expect("sample");
            let khop = sample_khop(&ds.homogeneous, &targets, &sampler).expect("sample");
            (two.step1, two.sampled, khop)
        })
    };
    let identical = run(2) == run(8);
    outcome(
        violations == 0 && identical,
        format!(
            "1000 cases, {violations} violations; 2 vs 8 threads {}",
            if identical { "bit-identical" } else { "DIFFER" }
        ),
    )
}

// 3 -----------------------------------------------------------------------

fn sampling_uniformity() -> Outcome {
    const EDGES: usize = 150;
    const TRIALS: usize = 10_000;
    let hg = Hypergraph::from_edges(EDGES + 1, (1..=EDGES as u32).map(|v| vec![0, v])).expect("star");
    let mut counts = vec![0usize; EDGES];
    for trial in 0..TRIALS {
        let cfg = SamplerConfig { alpha: 100, seed: trial as u64, ..Default::default() };
        for &e in &filter_hyperedges(&hg, &[0], &cfg).expect("valid")[&0] {
            counts[e as usize] += 1;
        }
    }
    let p = 100.0 / EDGES as f64;
    let mean = TRIALS as f64 * p;
    let sd = (TRIALS as f64 * p * (1.0 - p)).sqrt();
    let worst = counts.iter().map(|&c| (c as f64 - mean).abs() / sd).fold(0.0, f64::max);
    let outside = counts.iter().filter(|&&c| (c as f64 - mean).abs() > 3.0 * sd).count();
    outcome(
        outside == 0,
        format!("{TRIALS} trials, {outside} of {EDGES} hyperedges outside 3 sd, worst {worst:.2} sd"),
    )
}

// 4 -----------------------------------------------------------------------

fn account(b: u8) -> AccountId {
    AccountId([b; 20])
}

fn record(from: u8, to: u8, ether: u128, ts: u64, hash: u8) -> TransactionRecord {
    TransactionRecord {
        tx_hash: TxHash([hash; 32]),
        from: account(from),
        to: account(to),
        value: ether * 1_000_000_000_000_000_000,
        timestamp: ts,
        is_trace: false,
    }
}

fn feature_oracle() -> Outcome {
    // Account 1 receives 10 at t=100 and 20 at t=400; 2 -> 3 does not involve it.
    let fixture = [record(2, 1, 10, 100, 1), record(3, 1, 20, 400, 2), record(2, 3, 5, 250, 3)];
    let mut expect = [0.0; 17];
    expect[..5].copy_from_slice(&[30.0, 15.0, 20.0, 10.0, 5.0]);
    expect[10] = 10.0;
    expect[12] = 300.0;
    expect[14] = 300.0;
    expect[16] = 2.0;
    let got = extract_account_features(&account(1), &fixture);
    let err = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let corpus = generate(&SynthConfig {
        n_normal: 40,
        n_ponzi: 6,
        n_background: 80,
        n_services: 4,
        seed: 4,
        ..Default::default()
    })
    .expect("valid config");
    let mut records = corpus.records.clone();
    records.extend_from_slice(&fixture);
    let index = hyperdet::model::intern_accounts(&records).expect("valid records");
    let base = build_feature_matrix(&index, &records).values;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut changed = 0;
    for _ in 0..100 {
        records.shuffle(&mut rng);
        if build_feature_matrix(&index, &records).values != base {
            changed += 1;
        }
    }
    outcome(
        err < 1e-9 && changed == 0,
        format!(
            "fixture max abs error {err:.1e}; {changed} of 100 shuffles changed the {}x17 matrix",
            index.len()
        ),
    )
}

// 5 -----------------------------------------------------------------------

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hg = Hypergraph::from_edges(
        10,
        vec![vec![0, 1, 2], vec![1, 3], vec![2, 3, 4, 5], vec![5, 6], vec![6, 7, 8], vec![0, 8]],
    )
    .expect("fixture");
    // node 9 belongs to no hyperedge
    let ops = hypergraph_operators(&hg).expect("operators");
    let adj = normalize_adjacency(&hyper_to_homo(&hg).to_csr(false), Normalization::Sym).expect("adjacency");
    let x = random_features(&mut rng, 10, 17);
    let labels: Vec<Option<Class>> = (0..10)
        .map(|i| Some(if i % 3 == 0 { Class::Ponzi } else { Class::Normal }))
        .collect();
    let mask = [0, 1, 2, 3, 5, 6, 8, 9];
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for (channel, prop) in [
        (Channel::Hyper, &ops as &dyn hyperdet::learning::Propagator),
        (Channel::HyperHomo, &adj as &dyn hyperdet::learning::Propagator),
    ] {
        for batch_norm in [false, true] {
            let cfg = ModelConfig {
                channel,
                hidden_dim: 6,
                batch_norm,
                seed: 50,
                ..Default::default()
            };
            let model = Model::new(cfg, 17).expect("valid config");
            let (rel, name, n) = gradient_check(&model, &x, prop, &labels, &mask, 9, 1e-5, 1e-8);
            checked += n;
            if rel > worst.0 {
                worst = (rel, format!("{channel}{} {name}", if batch_norm { "+bn" } else { "" }));
            }
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!("{checked} entries, worst relative error {:.2e} at {}", worst.0, worst.1),
    )
}

// 6 -----------------------------------------------------------------------

fn channel_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(2..=30);
        let m = rng.random_range(0..=40);
        let hg = random_hypergraph(&mut rng, n, m, 2);
        let ops = hypergraph_operators(&hg).expect("operators");
        let oracle = half_sym_oracle(&hg);
        let cfg = ModelConfig {
            hidden_dim: 8,
            batch_norm: case % 2 == 1,
            seed: case,
            ..Default::default()
        };
        let params = Parameters::init(&cfg, 17);
        let x = random_features(&mut rng, n, 17);
        for mode in [Mode::Eval, Mode::Train { dropout_seed: case }] {
            let zh = hgnn_forward(&x, &ops, &params, &cfg, mode).expect("forward");
            let zg = gnn_forward(&x, &oracle, &params, &cfg, mode).expect("forward");
            worst = worst.max(zh.max_abs_diff(&zg));
        }
    }
    outcome(worst <= 1e-12, format!("100 2-uniform hypergraphs, max abs difference {worst:.2e}"))
}

// 7 -----------------------------------------------------------------------

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut auc_mismatch = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        truth[0] = 0;
        truth[1] = 1;
        let scores: Vec<f64> = if case % 2 == 0 {
            (0..n).map(|_| rng.random::<f64>()).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()
        };
        let brute = brute_twice_u(&scores, &truth);
        let pos = truth.iter().filter(|&&t| t == 1).count() as f64;
        let neg = n as f64 - pos;
        let (u2, _, _) = twice_u(&scores, &truth).expect("two classes");
        if u2 != brute || auc(&scores, &truth).expect("two classes") != brute as f64 / (2.0 * pos * neg) {
            auc_mismatch += 1;
        }
    }

    let labels = vec![Some(Class::Normal), Some(Class::Ponzi), Some(Class::Ponzi), Some(Class::Normal)];
    let uniform = classify(&Tensor::zeros(4, 3), &Tensor::full(3, 2, 0.7), &Tensor::zeros(1, 2)).expect("shapes");
    let ce = cross_entropy(&uniform, &labels, &[0, 1, 2, 3]).expect("labeled mask");
    let ce_err = (ce - std::f64::consts::LN_2).abs();

    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (p, t, k) in [(1u8, 1u8, 3), (1, 0, 1), (0, 1, 2), (0, 0, 4)] {
        predicted.extend(std::iter::repeat_n(p, k));
        truth.extend(std::iter::repeat_n(t, k));
    }
    let m = confusion_metrics(&predicted, &truth).expect("fixture");
    let fixture_ok = m.precision == 0.75 && m.recall == 0.6;
    outcome(
        auc_mismatch == 0 && ce_err < 1e-12 && fixture_ok,
        format!(
            "AUC {auc_mismatch} of 1000 differ from brute force; CE-ln2 {ce_err:.1e}; fixture P {} R {}",
            m.precision, m.recall
        ),
    )
}

// 8 / 9 -------------------------------------------------------------------

/// Everything the end-to-end criteria share: the experiment on the default
/// corpus, timed from generation for the two detection channels.
struct EndToEnd {
    report: ExperimentReport,
    detection_time: Duration,
}

fn end_to_end() -> EndToEnd {
    let start = Instant::now();
    let (ds, labels) = synth_dataset(&SynthConfig::default());
    let features = build_feature_matrix(&ds.accounts, &ds.records);
    let sampler = SamplerConfig::default();
    let cfg = ExperimentConfig {
        channels: vec![Channel::Hyper, Channel::HyperHomo],
        ..Default::default()
    };
    let mut report = run_experiment(&ds, &features, &labels, &sampler, &cfg).expect("experiment");
    let detection_time = start.elapsed();
    let homogeneous = ExperimentConfig {
        channels: vec![Channel::Homogeneous],
        ..cfg
    };
    let extra = run_experiment(&ds, &features, &labels, &sampler, &homogeneous).expect("experiment");
    report.channels.splice(0..0, extra.channels);
    EndToEnd { report, detection_time }
}

fn end_to_end_learning(e2e: &EndToEnd) -> Outcome {
    let mut pass = e2e.detection_time < Duration::from_secs(15 * 60);
    let mut parts = Vec::new();
    for ch in e2e.report.channels.iter().filter(|c| c.channel != Channel::Homogeneous) {
        let tests: Vec<_> = ch.repeat.runs.iter().filter_map(|r| r.test.as_ref()).collect();
        let min_auc = tests.iter().filter_map(|t| t.auc).fold(f64::INFINITY, f64::min);
        let min_recall = tests.iter().map(|t| t.recall).fold(f64::INFINITY, f64::min);
        pass &= tests.len() == 5 && min_auc >= 0.90 && min_recall >= 0.60;
        parts.push(format!(
            "{} [{}] auc min {min_auc:.3} mean {:.3}, recall min {min_recall:.3} mean {:.3}",
            ch.channel,
            ch.repeat.config.label(),
            ch.repeat.summary.auc.mean,
            ch.repeat.summary.recall.mean
        ));
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    parts.push(format!("{} on {cores} core(s)", secs(e2e.detection_time)));
    outcome(pass, parts.join("; "))
}

fn experiment_table(e2e: &EndToEnd) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("table.csv");
    let rows: Vec<TableRow<'_>> = e2e.report.table_rows();
    write_table(std::fs::File::create(&path).expect("create"), &rows).expect("write");
    let mut rdr = csv::Reader::from_path(&path).expect("read back");
    let header: Vec<String> = rdr.headers().expect("header").iter().map(str::to_string).collect();
    let body: BTreeMap<String, Vec<String>> = rdr
        .records()
        .map(|r| {
            let r = r.expect("row");
            (r[0].to_string(), r.iter().skip(2).map(str::to_string).collect())
        })
        .collect();
    let cell_ok = |c: &str| {
        let Some((mean, sd)) = c.split_once(" ± ") else { return false };
        let two_decimals = |s: &str| {
            s.parse::<f64>().is_ok_and(f64::is_finite) && s.split_once('.').is_some_and(|(_, d)| d.len() == 2)
        };
        two_decimals(mean) && two_decimals(sd)
    };
    let populated = body
        .get("Hyper-homo")
        .is_some_and(|cells| cells.len() == TABLE_HEADER.len() - 2 && cells.iter().all(|c| cell_ok(c)));
    let all_rows = ["Homogeneous", "Hypergraph", "Hyper-homo"].iter().all(|g| body.contains_key(*g));
    let shown = body
        .iter()
        .map(|(g, cells)| format!("{g}: {}", cells.join(", ")))
        .collect::<Vec<_>>()
        .join(" | ");
    outcome(
        header.len() == TABLE_HEADER.len() && all_rows && populated,
        format!("{} columns; {shown}", header.len()),
    )
}

// 10 ----------------------------------------------------------------------

fn read_status_kib(key: &str) -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with(key))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn scale_smoke() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = generate(&SynthConfig {
        total_records: Some(1_000_000),
        ..Default::default()
    })
    .expect("valid config");
    corpus.write_dir(dir.path()).expect("write corpus");
    drop(corpus);
    // Resets the peak-RSS counter so it covers ingestion only.
    let reset = std::fs::write("/proc/self/clear_refs", "5").is_ok();
    let start = Instant::now();
    let ds = Dataset::from_path(dir.path().join(hyperdet::synth::TRANSACTIONS_FILE)).expect("ingest");
    let took = start.elapsed();
    let peak_kib = read_status_kib("VmHWM:");
    let labels = hyperdet::ingest::load_labels_path(dir.path().join(hyperdet::synth::LABELS_FILE), &ds.accounts)
        .expect("labels")
        .labels;
    let t1 = table1(&ds, &labels, &SamplerConfig::default()).expect("statistics");
    let (o, s1, s2) = (t1.hyper_ori, t1.hyper_s1, t1.hyper_s2);
    let nodes_ok = o.nodes > s1.nodes && s1.nodes > s2.nodes;
    let edges_ok = o.hyperedges > s1.hyperedges && s1.hyperedges >= s2.hyperedges;
    let mem_ok = peak_kib.is_some_and(|k| (k as f64) * 1024.0 < 4e9);
    outcome(
        ds.report.records_read == 1_000_000 && took < Duration::from_secs(60) && mem_ok && nodes_ok && edges_ok,
        format!(
            "{} records in {}, peak RSS {} MiB{}; nodes {} > {} > {}, hyperedges {} > {} >= {}",
            ds.report.records_read,
            secs(took),
            peak_kib.map_or("?".into(), |k| (k / 1024).to_string()),
            if reset { "" } else { " (whole process)" },
            o.nodes,
            s1.nodes,
            s2.nodes,
            o.hyperedges,
            s1.hyperedges,
            s2.hyperedges
        ),
    )
}

// -------------------------------------------------------------------------

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "[{}] {id:>2} {name}: {detail} ({})",
        if pass { "PASS" } else { "FAIL" },
        secs(start.elapsed())
    );
    pass
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut failed = Vec::new();
    let mut check = |id: u32, name: &str, f: &dyn Fn() -> Outcome| {
        if on(id) && !run(id, name, f) {
            failed.push(id);
        }
    };
    check(1, "conversion oracle", &conversion_oracle);
    check(2, "sampling exactness", &sampling_exactness);
    check(3, "sampling uniformity", &sampling_uniformity);
    check(4, "feature oracle", &feature_oracle);
    check(5, "gradient checks", &gradient_checks);
    check(6, "channel equivalence", &channel_equivalence);
    check(7, "metric oracles", &metric_oracles);
    if on(8) || on(9) {
        let e2e = catch_unwind(end_to_end);
        let e2e = e2e.as_ref().map_err(|_| ());
        check(8, "end-to-end learning", &|| match e2e {
            Ok(e) => end_to_end_learning(e),
            Err(()) => outcome(false, "experiment panicked"),
        });
        check(9, "experiment table", &|| match e2e {
            Ok(e) => experiment_table(e),
            Err(()) => outcome(false, "experiment panicked"),
        });
    }
    check(10, "scale smoke", &scale_smoke);
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {failed:?}");
        ExitCode::FAILURE
    }
}
