use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hyperdet::eval::{split_labels, write_run_records, write_table, RunRecord};
use hyperdet::features::{build_feature_matrix, FeatureMatrix};
use hyperdet::ingest::{load_labels_path, Dataset};
use hyperdet::learning::checkpoint::write_checkpoint;
use hyperdet::learning::train::{evaluate_run, train};
use hyperdet::pipeline::{channel_input, run_experiment, table1, ExperimentReport};
use hyperdet::sampling::{sample_hypergraph, sample_khop, HypergraphFile};
use hyperdet::synth::{generate, LABELS_FILE, TRANSACTIONS_FILE};
use hyperdet::{hyper_to_homo, Channel, LabelSet, ModelConfig};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::StageError;

pub const CONFIG_ECHO: &str = "resolved_config.toml";

fn prepare_out(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_ECHO), cfg.to_toml())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn require(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| StageError::MissingInput(format!("no {what} path given")))?;
    if !p.is_file() {
        return Err(StageError::MissingInput(format!("{what} file {} not found", p.display())).into());
    }
    Ok(p.clone())
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = require(cfg.paths.transactions.as_ref(), "transactions")?;
    let ds = Dataset::from_path(&path).with_context(|| format!("ingesting {}", path.display()))?;
    log::info!(
        "ingested {} records: {} accounts, {} edges, {} hyperedges",
        ds.records.len(),
        ds.report.n_accounts,
        ds.report.n_edges,
        ds.report.n_hyperedges
    );
    Ok(ds)
}

pub fn load_labels(cfg: &PipelineConfig, ds: &Dataset) -> Result<LabelSet> {
    let path = require(cfg.paths.labels.as_ref(), "labels")?;
    let loaded = load_labels_path(&path, &ds.accounts).with_context(|| format!("reading {}", path.display()))?;
    if !loaded.rejects.is_empty() {
        log::warn!("{} label rows rejected", loaded.rejects.len());
    }
    Ok(loaded.labels)
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    let corpus = generate(&cfg.synth)?;
    corpus.write_dir(out)?;
    println!(
        "synth: {} records, {} hashes, {} accounts ({} ponzi, {} normal) -> {}",
        corpus.manifest.n_records,
        corpus.manifest.n_hashes,
        corpus.manifest.n_accounts,
        corpus.manifest.n_ponzi,
        corpus.manifest.n_normal,
        out.display()
    );
    Ok(())
}

pub fn ingest(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    prepare_out(out, cfg)?;
    write_json(&out.join("ingest_report.json"), &ds.report)?;
    write_json(&out.join("rejects.json"), &ds.rejects)?;
    let mut w = csv_writer(&out.join("accounts.csv"))?;
    w.write_record(["index", "address"])?;
    for (i, a) in ds.accounts.ids().iter().enumerate() {
        w.write_record([i.to_string(), a.to_string()])?;
    }
    w.flush()?;
    let mut w = csv_writer(&out.join("homogeneous_edges.csv"))?;
    w.write_record(["i", "j", "count", "total_value"])?;
    for (i, j, s) in ds.homogeneous.edges() {
        w.write_record([i.to_string(), j.to_string(), s.count.to_string(), s.total_value.to_string()])?;
    }
    w.flush()?;
    HypergraphFile::from_hypergraph(&ds.hypergraph.graph).write(File::create(out.join("hypergraph.json"))?)?;
    let r = &ds.report;
    println!(
        "ingest: read {} rejected {} duplicates {} | accounts {} edges {} hyperedges {} (dropped {} single-account hashes)",
        r.records_read,
        r.records_rejected,
        r.duplicates_removed,
        r.n_accounts,
        r.n_edges,
        r.n_hyperedges,
        r.hyperedges_dropped_singleton
    );
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn sample(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let labels = load_labels(cfg, &ds)?;
    prepare_out(out, cfg)?;
    let targets = labels.nodes();
    let two = sample_hypergraph(&ds.hypergraph.graph, &targets, &cfg.sampler)?;
    HypergraphFile::from_sampled(&two.sampled, &cfg.sampler).write(File::create(out.join("sampled_hypergraph.json"))?)?;
    let khop = sample_khop(&ds.homogeneous, &targets, &cfg.sampler)?;
    write_json(
        &out.join("sampled_homogeneous.json"),
        &serde_json::json!({
            "seed": cfg.sampler.seed,
            "k1": cfg.sampler.k1,
            "k2": cfg.sampler.k2,
            "node_map": khop.node_map,
            "edges": khop.graph.binary_triplets().iter().filter(|t| t.0 < t.1).map(|t| (t.0, t.1)).collect::<Vec<_>>(),
        }),
    )?;
    let t1 = table1(&ds, &labels, &cfg.sampler)?;
    write_json(&out.join("table1.json"), &t1)?;
    print_table1(&t1);
    Ok(())
}

pub fn print_table1(t: &hyperdet::pipeline::Table1) {
    println!("{:<16}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}", "", "homo-ori", "homo-samp", "hyper-ori", "samp-s1", "samp-s2", "hyper-homo");
    println!(
        "{:<16}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}",
        "nodes",
        t.homogeneous_ori.nodes,
        t.homogeneous_samp.nodes,
        t.hyper_ori.nodes,
        t.hyper_s1.nodes,
        t.hyper_s2.nodes,
        t.hyper_homo.nodes
    );
    println!(
        "{:<16}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}",
        "edges/hyperedges",
        t.homogeneous_ori.edges,
        t.homogeneous_samp.edges,
        t.hyper_ori.hyperedges,
        t.hyper_s1.hyperedges,
        t.hyper_s2.hyperedges,
        t.hyper_homo.edges
    );
}

pub fn featurize(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    prepare_out(out, cfg)?;
    let fm = build_feature_matrix(&ds.accounts, &ds.records);
    fm.write_csv(&ds.accounts, File::create(out.join("features.csv"))?)?;
    fm.write_cache(BufWriter::new(File::create(out.join("features.bin"))?))?;
    println!("featurize: {} x {} -> {}", fm.n(), fm.values.cols(), out.display());
    Ok(())
}

/// Clique-expands a sampled hypergraph (from `sample`) or, failing that, the
/// full transaction hypergraph.
pub fn convert(cfg: &PipelineConfig, input: Option<&Path>, out: &Path) -> Result<()> {
    let hg = match input {
        Some(p) => {
            let f = File::open(p).map_err(|e| StageError::MissingInput(format!("{}: {e}", p.display())))?;
            HypergraphFile::read(BufReader::new(f))?.to_hypergraph()?
        }
        None => load_dataset(cfg)?.hypergraph.graph,
    };
    prepare_out(out, cfg)?;
    let ah = hyper_to_homo(&hg);
    ah.to_csr(false).write_triplets(BufWriter::new(File::create(out.join("hyper_homo.triplets"))?))?;
    write_json(
        &out.join("hyper_homo_stats.json"),
        &serde_json::json!({ "nodes": ah.n(), "edges": ah.edge_count(), "nnz": ah.nnz() }),
    )?;
    println!("convert: {} nodes, {} hyper-homo edges", ah.n(), ah.edge_count());
    Ok(())
}

fn features_for(ds: &Dataset, feature_cache: Option<&Path>) -> Result<FeatureMatrix> {
    if let Some(p) = feature_cache {
        let f = File::open(p).map_err(|e| StageError::MissingInput(format!("{}: {e}", p.display())))?;
        let fm = FeatureMatrix::read_cache(BufReader::new(f))?;
        if fm.n() == ds.accounts.len() {
            return Ok(fm);
        }
        log::warn!("feature cache {} does not match the dataset; rebuilding", p.display());
    }
    Ok(build_feature_matrix(&ds.accounts, &ds.records))
}

/// Trains one configuration per selected channel with the base model settings.
pub fn train_stage(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let labels = load_labels(cfg, &ds)?;
    let fm = features_for(&ds, None)?;
    prepare_out(out, cfg)?;
    let exp = &cfg.experiment;
    let masks = split_labels(&labels, exp.split_ratios, exp.seed)?;
    for &channel in &exp.channels {
        let input = channel_input(&ds, &fm, &labels, &cfg.sampler, channel)?;
        let split = input.prepare(&masks)?;
        let data = input.data(&split);
        let mcfg = ModelConfig {
            channel,
            seed: exp.seed,
            ..exp.model.clone()
        };
        let run = train(&data, &mcfg)?;
        let val = evaluate_run(&run, &data, &split.masks.val)?;
        let test = evaluate_run(&run, &data, &split.masks.test)?;
        let dir = out.join(channel.as_str());
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("history.json"), &run.history)?;
        write_checkpoint(&run.best.params, BufWriter::new(File::create(dir.join("checkpoint.bin"))?))?;
        let record = RunRecord {
            config: mcfg.clone(),
            seed: mcfg.seed,
            best_epoch: run.best.epoch,
            val: Some((&val).into()),
            test: Some((&test).into()),
            error: None,
        };
        write_json(&dir.join("metrics.json"), &record)?;
        println!(
            "train {}: best epoch {} | val macro-F1 {:.4} | test P {:.4} R {:.4} F1 {:.4} AUC {}",
            mcfg.label(),
            run.best.epoch,
            val.metrics.macro_f1,
            test.metrics.precision,
            test.metrics.recall,
            test.metrics.binary_f1,
            test.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const TABLE_FILE: &str = "table.csv";

pub fn evaluate(cfg: &PipelineConfig, feature_cache: Option<&Path>, out: &Path) -> Result<ExperimentReport> {
    let ds = load_dataset(cfg)?;
    let labels = load_labels(cfg, &ds)?;
    let fm = features_for(&ds, feature_cache)?;
    prepare_out(out, cfg)?;
    let report = run_experiment(&ds, &fm, &labels, &cfg.sampler, &cfg.experiment)?;
    let results = out.join("results");
    for ch in &report.channels {
        let runs: Vec<RunRecord> = match &ch.grid {
            Some(g) => g.leaderboard.iter().flat_map(|e| e.runs.iter().cloned()).collect(),
            None => ch.repeat.runs.clone(),
        };
        write_run_records(&results, &runs)?;
        if let Some(g) = &ch.grid {
            write_json(&out.join(format!("leaderboard-{}.json", ch.channel)), &g.leaderboard)?;
        }
    }
    write_json(&out.join(EXPERIMENT_FILE), &report)?;
    write_table(File::create(out.join(TABLE_FILE))?, &report.table_rows())?;
    Ok(report)
}

pub fn report(input: &Path, out: &Path) -> Result<()> {
    let f = File::open(input).map_err(|e| StageError::MissingInput(format!("{}: {e}", input.display())))?;
    let exp: ExperimentReport = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| StageError::Config(format!("{} is not an experiment report: {e}", input.display())))?;
    fs::create_dir_all(out)?;
    write_table(File::create(out.join(TABLE_FILE))?, &exp.table_rows())?;
    print_results(&exp);
    Ok(())
}

pub fn print_results(exp: &ExperimentReport) {
    println!(
        "{:<12} {:<6} {:>16} {:>16} {:>16} {:>16} {:>16}",
        "Graph", "Method", "Precision", "Recall", "Binary F1", "Macro F1", "AUC"
    );
    for row in exp.table_rows() {
        let c = row.summary.cells();
        println!(
            "{:<12} {:<6} {:>16} {:>16} {:>16} {:>16} {:>16}",
            row.graph, row.method, c[0], c[1], c[2], c[3], c[4]
        );
    }
    for ch in &exp.channels {
        println!("{}: {} nodes, {} edges, config {}", ch.channel, ch.size.nodes, ch.size.edges, ch.repeat.config.label());
    }
}

/// Every stage in order, each writing into its own subdirectory of `out`.
pub fn pipeline(cfg: &mut PipelineConfig, out: &Path) -> Result<()> {
    prepare_out(out, cfg)?;
    if cfg.paths.transactions.is_none() {
        let dir = out.join("synth");
        synth(cfg, &dir)?;
        cfg.paths.transactions = Some(dir.join(TRANSACTIONS_FILE));
        cfg.paths.labels.get_or_insert(dir.join(LABELS_FILE));
    }
    ingest(cfg, &out.join("ingest"))?;
    sample(cfg, &out.join("sample"))?;
    featurize(cfg, &out.join("features"))?;
    convert(cfg, Some(&out.join("sample").join("sampled_hypergraph.json")), &out.join("convert"))?;
    let eval_dir = out.join("evaluate");
    evaluate(cfg, Some(&out.join("features").join("features.bin")), &eval_dir)?;
    report(&eval_dir.join(EXPERIMENT_FILE), &out.join("report"))?;
    // final echo includes the generated input paths
    fs::write(out.join(CONFIG_ECHO), cfg.to_toml())?;
    Ok(())
}

pub fn channel_list(c: Option<Channel>, current: &[Channel]) -> Vec<Channel> {
    c.map_or_else(|| current.to_vec(), |c| vec![c])
}
