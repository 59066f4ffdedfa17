//! Python bindings for the `hyperdet` crate.

use std::path::PathBuf;

use hd::eval::metrics;
use hd::features::N_FEATURES;
use hd::ingest::load_labels_path;
use hd::pipeline::{run_experiment, table1, ExperimentConfig};
use hd::synth::{generate, SynthConfig};
use hd::{build_feature_matrix, LabelSet, SamplerConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hyperdet, HyperdetError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    HyperdetError::new_err(e.to_string())
}

fn from_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> PyResult<T> {
    text.map_or_else(|| Ok(T::default()), |t| serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())))
}

/// Writes `transactions.jsonl`, `labels.csv` and a manifest into `out_dir`.
/// `config` is a JSON object of generator settings; missing keys use defaults.
#[pyfunction]
#[pyo3(signature = (out_dir, config=None))]
fn synth(out_dir: PathBuf, config: Option<&str>) -> PyResult<()> {
    let cfg: SynthConfig = from_json(config)?;
    generate(&cfg).and_then(|c| c.write_dir(&out_dir)).map_err(err)
}

/// ROC AUC of `scores` against 0/1 `truth`, ties counted as one half.
#[pyfunction]
fn auc(scores: Vec<f64>, truth: Vec<u8>) -> PyResult<f64> {
    metrics::auc(&scores, &truth).map_err(err)
}

/// An ingested transaction corpus, optionally with account labels.
#[pyclass(module = "hyperdet", frozen)]
struct Dataset {
    inner: hd::Dataset,
    labels: Option<LabelSet>,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (transactions, labels=None))]
    fn new(transactions: PathBuf, labels: Option<PathBuf>) -> PyResult<Self> {
        let inner = hd::Dataset::from_path(&transactions).map_err(err)?;
        let labels = labels
            .map(|p| load_labels_path(p, &inner.accounts).map(|l| l.labels))
            .transpose()
            .map_err(err)?;
        Ok(Self { inner, labels })
    }

    #[getter]
    fn n_accounts(&self) -> usize {
        self.inner.accounts.len()
    }

    #[getter]
    fn n_records(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn n_hyperedges(&self) -> usize {
        self.inner.hypergraph.graph.m()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.homogeneous.edge_count()
    }

    /// Labeled accounts as `(address, label)` pairs.
    fn labels(&self) -> Vec<(String, u8)> {
        let ids = self.inner.accounts.ids();
        self.labels
            .iter()
            .flat_map(|l| l.labels.iter())
            .map(|(&v, &c)| (ids[v as usize].to_string(), c as u8))
            .collect()
    }

    /// Raw account features, one row of 17 per account in index order.
    fn features(&self) -> Vec<Vec<f64>> {
        let fm = build_feature_matrix(&self.inner.accounts, &self.inner.records);
        fm.values.data().chunks(N_FEATURES).map(<[f64]>::to_vec).collect()
    }

    fn feature_names(&self) -> Vec<&'static str> {
        hd::features::FEATURE_NAMES.to_vec()
    }

    /// Node and edge counts before and after sampling around the labeled accounts.
    #[pyo3(signature = (alpha=100, beta=5, seed=0))]
    fn table1<'py>(&self, py: Python<'py>, alpha: usize, beta: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let labels = self.require_labels()?;
        let sampler = SamplerConfig { alpha, beta, seed, ..SamplerConfig::default() };
        let t = table1(&self.inner, labels, &sampler).map_err(err)?;
        let d = PyDict::new(py);
        for (k, nodes, edges) in [
            ("homogeneous_ori", t.homogeneous_ori.nodes, t.homogeneous_ori.edges),
            ("homogeneous_samp", t.homogeneous_samp.nodes, t.homogeneous_samp.edges),
            ("hyper_ori", t.hyper_ori.nodes, t.hyper_ori.hyperedges),
            ("hyper_s1", t.hyper_s1.nodes, t.hyper_s1.hyperedges),
            ("hyper_s2", t.hyper_s2.nodes, t.hyper_s2.hyperedges),
            ("hyper_homo", t.hyper_homo.nodes, t.hyper_homo.edges),
        ] {
            d.set_item(k, (nodes, edges))?;
        }
        Ok(d)
    }

    /// Trains and evaluates every configured channel; returns the report as JSON.
    /// `experiment` and `sampler` are JSON objects; missing keys use defaults.
    #[pyo3(signature = (experiment=None, sampler=None))]
    fn run_experiment(&self, py: Python<'_>, experiment: Option<&str>, sampler: Option<&str>) -> PyResult<String> {
        let cfg: ExperimentConfig = from_json(experiment)?;
        let sampler: SamplerConfig = from_json(sampler)?;
        let labels = self.require_labels()?;
        let inner = &self.inner;
        let report = py.detach(|| {
            let fm = build_feature_matrix(&inner.accounts, &inner.records);
            run_experiment(inner, &fm, labels, &sampler, &cfg)
        });
        serde_json::to_string(&report.map_err(err)?).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(accounts={}, records={}, hyperedges={})",
            self.n_accounts(),
            self.n_records(),
            self.n_hyperedges()
        )
    }
}

impl Dataset {
    fn require_labels(&self) -> PyResult<&LabelSet> {
        self.labels.as_ref().ok_or_else(|| PyValueError::new_err("dataset was loaded without labels"))
    }
}

#[pymodule]
fn hyperdet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HyperdetError", m.py().get_type::<HyperdetError>())?;
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    Ok(())
}
