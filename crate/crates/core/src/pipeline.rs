//! Composition of the stages into per-channel training inputs and experiments.

use serde::{Deserialize, Serialize};

use crate::conversion::{hyper_to_homo, hypergraph_operators, normalize_adjacency, HypergraphOperators, Normalization};
use crate::eval::{
    grid_search, grid_space, repeat_runs, split_labels, EvalError, GridResult, RepeatReport, TableRow,
    DEFAULT_RATIOS,
};
use crate::features::{fit_and_normalize, FeatureError, FeatureMatrix};
use crate::ingest::Dataset;
use crate::learning::{Channel, ModelConfig, Propagator, Tensor, TrainData};
use crate::model::{Class, LabelSet, Masks};
use crate::sampling::{sample_hypergraph, sample_khop, SampleStats, SamplerConfig, SamplingError};
use crate::sparse::CsrMatrix;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Conversion(#[from] crate::conversion::ConversionError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sparse(#[from] crate::sparse::SparseError),
    #[error("labeled node {0} was lost by sampling")]
    LostTarget(u32),
    #[error("feature rows {features} do not match {nodes} dataset nodes")]
    FeatureRows { features: usize, nodes: usize },
}

/// Propagation operator of one channel.
#[derive(Debug, Clone)]
pub enum Operator {
    Adjacency(CsrMatrix),
    Hyper(HypergraphOperators),
}

impl Operator {
    pub fn as_propagator(&self) -> &dyn Propagator {
        match self {
            Operator::Adjacency(a) => a,
            Operator::Hyper(h) => h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSize {
    pub nodes: usize,
    pub edges: usize,
}

/// A channel's graph restricted to the sampled nodes, ready for training.
#[derive(Debug, Clone)]
pub struct ChannelInput {
    pub channel: Channel,
    /// Global node id of each local row.
    pub node_map: Vec<u32>,
    pub operator: Operator,
    /// Raw (unnormalized) features of the local rows.
    pub raw_features: FeatureMatrix,
    pub labels: Vec<Option<Class>>,
    pub size: GraphSize,
}

/// Samples around every labeled node and builds the channel's operator.
pub fn channel_input(
    dataset: &Dataset,
    features: &FeatureMatrix,
    labels: &LabelSet,
    sampler: &SamplerConfig,
    channel: Channel,
) -> Result<ChannelInput, PipelineError> {
    if features.n() != dataset.homogeneous.n() {
        return Err(PipelineError::FeatureRows {
            features: features.n(),
            nodes: dataset.homogeneous.n(),
        });
    }
    let targets = labels.nodes();
    let (node_map, operator, size) = match channel {
        Channel::Homogeneous => {
            let s = sample_khop(&dataset.homogeneous, &targets, sampler)?;
            let n = s.graph.n();
            let a = CsrMatrix::from_triplets(n, n, s.graph.binary_triplets())?;
            let op = normalize_adjacency(&a, Normalization::Sym)?;
            let size = GraphSize { nodes: n, edges: s.graph.edge_count() };
            (s.node_map, Operator::Adjacency(op), size)
        }
        Channel::Hyper | Channel::HyperHomo => {
            let s = sample_hypergraph(&dataset.hypergraph.graph, &targets, sampler)?.sampled;
            if channel == Channel::Hyper {
                let size = GraphSize { nodes: s.graph.n(), edges: s.graph.m() };
                (s.node_map, Operator::Hyper(hypergraph_operators(&s.graph)?), size)
            } else {
                let ah = hyper_to_homo(&s.graph);
                let size = GraphSize { nodes: ah.n(), edges: ah.edge_count() };
                let op = normalize_adjacency(&ah.to_csr(false), Normalization::Sym)?;
                (s.node_map, Operator::Adjacency(op), size)
            }
        }
    };
    let local = |g: u32| node_map.binary_search(&g).ok();
    let mut local_labels = vec![None; node_map.len()];
    for (&g, &c) in &labels.labels {
        let k = local(g).ok_or(PipelineError::LostTarget(g))?;
        local_labels[k] = Some(c);
    }
    let rows: Vec<usize> = node_map.iter().map(|&g| g as usize).collect();
    let raw_features = FeatureMatrix {
        values: features.values.gather_rows(&rows),
        norm: None,
    };
    Ok(ChannelInput {
        channel,
        node_map,
        operator,
        raw_features,
        labels: local_labels,
        size,
    })
}

/// Local masks and features normalized on the local training rows.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub masks: Masks,
    pub features: Tensor,
}

impl ChannelInput {
    pub fn local_masks(&self, global: &Masks) -> Masks {
        global.remap(|g| self.node_map.binary_search(&g).ok().map(|k| k as u32))
    }

    pub fn prepare(&self, global: &Masks) -> Result<PreparedSplit, PipelineError> {
        let masks = self.local_masks(global);
        let train: Vec<usize> = masks.train.iter().map(|&r| r as usize).collect();
        let features = fit_and_normalize(&self.raw_features, &train)?.values;
        Ok(PreparedSplit { masks, features })
    }

    pub fn data<'a>(&'a self, split: &'a PreparedSplit) -> TrainData<'a> {
        TrainData {
            features: &split.features,
            propagator: self.operator.as_propagator(),
            labels: &self.labels,
            masks: &split.masks,
        }
    }
}

/// Node and (hyper)edge counts of the original and sampled graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table1 {
    pub homogeneous_ori: GraphSize,
    pub homogeneous_samp: GraphSize,
    pub hyper_ori: SampleStats,
    pub hyper_s1: SampleStats,
    pub hyper_s2: SampleStats,
    pub hyper_homo: GraphSize,
}

pub fn table1(dataset: &Dataset, labels: &LabelSet, sampler: &SamplerConfig) -> Result<Table1, PipelineError> {
    let targets = labels.nodes();
    let hg = &dataset.hypergraph.graph;
    let two = sample_hypergraph(hg, &targets, sampler)?;
    let khop = sample_khop(&dataset.homogeneous, &targets, sampler)?;
    let ah = hyper_to_homo(&two.sampled.graph);
    Ok(Table1 {
        homogeneous_ori: GraphSize {
            nodes: dataset.homogeneous.n(),
            edges: dataset.homogeneous.edge_count(),
        },
        homogeneous_samp: GraphSize {
            nodes: khop.graph.n(),
            edges: khop.graph.edge_count(),
        },
        hyper_ori: SampleStats { nodes: hg.n(), hyperedges: hg.m() },
        hyper_s1: two.step1,
        hyper_s2: SampleStats {
            nodes: two.sampled.graph.n(),
            hyperedges: two.sampled.graph.m(),
        },
        hyper_homo: GraphSize { nodes: ah.n(), edges: ah.edge_count() },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub channels: Vec<Channel>,
    /// Base model settings; the grid overrides batch-norm, width and learning rate.
    pub model: ModelConfig,
    pub grid: bool,
    pub repeats: usize,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    /// Redraw the split for every repetition instead of reseeding training only.
    pub reshuffle: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channels: Channel::ALL.to_vec(),
            model: ModelConfig::default(),
            grid: true,
            repeats: 5,
            seed: 0,
            split_ratios: DEFAULT_RATIOS,
            reshuffle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: Channel,
    pub size: GraphSize,
    pub grid: Option<GridResult>,
    pub repeat: RepeatReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub masks: Masks,
    pub channels: Vec<ChannelReport>,
}

impl ExperimentReport {
    pub fn table_rows(&self) -> Vec<TableRow<'_>> {
        self.channels
            .iter()
            .map(|c| TableRow {
                graph: graph_name(c.channel),
                method: method_name(c.channel),
                summary: &c.repeat.summary,
            })
            .collect()
    }
}

pub fn graph_name(c: Channel) -> &'static str {
    match c {
        Channel::Homogeneous => "Homogeneous",
        Channel::Hyper => "Hypergraph",
        Channel::HyperHomo => "Hyper-homo",
    }
}

pub fn method_name(c: Channel) -> &'static str {
    match c {
        Channel::Hyper => "HGNN",
        Channel::Homogeneous | Channel::HyperHomo => "GCN",
    }
}

/// Splits the labels, then per channel: optional grid search over
/// `repeats` seeds and a repeated evaluation of the chosen configuration.
pub fn run_experiment(
    dataset: &Dataset,
    features: &FeatureMatrix,
    labels: &LabelSet,
    sampler: &SamplerConfig,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport, PipelineError> {
    let masks = split_labels(labels, cfg.split_ratios, cfg.seed)?;
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut reports = Vec::new();
    for &channel in &cfg.channels {
        let input = channel_input(dataset, features, labels, sampler, channel)?;
        let split = input.prepare(&masks)?;
        let data = input.data(&split);
        let base = ModelConfig { channel, ..cfg.model.clone() };
        let grid = if cfg.grid {
            Some(grid_search(&grid_space(&base, channel), &data, &seeds)?)
        } else {
            None
        };
        let chosen = grid.as_ref().map_or(base, |g| g.best.clone());
        let repeat = match (&grid, cfg.reshuffle) {
            (Some(g), false) => RepeatReport::from_runs(
                ModelConfig { seed: cfg.seed, ..chosen },
                g.leaderboard[0].runs.clone(),
            )?,
            (_, false) => repeat_runs(&chosen, &vec![data; cfg.repeats], cfg.seed)?,
            (_, true) => {
                let splits = seeds
                    .iter()
                    .map(|&s| input.prepare(&split_labels(labels, cfg.split_ratios, s)?))
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                let datas: Vec<TrainData<'_>> = splits.iter().map(|s| input.data(s)).collect();
                repeat_runs(&chosen, &datas, cfg.seed)?
            }
        };
        log::info!(
            "{channel}: {} nodes, {} edges, chosen {}",
            input.size.nodes,
            input.size.edges,
            repeat.config.label()
        );
        reports.push(ChannelReport {
            channel,
            size: input.size,
            grid,
            repeat,
        });
    }
    Ok(ExperimentReport {
        masks,
        channels: reports,
    })
}
