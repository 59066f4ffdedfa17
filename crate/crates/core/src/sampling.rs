//! Two-step hypergraph sampling (hyperedge filtering, then node refinement)
//! and the k-per-hop homogeneous neighbor sampler.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, step, target)`
//! (plus the hyperedge id for refinement), so results do not depend on thread
//! count or target order.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HomogeneousGraph, Hypergraph, ModelError};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error("target node {node} is not in the graph ({n} nodes)")]
    UnknownTarget { node: u32, n: usize },
    #[error("hyperedge {edge} does not exist or does not contain target {target}")]
    NotIncident { target: u32, edge: u32 },
    #[error("sampled hypergraph file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Maximum hyperedges kept per target.
    pub alpha: usize,
    /// Maximum nodes kept per hyperedge, target included.
    pub beta: usize,
    /// First-order neighbor cap of the homogeneous sampler.
    pub k1: usize,
    /// Second-order neighbor cap of the homogeneous sampler.
    pub k2: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 100,
            beta: 5,
            k1: 70,
            k2: 70,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.alpha < 1 {
            return Err(SamplingError::Config(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if self.beta < 2 {
            return Err(SamplingError::Config(format!("beta must be >= 2, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Step {
    Filter = 1,
    Refine = 2,
    Khop = 3,
}

fn rng_for(seed: u64, step: Step, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

/// Uniform `k`-subset of `items` (all of them when `k >= len`), sorted.
fn choose_sorted(items: &[u32], k: usize, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if items.len() <= k {
        return items.to_vec();
    }
    let mut out: Vec<u32> = index::sample(rng, items.len(), k).into_iter().map(|i| items[i]).collect();
    out.sort_unstable();
    out
}

fn check_targets(targets: &[u32], n: usize) -> Result<Vec<u32>, SamplingError> {
    let mut t = targets.to_vec();
    t.sort_unstable();
    t.dedup();
    if let Some(&node) = t.iter().find(|&&v| v as usize >= n) {
        return Err(SamplingError::UnknownTarget { node, n });
    }
    Ok(t)
}

/// Hyperedges retained per target, each list sorted.
pub type Retained = BTreeMap<u32, Vec<u32>>;

/// Step 1: every target keeps all its hyperedges when it has at most `alpha`,
/// otherwise a uniform random `alpha`-subset.
pub fn filter_hyperedges(hg: &Hypergraph, targets: &[u32], cfg: &SamplerConfig) -> Result<Retained, SamplingError> {
    cfg.validate()?;
    let targets = check_targets(targets, hg.n())?;
    Ok(targets
        .par_iter()
        .map(|&t| {
            let mut rng = rng_for(cfg.seed, Step::Filter, t as u64);
            (t, choose_sorted(hg.incident(t), cfg.alpha, &mut rng))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect())
}

/// Node refinement of one hyperedge as reached from `target`: unchanged when it
/// has at most `beta` nodes, otherwise the target plus `beta - 1` uniform others.
pub fn refine_edge(hg: &Hypergraph, target: u32, edge: u32, cfg: &SamplerConfig) -> Result<Vec<u32>, SamplingError> {
    if edge as usize >= hg.m() {
        return Err(SamplingError::NotIncident { target, edge });
    }
    let nodes = hg.edge(edge);
    if nodes.binary_search(&target).is_err() {
        return Err(SamplingError::NotIncident { target, edge });
    }
    if nodes.len() <= cfg.beta {
        return Ok(nodes.to_vec());
    }
    let others: Vec<u32> = nodes.iter().copied().filter(|&v| v != target).collect();
    let mut rng = rng_for(cfg.seed, Step::Refine, ((target as u64) << 32) | edge as u64);
    let mut out = choose_sorted(&others, cfg.beta - 1, &mut rng);
    let pos = out.partition_point(|&v| v < target);
    out.insert(pos, target);
    Ok(out)
}

/// A node- and hyperedge-induced sub-hypergraph with maps back to global ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledHypergraph {
    pub graph: Hypergraph,
    /// Global node id of local node `k`, ascending.
    pub node_map: Vec<u32>,
    /// Global hyperedge id of local hyperedge `k`, ascending.
    pub edge_map: Vec<u32>,
    /// Hyperedges dropped for having fewer than two nodes.
    pub dropped: usize,
}

impl SampledHypergraph {
    pub fn local_node(&self, global: u32) -> Option<u32> {
        self.node_map.binary_search(&global).ok().map(|k| k as u32)
    }
}

/// Reindexes the given global hyperedges (global id -> global node list) and
/// extra nodes into a compact hypergraph. Hyperedges with fewer than two nodes
/// are dropped and counted.
pub fn induce(extra_nodes: &[u32], edges: &BTreeMap<u32, Vec<u32>>) -> SampledHypergraph {
    let mut node_map: Vec<u32> = extra_nodes.to_vec();
    for nodes in edges.values() {
        node_map.extend_from_slice(nodes);
    }
    node_map.sort_unstable();
    node_map.dedup();
    let local = |g: u32| node_map.binary_search(&g).unwrap() as u32;
    let mut edge_map = Vec::new();
    let mut local_edges = Vec::new();
    let mut dropped = 0;
    for (&e, nodes) in edges {
        let mut l: Vec<u32> = nodes.iter().map(|&g| local(g)).collect();
        l.sort_unstable();
        l.dedup();
        if l.len() < 2 {
            dropped += 1;
            continue;
        }
        edge_map.push(e);
        local_edges.push(l);
    }
    let graph = Hypergraph::from_edges(node_map.len(), local_edges).expect("induced hyperedges are valid");
    SampledHypergraph {
        graph,
        node_map,
        edge_map,
        dropped,
    }
}

/// Step 2: refines every `(target, hyperedge)` pair from step 1 and unions the
/// node sets of hyperedges retained by several targets. Targets are always
/// part of the result, even with no hyperedges.
pub fn refine_nodes(hg: &Hypergraph, retained: &Retained, cfg: &SamplerConfig) -> Result<SampledHypergraph, SamplingError> {
    cfg.validate()?;
    let pairs: Vec<(u32, u32)> = retained
        .iter()
        .flat_map(|(&t, es)| es.iter().map(move |&e| (t, e)))
        .collect();
    let refined: Vec<(u32, Vec<u32>)> = pairs
        .par_iter()
        .map(|&(t, e)| refine_edge(hg, t, e, cfg).map(|nodes| (e, nodes)))
        .collect::<Result<_, _>>()?;
    let mut merged: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (e, nodes) in refined {
        let slot = merged.entry(e).or_default();
        slot.extend(nodes);
        slot.sort_unstable();
        slot.dedup();
    }
    let targets: Vec<u32> = retained.keys().copied().collect();
    Ok(induce(&targets, &merged))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub nodes: usize,
    pub hyperedges: usize,
}

/// Size of the hypergraph after step 1 alone: the retained hyperedges with all
/// their nodes, plus the targets.
pub fn step1_stats(hg: &Hypergraph, retained: &Retained) -> SampleStats {
    let mut edges: Vec<u32> = retained.values().flatten().copied().collect();
    edges.sort_unstable();
    edges.dedup();
    let mut nodes: Vec<u32> = retained.keys().copied().collect();
    for &e in &edges {
        nodes.extend_from_slice(hg.edge(e));
    }
    nodes.sort_unstable();
    nodes.dedup();
    SampleStats {
        nodes: nodes.len(),
        hyperedges: edges.len(),
    }
}

#[derive(Debug, Clone)]
pub struct TwoStepSample {
    pub step1: SampleStats,
    pub sampled: SampledHypergraph,
}

/// Both steps in sequence.
pub fn sample_hypergraph(hg: &Hypergraph, targets: &[u32], cfg: &SamplerConfig) -> Result<TwoStepSample, SamplingError> {
    let retained = filter_hyperedges(hg, targets, cfg)?;
    let step1 = step1_stats(hg, &retained);
    let sampled = refine_nodes(hg, &retained, cfg)?;
    Ok(TwoStepSample { step1, sampled })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    pub graph: HomogeneousGraph,
    /// Global node id of local node `k`, ascending.
    pub node_map: Vec<u32>,
}

impl SampledGraph {
    pub fn local_node(&self, global: u32) -> Option<u32> {
        self.node_map.binary_search(&global).ok().map(|k| k as u32)
    }
}

/// Per target: up to `k1` uniform first-order neighbors, then up to `k2`
/// uniform second-order neighbors reachable through the kept first-order ones.
/// Returns the subgraph induced by the targets and everything kept.
pub fn sample_khop(g: &HomogeneousGraph, targets: &[u32], cfg: &SamplerConfig) -> Result<SampledGraph, SamplingError> {
    let targets = check_targets(targets, g.n())?;
    let kept: Vec<Vec<u32>> = targets
        .par_iter()
        .map(|&t| {
            let mut rng = rng_for(cfg.seed, Step::Khop, t as u64);
            let first_all = g.neighbors(t);
            let first = choose_sorted(first_all, cfg.k1, &mut rng);
            let mut second: Vec<u32> = first.iter().flat_map(|&u| g.neighbors(u).iter().copied()).collect();
            second.sort_unstable();
            second.dedup();
            second.retain(|v| *v != t && first_all.binary_search(v).is_err());
            let second = choose_sorted(&second, cfg.k2, &mut rng);
            first.into_iter().chain(second).collect()
        })
        .collect();
    let mut nodes: Vec<u32> = targets.clone();
    nodes.extend(kept.into_iter().flatten());
    nodes.sort_unstable();
    nodes.dedup();
    Ok(SampledGraph {
        graph: g.induced(&nodes),
        node_map: nodes,
    })
}

/// JSON interchange form of a (possibly sampled) hypergraph. Sampler fields are
/// absent for unsampled graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypergraphFile {
    pub n: usize,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<usize>,
    /// Global id of each local node; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_map: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_map: Option<Vec<u32>>,
    pub hyperedges: Vec<Vec<u32>>,
}

impl HypergraphFile {
    pub fn from_hypergraph(hg: &Hypergraph) -> Self {
        Self {
            n: hg.n(),
            m: hg.m(),
            seed: None,
            alpha: None,
            beta: None,
            node_map: None,
            edge_map: None,
            hyperedges: hg.edges().map(<[u32]>::to_vec).collect(),
        }
    }

    pub fn from_sampled(s: &SampledHypergraph, cfg: &SamplerConfig) -> Self {
        Self {
            seed: Some(cfg.seed),
            alpha: Some(cfg.alpha),
            beta: Some(cfg.beta),
            node_map: Some(s.node_map.clone()),
            edge_map: Some(s.edge_map.clone()),
            ..Self::from_hypergraph(&s.graph)
        }
    }

    pub fn to_hypergraph(&self) -> Result<Hypergraph, SamplingError> {
        if self.hyperedges.len() != self.m {
            return Err(SamplingError::Format(format!(
                "header declares {} hyperedges, found {}",
                self.m,
                self.hyperedges.len()
            )));
        }
        Ok(Hypergraph::from_edges(self.n, self.hyperedges.iter().cloned())?)
    }

    pub fn to_sampled(&self) -> Result<SampledHypergraph, SamplingError> {
        let graph = self.to_hypergraph()?;
        let node_map = self.node_map.clone().unwrap_or_else(|| (0..self.n as u32).collect());
        let edge_map = self.edge_map.clone().unwrap_or_else(|| (0..self.m as u32).collect());
        if node_map.len() != self.n || edge_map.len() != self.m {
            return Err(SamplingError::Format("index maps do not match n / m".into()));
        }
        Ok(SampledHypergraph {
            graph,
            node_map,
            edge_map,
            dropped: 0,
        })
    }

    pub fn write<W: Write>(&self, w: W) -> Result<(), SamplingError> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, SamplingError> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(n_edges: usize) -> Hypergraph {
        // node 0 shares hyperedge k with node k + 1
        Hypergraph::from_edges(n_edges + 1, (0..n_edges as u32).map(|k| vec![0, k + 1])).unwrap()
    }

    #[test]
    fn filter_keeps_small_neighborhoods() {
        let hg = star(3);
        let cfg = SamplerConfig::default();
        let r = filter_hyperedges(&hg, &[0], &cfg).unwrap();
        assert_eq!(r[&0], vec![0, 1, 2]);
    }

    #[test]
    fn filter_caps_at_alpha() {
        let hg = star(150);
        let cfg = SamplerConfig { alpha: 100, ..Default::default() };
        let r = filter_hyperedges(&hg, &[0], &cfg).unwrap();
        assert_eq!(r[&0].len(), 100);
        assert!(r[&0].iter().all(|&e| (e as usize) < 150));
        assert!(r[&0].windows(2).all(|w| w[0] < w[1]));
        assert_eq!(filter_hyperedges(&hg, &[0], &cfg).unwrap(), r);
        let other = SamplerConfig { seed: 1, ..cfg };
        assert_ne!(filter_hyperedges(&hg, &[0], &other).unwrap(), r);
    }

    #[test]
    fn unknown_target_is_named() {
        let err = filter_hyperedges(&star(2), &[9], &SamplerConfig::default()).unwrap_err();
        assert!(matches!(err, SamplingError::UnknownTarget { node: 9, .. }));
    }

    #[test]
    fn refine_keeps_target_and_caps_size() {
        let hg = Hypergraph::from_edges(10, vec![(0..10).collect(), vec![1, 2, 3, 4]]).unwrap();
        let cfg = SamplerConfig { beta: 5, ..Default::default() };
        assert_eq!(refine_edge(&hg, 1, 1, &cfg).unwrap(), vec![1, 2, 3, 4]);
        let r = refine_edge(&hg, 7, 0, &cfg).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.contains(&7));
        assert!(refine_edge(&hg, 7, 1, &cfg).is_err());
        let bad = SamplerConfig { beta: 1, ..cfg };
        assert!(matches!(refine_nodes(&hg, &Retained::new(), &bad), Err(SamplingError::Config(_))));
    }

    #[test]
    fn induce_reindexes_and_drops_small_edges() {
        let mut edges = BTreeMap::new();
        edges.insert(4, vec![10, 20]);
        edges.insert(9, vec![30]);
        let s = induce(&[5], &edges);
        assert_eq!(s.node_map, vec![5, 10, 20, 30]);
        assert_eq!(s.edge_map, vec![4]);
        assert_eq!(s.dropped, 1);
        assert_eq!(s.graph.edge(0), &[1, 2]);
        assert_eq!(s.local_node(20), Some(2));
        assert_eq!(s.local_node(21), None);
    }

    #[test]
    fn khop_caps_first_order() {
        let edges = (1..=200u32).map(|v| (0, v, Default::default()));
        let g = HomogeneousGraph::from_edges(201, edges).unwrap();
        let cfg = SamplerConfig { k1: 70, k2: 70, ..Default::default() };
        let s = sample_khop(&g, &[0], &cfg).unwrap();
        assert_eq!(s.node_map.len(), 71);
        let small = HomogeneousGraph::from_edges(6, (1..=5u32).map(|v| (0, v, Default::default()))).unwrap();
        assert_eq!(sample_khop(&small, &[0], &cfg).unwrap().node_map, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn file_roundtrip() {
        let hg = Hypergraph::from_edges(6, vec![(0..6).collect(), vec![0, 1]]).unwrap();
        let cfg = SamplerConfig { beta: 3, seed: 7, ..Default::default() };
        let s = sample_hypergraph(&hg, &[0, 1], &cfg).unwrap().sampled;
        let file = HypergraphFile::from_sampled(&s, &cfg);
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"alpha\":100"));
        let back = HypergraphFile::read(&buf[..]).unwrap().to_sampled().unwrap();
        assert_eq!(back.graph, s.graph);
        assert_eq!(back.node_map, s.node_map);
    }
}
