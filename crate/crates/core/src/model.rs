//! Shared domain types: identifiers, transaction records, the homogeneous and
//! hypergraph views of a transaction set, and node labels.
//!
//! Graph types are index-only. Node `i` of any graph refers to entry `i` of the
//! [`AccountIndex`] (or of a node map, for sampled subgraphs) built alongside it.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("empty identifier")]
    Empty,
    #[error("missing 0x prefix")]
    MissingPrefix,
    #[error("expected {expected} hex characters, found {found}")]
    Length { expected: usize, found: usize },
    #[error("non-hex character in identifier")]
    NonHex,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("record {record}: invalid address {value:?}: {source}")]
    MalformedAddress {
        record: usize,
        value: String,
        source: IdError,
    },
    #[error("cannot intern an empty record set")]
    NoRecords,
    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: u32, n: usize },
    #[error("hyperedge {edge} has {size} distinct nodes, at least 2 are required")]
    DegenerateHyperedge { edge: usize, size: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("label class {0} is not 0 or 1")]
    InvalidClass(u8),
    #[error("node {0} appears in more than one mask")]
    OverlappingMasks(u32),
    #[error("node {0} is masked but unlabeled")]
    UnlabeledMaskedNode(u32),
    #[error("labeled node {0} is not in any mask")]
    UnmaskedLabel(u32),
}

fn parse_hex<const N: usize>(s: &str) -> Result<[u8; N], IdError> {
    if s.is_empty() {
        return Err(IdError::Empty);
    }
    let body = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or(IdError::MissingPrefix)?;
    if body.len() != 2 * N {
        return Err(IdError::Length {
            expected: 2 * N,
            found: body.len(),
        });
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(body, &mut out).map_err(|_| IdError::NonHex)?;
    Ok(out)
}

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl FromStr for $name {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, IdError> {
                parse_hex::<$len>(s.trim()).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "0x{}", hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// 20-byte account address. Parsing accepts either hex case; display is lowercase.
    AccountId,
    20
);
hex_id!(
    /// 32-byte transaction hash.
    TxHash,
    32
);

/// One value transfer: a top-level transaction or an internal trace under it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransactionRecord {
    pub tx_hash: TxHash,
    pub from: AccountId,
    pub to: AccountId,
    /// Wei.
    pub value: u128,
    /// Unix seconds, always > 0.
    pub timestamp: u64,
    pub is_trace: bool,
}

/// Dense interning table `AccountId <-> u32`, in first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct AccountIndex {
    ids: Vec<AccountId>,
    lookup: HashMap<AccountId, u32>,
}

impl AccountIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, id: AccountId) -> u32 {
        if let Some(&idx) = self.lookup.get(&id) {
            return idx;
        }
        let idx = u32::try_from(self.ids.len()).expect("more than u32::MAX accounts");
        self.ids.push(id);
        self.lookup.insert(id, idx);
        idx
    }

    pub fn get(&self, id: &AccountId) -> Option<u32> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, idx: u32) -> Option<&AccountId> {
        self.ids.get(idx as usize)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn from_ids(ids: impl IntoIterator<Item = AccountId>) -> Self {
        let mut index = Self::new();
        for id in ids {
            index.intern(id);
        }
        index
    }
}

/// Interns every sender and receiver, sender first, in record order.
pub fn intern_accounts(records: &[TransactionRecord]) -> Result<AccountIndex, ModelError> {
    if records.is_empty() {
        return Err(ModelError::NoRecords);
    }
    let mut index = AccountIndex::new();
    for r in records {
        index.intern(r.from);
        index.intern(r.to);
    }
    Ok(index)
}

/// Same as [`intern_accounts`] for raw `(from, to)` address strings. The first
/// malformed address aborts with the offending record position.
pub fn intern_addresses<'a, I>(pairs: I) -> Result<AccountIndex, ModelError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut index = AccountIndex::new();
    for (record, (from, to)) in pairs.into_iter().enumerate() {
        for raw in [from, to] {
            let id = raw
                .parse::<AccountId>()
                .map_err(|source| ModelError::MalformedAddress {
                    record,
                    value: raw.to_string(),
                    source,
                })?;
            index.intern(id);
        }
    }
    if index.is_empty() {
        return Err(ModelError::NoRecords);
    }
    Ok(index)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub count: u64,
    pub total_value: u128,
}

impl EdgeStats {
    fn merge(&mut self, other: EdgeStats) {
        self.count += other.count;
        self.total_value = self.total_value.saturating_add(other.total_value);
    }
}

/// Undirected account graph with per-pair transfer aggregates. Symmetric with an
/// empty diagonal by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousGraph {
    n: usize,
    /// Sorted by `(i, j)`, always `i < j`.
    edges: Vec<(u32, u32, EdgeStats)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl HomogeneousGraph {
    /// Builds the graph from unordered pairs. Repeated pairs (in either order)
    /// are merged by summing their statistics.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (u32, u32, EdgeStats)>,
    {
        let mut merged: BTreeMap<(u32, u32), EdgeStats> = BTreeMap::new();
        for (a, b, stats) in edges {
            for node in [a, b] {
                if node as usize >= n {
                    return Err(ModelError::NodeOutOfRange { node, n });
                }
            }
            if a == b {
                return Err(ModelError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            merged.entry(key).or_default().merge(stats);
        }
        let edges: Vec<_> = merged.into_iter().map(|((i, j), s)| (i, j, s)).collect();

        let mut degree = vec![0usize; n];
        for &(i, j, _) in &edges {
            degree[i as usize] += 1;
            degree[j as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0u32; offsets[n]];
        for &(i, j, _) in &edges {
            neighbors[cursor[i as usize]] = j;
            cursor[i as usize] += 1;
            neighbors[cursor[j as usize]] = i;
            cursor[j as usize] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            offsets,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, EdgeStats)] {
        &self.edges
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: u32) -> &[u32] {
        let i = node as usize;
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, node: u32) -> usize {
        self.neighbors(node).len()
    }

    /// Binary adjacency as coordinate triplets covering both triangles.
    pub fn binary_triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(2 * self.edges.len());
        for &(i, j, _) in &self.edges {
            out.push((i, j, 1.0));
            out.push((j, i, 1.0));
        }
        out
    }

    /// Subgraph induced by `nodes` (sorted, distinct, in range). Local node `k`
    /// corresponds to `nodes[k]`.
    pub fn induced(&self, nodes: &[u32]) -> Self {
        let local: HashMap<u32, u32> = nodes
            .iter()
            .enumerate()
            .map(|(k, &g)| (g, k as u32))
            .collect();
        let edges = self.edges.iter().filter_map(|&(i, j, s)| {
            Some((*local.get(&i)?, *local.get(&j)?, s))
        });
        Self::from_edges(nodes.len(), edges).expect("induced edges are valid")
    }
}

/// Hypergraph stored as both incidence orientations (hyperedge -> nodes and
/// node -> hyperedges), which are transposes of each other. Every hyperedge
/// holds at least two distinct nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    n: usize,
    edge_ptr: Vec<usize>,
    edge_nodes: Vec<u32>,
    node_ptr: Vec<usize>,
    node_edges: Vec<u32>,
}

impl Hypergraph {
    /// Node lists are deduplicated; order within an input list does not matter.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = Vec<u32>>,
    {
        let mut edge_ptr = vec![0];
        let mut edge_nodes = Vec::new();
        for (edge, mut nodes) in edges.into_iter().enumerate() {
            nodes.sort_unstable();
            nodes.dedup();
            if let Some(&node) = nodes.last() {
                if node as usize >= n {
                    return Err(ModelError::NodeOutOfRange { node, n });
                }
            }
            if nodes.len() < 2 {
                return Err(ModelError::DegenerateHyperedge {
                    edge,
                    size: nodes.len(),
                });
            }
            edge_nodes.extend_from_slice(&nodes);
            edge_ptr.push(edge_nodes.len());
        }
        let m = edge_ptr.len() - 1;

        let mut node_ptr = vec![0usize; n + 1];
        for &v in &edge_nodes {
            node_ptr[v as usize + 1] += 1;
        }
        for i in 0..n {
            node_ptr[i + 1] += node_ptr[i];
        }
        let mut cursor = node_ptr[..n].to_vec();
        let mut node_edges = vec![0u32; edge_nodes.len()];
        // Hyperedges are visited in increasing id, so each node list comes out sorted.
        for e in 0..m {
            for &v in &edge_nodes[edge_ptr[e]..edge_ptr[e + 1]] {
                node_edges[cursor[v as usize]] = e as u32;
                cursor[v as usize] += 1;
            }
        }
        Ok(Self {
            n,
            edge_ptr,
            edge_nodes,
            node_ptr,
            node_edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edge_ptr.len() - 1
    }

    /// Sorted node list of hyperedge `e`.
    pub fn edge(&self, e: u32) -> &[u32] {
        let e = e as usize;
        &self.edge_nodes[self.edge_ptr[e]..self.edge_ptr[e + 1]]
    }

    /// Sorted ids of the hyperedges containing `node`.
    pub fn incident(&self, node: u32) -> &[u32] {
        let i = node as usize;
        &self.node_edges[self.node_ptr[i]..self.node_ptr[i + 1]]
    }

    pub fn hyperdegree(&self, node: u32) -> usize {
        self.incident(node).len()
    }

    pub fn edge_size(&self, e: u32) -> usize {
        self.edge(e).len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.m() as u32).map(move |e| self.edge(e))
    }

    /// Number of ones in the incidence matrix.
    pub fn nnz(&self) -> usize {
        self.edge_nodes.len()
    }

    /// Dense `n x m` incidence matrix. Intended for small instances and tests.
    pub fn dense_incidence(&self) -> Vec<Vec<u8>> {
        let mut h = vec![vec![0u8; self.m()]; self.n];
        for (e, nodes) in self.edges().enumerate() {
            for &v in nodes {
                h[v as usize][e] = 1;
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Class {
    Normal = 0,
    Ponzi = 1,
}

impl Class {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl From<Class> for u8 {
    fn from(c: Class) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Class {
    type Error = ModelError;
    fn try_from(v: u8) -> Result<Self, ModelError> {
        match v {
            0 => Ok(Class::Normal),
            1 => Ok(Class::Ponzi),
            other => Err(ModelError::InvalidClass(other)),
        }
    }
}

/// Labels keyed by node index of the dataset's [`AccountIndex`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: BTreeMap<u32, Class>,
}

impl LabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.values().filter(|&&c| c == class).count()
    }

    /// Labeled nodes of one class, ascending.
    pub fn members(&self, class: Class) -> Vec<u32> {
        self.labels
            .iter()
            .filter(|(_, &c)| c == class)
            .map(|(&n, _)| n)
            .collect()
    }

    pub fn nodes(&self) -> Vec<u32> {
        self.labels.keys().copied().collect()
    }
}

/// Train / validation / test membership over labeled nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Masks {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl Masks {
    /// Checks the masks are pairwise disjoint and cover exactly the labeled set.
    pub fn validate(&self, labels: &LabelSet) -> Result<(), ModelError> {
        let mut seen = std::collections::HashSet::new();
        for &node in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(node) {
                return Err(ModelError::OverlappingMasks(node));
            }
            if !labels.labels.contains_key(&node) {
                return Err(ModelError::UnlabeledMaskedNode(node));
            }
        }
        if let Some(&node) = labels.labels.keys().find(|n| !seen.contains(n)) {
            return Err(ModelError::UnmaskedLabel(node));
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = u32> + '_ {
        self.train.iter().chain(&self.val).chain(&self.test).copied()
    }

    /// Re-expresses the masks through `f`, dropping nodes `f` cannot map.
    pub fn remap(&self, f: impl Fn(u32) -> Option<u32>) -> Masks {
        let map = |v: &[u32]| v.iter().filter_map(|&x| f(x)).collect();
        Masks {
            train: map(&self.train),
            val: map(&self.val),
            test: map(&self.test),
        }
    }
}
