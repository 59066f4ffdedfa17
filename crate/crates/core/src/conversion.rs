//! Hypergraph to hyper-homo graph conversion (clique expansion through the
//! incidence self-product) and the propagation operators both detection
//! channels consume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::{Propagator, Tensor};
use crate::model::Hypergraph;
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum ConversionError {
    #[error("negative adjacency entry {value} at ({row}, {col})")]
    NegativeEntry { row: u32, col: u32, value: f64 },
    #[error("adjacency must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("hyperedge {0} is empty")]
    EmptyHyperedge(usize),
}

/// Clique expansion of a hypergraph: `A[i][j]` is the number of hyperedges
/// holding both `i` and `j`. Symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperHomoGraph {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    counts: Vec<u32>,
}

impl HyperHomoGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries, i.e. ordered pairs `(i, j)` with `i != j`.
    pub fn nnz(&self) -> usize {
        self.counts.len()
    }

    /// Undirected edge count (`nnz / 2`).
    pub fn edge_count(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn row(&self, i: u32) -> (&[u32], &[u32]) {
        let span = self.indptr[i as usize]..self.indptr[i as usize + 1];
        (&self.indices[span.clone()], &self.counts[span])
    }

    pub fn get(&self, i: u32, j: u32) -> u32 {
        let (idx, c) = self.row(i);
        idx.binary_search(&j).map_or(0, |k| c[k])
    }

    /// Shared-hyperedge counts as weights, or all ones when `binary`.
    pub fn to_csr(&self, binary: bool) -> CsrMatrix {
        let values = self
            .counts
            .iter()
            .map(|&c| if binary { 1.0 } else { c as f64 })
            .collect();
        CsrMatrix::from_parts(self.n, self.n, self.indptr.clone(), self.indices.clone(), values)
    }

    pub fn to_dense(&self) -> Vec<Vec<u32>> {
        let mut d = vec![vec![0; self.n]; self.n];
        for i in 0..self.n as u32 {
            let (idx, c) = self.row(i);
            for (&j, &v) in idx.iter().zip(c) {
                d[i as usize][j as usize] = v;
            }
        }
        d
    }
}

/// `H Hᵀ - Diag(H Hᵀ)`, accumulated row by row from the incidence lists so that
/// memory stays proportional to the output.
pub fn hyper_to_homo(hg: &Hypergraph) -> HyperHomoGraph {
    let rows: Vec<(Vec<u32>, Vec<u32>)> = (0..hg.n() as u32)
        .into_par_iter()
        .map(|i| {
            let mut nbrs: Vec<u32> = hg
                .incident(i)
                .iter()
                .flat_map(|&e| hg.edge(e).iter().copied())
                .filter(|&j| j != i)
                .collect();
            nbrs.sort_unstable();
            let mut idx = Vec::new();
            let mut counts = Vec::new();
            for j in nbrs {
                if idx.last() == Some(&j) {
                    *counts.last_mut().unwrap() += 1;
                } else {
                    idx.push(j);
                    counts.push(1);
                }
            }
            (idx, counts)
        })
        .collect();
    let mut indptr = Vec::with_capacity(hg.n() + 1);
    indptr.push(0);
    let mut indices = Vec::new();
    let mut counts = Vec::new();
    for (idx, c) in rows {
        indices.extend(idx);
        counts.extend(c);
        indptr.push(indices.len());
    }
    HyperHomoGraph {
        n: hg.n(),
        indptr,
        indices,
        counts,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `D^-1/2 (A + I) D^-1/2` with `D = rowsum(A + I)`.
    #[default]
    Sym,
    /// The same after replacing every nonzero weight by 1.
    BinarySym,
}

/// Symmetric renormalized propagation operator with self-loops.
pub fn normalize_adjacency(a: &CsrMatrix, mode: Normalization) -> Result<CsrMatrix, ConversionError> {
    if a.rows() != a.cols() {
        return Err(ConversionError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if let Some((row, col, value)) = a.triplets().find(|&(_, _, v)| v < 0.0) {
        return Err(ConversionError::NegativeEntry { row, col, value });
    }
    let n = a.rows();
    let weights = a.triplets().filter(|&(_, _, v)| v != 0.0).map(|(r, c, v)| match mode {
        Normalization::Sym => (r, c, v),
        Normalization::BinarySym => (r, c, 1.0),
    });
    let with_loops = CsrMatrix::from_triplets(n, n, weights.chain((0..n as u32).map(|i| (i, i, 1.0))))
        .expect("indices come from a square matrix");
    let inv_sqrt: Vec<f64> = with_loops
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    Ok(with_loops.map_values(|r, c, v| v * inv_sqrt[r as usize] * inv_sqrt[c as usize]))
}

/// Two-stage hypergraph propagation `Dv^-1/2 H De^-1 Hᵀ Dv^-1/2` with unit
/// hyperedge weights. Nodes in no hyperedge pass their input through unchanged.
#[derive(Debug, Clone)]
pub struct HypergraphOperators {
    /// `De^-1 Hᵀ Dv^-1/2`, `m x n`: node features to hyperedge features.
    node_to_edge: CsrMatrix,
    /// `Dv^-1/2 H`, `n x m`: hyperedge features back to nodes.
    edge_to_node: CsrMatrix,
    /// Diagonal of `Dv^-1/2`.
    node_scale: Vec<f64>,
    /// Node hyperdegrees (diagonal of `Dv`).
    pub node_degree: Vec<f64>,
    /// Hyperedge sizes (diagonal of `De`).
    pub edge_size: Vec<f64>,
    isolated: Vec<u32>,
}

pub fn hypergraph_operators(hg: &Hypergraph) -> Result<HypergraphOperators, ConversionError> {
    let node_degree: Vec<f64> = (0..hg.n() as u32).map(|v| hg.hyperdegree(v) as f64).collect();
    let edge_size: Vec<f64> = (0..hg.m() as u32).map(|e| hg.edge_size(e) as f64).collect();
    if let Some(e) = edge_size.iter().position(|&s| s == 0.0) {
        return Err(ConversionError::EmptyHyperedge(e));
    }
    let dv_inv_sqrt: Vec<f64> = node_degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let node_to_edge = CsrMatrix::from_triplets(
        hg.m(),
        hg.n(),
        hg.edges().enumerate().flat_map(|(e, nodes)| {
            let scale = 1.0 / edge_size[e];
            let dv = &dv_inv_sqrt;
            nodes.iter().map(move |&v| (e as u32, v, scale * dv[v as usize]))
        }),
    )
    .expect("incidence indices are in range");
    let edge_to_node = CsrMatrix::from_triplets(
        hg.n(),
        hg.m(),
        (0..hg.n() as u32).flat_map(|v| {
            let s = dv_inv_sqrt[v as usize];
            hg.incident(v).iter().map(move |&e| (v, e, s))
        }),
    )
    .expect("incidence indices are in range");
    let isolated = (0..hg.n() as u32).filter(|&v| hg.hyperdegree(v) == 0).collect();
    Ok(HypergraphOperators {
        node_to_edge,
        edge_to_node,
        node_scale: dv_inv_sqrt,
        node_degree,
        edge_size,
        isolated,
    })
}

impl HypergraphOperators {
    pub fn n(&self) -> usize {
        self.edge_to_node.rows()
    }

    pub fn m(&self) -> usize {
        self.node_to_edge.rows()
    }

    /// Hyperedge features `De^-1 Hᵀ Dv^-1/2 x`.
    pub fn aggregate_to_edges(&self, x: &Tensor) -> Tensor {
        self.node_to_edge.mul_dense(x)
    }

    /// Node features `Dv^-1/2 H e`, before the isolated-node pass-through.
    pub fn aggregate_to_nodes(&self, e: &Tensor) -> Tensor {
        self.edge_to_node.mul_dense(e)
    }

    pub fn isolated(&self) -> &[u32] {
        &self.isolated
    }

    /// The composed operator as a dense matrix, without the isolated-node
    /// pass-through (isolated rows are zero).
    pub fn composed_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut out = vec![vec![0.0; n]; n];
        let h = self.edge_to_node.to_dense();
        let ht = self.node_to_edge.to_dense();
        for i in 0..n {
            for (e, &hie) in h[i].iter().enumerate() {
                if hie == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i][j] += hie * ht[e][j];
                }
            }
        }
        out
    }
}

impl Propagator for HypergraphOperators {
    fn dim(&self) -> usize {
        self.n()
    }

    /// Gathers one hyperedge at a time and scatters it straight back, in
    /// ascending hyperedge order, so each node row receives the same additions
    /// in the same order as the two-matrix route.
    fn apply(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n(), "hypergraph propagation shape mismatch");
        let c = x.cols();
        let mut out = Tensor::zeros(self.n(), c);
        let xd = x.data();
        let od = out.data_mut();
        let mut edge = vec![0.0; c];
        for e in 0..self.m() {
            let (nodes, weights) = self.node_to_edge.row(e);
            edge.fill(0.0);
            for (&v, &w) in nodes.iter().zip(weights) {
                let xr = &xd[v as usize * c..(v as usize + 1) * c];
                for (t, &xv) in edge.iter_mut().zip(xr) {
                    *t += w * xv;
                }
            }
            for &v in nodes {
                let s = self.node_scale[v as usize];
                let orow = &mut od[v as usize * c..(v as usize + 1) * c];
                for (o, &t) in orow.iter_mut().zip(&edge) {
                    *o += s * t;
                }
            }
        }
        for &v in &self.isolated {
            out.row_mut(v as usize).copy_from_slice(x.row(v as usize));
        }
        out
    }

    /// The composed operator is symmetric and the pass-through is diagonal.
    fn apply_transpose(&self, x: &Tensor) -> Tensor {
        self.apply(x)
    }
}
