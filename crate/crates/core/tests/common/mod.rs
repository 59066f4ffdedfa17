//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code, clippy::too_many_arguments)]

use hyperdet::ingest::{load_labels, Dataset};
use hyperdet::learning::{Model, Propagator, Tensor};
use hyperdet::synth::{generate, Corpus, SynthConfig};
use hyperdet::{Class, CsrMatrix, Hypergraph, LabelSet};
use rand::seq::index;
use rand::{Rng, RngCore};

/// Random hypergraph with `n` nodes and `m` hyperedges of size `2..=max_size`.
pub fn random_hypergraph(rng: &mut impl RngCore, n: usize, m: usize, max_size: usize) -> Hypergraph {
    let edges = (0..m)
        .map(|_| {
            let size = rng.random_range(2..=max_size.min(n));
            index::sample(rng, n, size).into_iter().map(|v| v as u32).collect()
        })
        .collect::<Vec<Vec<u32>>>();
    Hypergraph::from_edges(n, edges).expect("valid hypergraph")
}

/// `A[i][j] = Σ_e H[i][e] H[j][e]` off the diagonal, from the dense incidence.
pub fn brute_co_membership(hg: &Hypergraph) -> Vec<Vec<u32>> {
    let h = hg.dense_incidence();
    let n = hg.n();
    let mut a = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[i][j] = (0..hg.m()).map(|e| (h[i][e] * h[j][e]) as u32).sum();
            }
        }
    }
    a
}

/// `½ D^-1/2 (A_H + D) D^-1/2` with identity rows for nodes in no hyperedge.
pub fn half_sym_oracle(hg: &Hypergraph) -> CsrMatrix {
    let a = brute_co_membership(hg);
    let n = hg.n();
    let d: Vec<f64> = (0..n as u32).map(|v| hg.hyperdegree(v) as f64).collect();
    let mut t = Vec::new();
    for i in 0..n {
        if d[i] == 0.0 {
            t.push((i as u32, i as u32, 1.0));
            continue;
        }
        for j in 0..n {
            let aij = if i == j { d[i] } else { a[i][j] as f64 };
            if aij != 0.0 {
                t.push((i as u32, j as u32, 0.5 * aij / (d[i].sqrt() * d[j].sqrt())));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, t).expect("square")
}

/// Doubled Mann-Whitney count by comparing every positive/negative pair.
pub fn brute_twice_u(scores: &[f64], truth: &[u8]) -> u128 {
    let mut u2 = 0u128;
    for (i, &ti) in truth.iter().enumerate() {
        if ti != 1 {
            continue;
        }
        for (j, &tj) in truth.iter().enumerate() {
            if tj != 0 {
                continue;
            }
            u2 += match scores[i].partial_cmp(&scores[j]).expect("no NaN") {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    u2
}

/// Generates a corpus and ingests it through the public readers.
pub fn ingest_corpus(corpus: &Corpus) -> (Dataset, LabelSet) {
    let mut tx = Vec::new();
    corpus.write_transactions(&mut tx).expect("in-memory write");
    let mut lb = Vec::new();
    corpus.write_labels(&mut lb).expect("in-memory write");
    let ds = Dataset::from_reader(&tx[..]).expect("synthetic corpus ingests");
    let labels = load_labels(&lb[..], &ds.accounts).expect("labels load").labels;
    (ds, labels)
}

pub fn synth_dataset(cfg: &SynthConfig) -> (Dataset, LabelSet) {
    ingest_corpus(&generate(cfg).expect("valid synth config"))
}

/// Worst relative error between analytic and central-difference gradients
/// over every entry of every trainable tensor, with its parameter name.
/// Entries where both gradients are below `floor` in magnitude are compared
/// against `floor` instead.
pub fn gradient_check(
    model: &Model,
    x: &Tensor,
    prop: &dyn Propagator,
    labels: &[Option<Class>],
    mask: &[u32],
    seed: u64,
    eps: f64,
    floor: f64,
) -> (f64, String, usize) {
    let analytic = model.loss_and_grads(x, prop, labels, mask, seed).expect("forward").grads;
    let names = model.params.names();
    let loss_at = |m: &Model| m.loss_and_grads(x, prop, labels, mask, seed).expect("forward").loss;
    let mut worst = (0.0f64, String::new(), 0usize);
    let mut checked = 0;
    for (p, g) in analytic.iter().enumerate() {
        for k in 0..g.data().len() {
            let mut plus = model.clone();
            plus.params.trainable_mut()[p].data_mut()[k] += eps;
            let mut minus = model.clone();
            minus.params.trainable_mut()[p].data_mut()[k] -= eps;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let a = g.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            checked += 1;
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]", names[p]), 0);
            }
        }
    }
    worst.2 = checked;
    worst
}

pub fn random_features(rng: &mut impl RngCore, n: usize, d: usize) -> Tensor {
    Tensor::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
}
