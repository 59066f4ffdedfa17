//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every op appends a node holding its value; [`Tape::backward`] walks the
//! tape in reverse and accumulates adjoints. Nodes can only refer to earlier
//! nodes, so the tape is already in topological order.

use super::Tensor;
use crate::sparse::CsrMatrix;

/// A fixed linear propagation operator over graph nodes (`n x n`).
pub trait Propagator: Send + Sync {
    /// Number of nodes `n`.
    fn dim(&self) -> usize;
    fn apply(&self, x: &Tensor) -> Tensor;
    fn apply_transpose(&self, x: &Tensor) -> Tensor;
}

impl Propagator for CsrMatrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        self.mul_dense(x)
    }

    fn apply_transpose(&self, x: &Tensor) -> Tensor {
        self.t_mul_dense(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Propagate(Var, &'a dyn Propagator),
    Relu(Var),
    MulConst(Var, Tensor),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        /// Statistics came from this batch (training) rather than fixed running values.
        batch_stats: bool,
    },
    AddBias(Var, Var),
    SoftmaxXent {
        logits: Var,
        probs: Tensor,
        targets: Vec<(usize, usize)>,
    },
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
    /// False for constants and everything computed only from constants.
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Per-column batch mean and (biased) variance observed by a batch-norm node.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    /// `None` when the loss does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros of `shape` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Probabilities are clamped here before taking the log.
pub(crate) const PROB_FLOOR: f64 = 1e-12;

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::MatMul(a, b) => self.needs(*a) || self.needs(*b),
            Op::Propagate(x, _) | Op::Relu(x) | Op::MulConst(x, _) => self.needs(*x),
            Op::BatchNorm { x, gamma, beta, .. } => self.needs(*x) || self.needs(*gamma) || self.needs(*beta),
            Op::AddBias(x, b) => self.needs(*x) || self.needs(*b),
            Op::SoftmaxXent { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn propagate(&mut self, p: &'a dyn Propagator, x: Var) -> Var {
        let value = p.apply(self.value(x));
        self.push(value, Op::Propagate(x, p))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Elementwise product with a constant (e.g. a scaled dropout mask).
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let value = self.value(x).zip_map(&c, |a, b| a * b);
        self.push(value, Op::MulConst(x, c))
    }

    /// Adds a `1 x c` row vector to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.shape(), (1, self.value(x).cols()), "bias shape mismatch");
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(bias.row(0)) {
                *v += bv;
            }
        }
        self.push(value, Op::AddBias(x, b))
    }

    /// Batch normalization over rows. With `fixed = Some((mean, var))` those
    /// statistics are used as constants; otherwise the batch's own biased
    /// statistics are used and returned.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        fixed: Option<(&[f64], &[f64])>,
    ) -> (Var, BatchStats) {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let (mean, var) = match fixed {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut mean = vec![0.0; c];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m).powi(2);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.clone();
        for r in 0..n {
            for (k, v) in xhat.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[k]) * inv_std[k];
            }
        }
        let g = self.value(gamma).row(0);
        let b = self.value(beta).row(0);
        let mut y = xhat.clone();
        for r in 0..n {
            for (k, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * g[k] + b[k];
            }
        }
        let var_out = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: fixed.is_none(),
            },
        );
        (var_out, BatchStats { mean, var })
    }

    /// Mean cross-entropy of the row-wise softmax of `logits` over `targets`
    /// `(row, class)`, as a `1 x 1` node. Panics on an empty target list.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Var {
        assert!(!targets.is_empty(), "cross-entropy over an empty mask");
        let probs = softmax_rows(self.value(logits));
        let loss = -targets
            .iter()
            .map(|&(r, c)| probs.get(r, c).max(PROB_FLOOR).ln())
            .sum::<f64>()
            / targets.len() as f64;
        self.push(
            Tensor::from_vec(1, 1, vec![loss]),
            Op::SoftmaxXent {
                logits,
                probs,
                targets,
            },
        )
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        let acc = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let needs = |v: &Var| self.nodes[v.0].needs_grad;

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::MatMul(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                _ if !node.needs_grad => {}
                Op::Propagate(x, p) => acc(&mut grads, *x, p.apply_transpose(&g)),
                Op::Relu(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    acc(&mut grads, *x, gx);
                }
                Op::MulConst(x, c) => acc(&mut grads, *x, g.zip_map(c, |a, b| a * b)),
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let (n, c) = g.shape();
                    let gam = self.value(*gamma).row(0);
                    let mut sum_dy = vec![0.0; c];
                    let mut sum_dy_xhat = vec![0.0; c];
                    for r in 0..n {
                        for k in 0..c {
                            sum_dy[k] += g.get(r, k);
                            sum_dy_xhat[k] += g.get(r, k) * xhat.get(r, k);
                        }
                    }
                    let mut gx = Tensor::zeros(n, c);
                    for r in 0..n {
                        for k in 0..c {
                            let dy = g.get(r, k);
                            let v = if *batch_stats {
                                gam[k] * inv_std[k] / n as f64
                                    * (n as f64 * dy - sum_dy[k] - xhat.get(r, k) * sum_dy_xhat[k])
                            } else {
                                dy * gam[k] * inv_std[k]
                            };
                            gx.set(r, k, v);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, Tensor::from_vec(1, c, sum_dy_xhat));
                    acc(&mut grads, *beta, Tensor::from_vec(1, c, sum_dy));
                }
                Op::AddBias(x, b) => {
                    acc(&mut grads, *b, g.sum_rows());
                    acc(&mut grads, *x, g.clone());
                }
                Op::SoftmaxXent {
                    logits,
                    probs,
                    targets,
                } => {
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut gl = Tensor::zeros(probs.rows(), probs.cols());
                    for &(r, class) in targets {
                        for k in 0..probs.cols() {
                            let y = if k == class { 1.0 } else { 0.0 };
                            let v = gl.get(r, k) + (probs.get(r, k) - y) * scale;
                            gl.set(r, k, v);
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_gradients() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]));
        let b = t.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]));
        let y = t.matmul(a, b);
        let g = t.backward(y);
        assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[vec![1.0]]));
        let unused = t.leaf(Tensor::from_rows(&[vec![5.0]]));
        let y = t.relu(a);
        let g = t.backward(y);
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(unused, (1, 1)).data(), &[0.0]);
    }

    #[test]
    fn softmax_xent_logit_gradient_is_p_minus_y_over_n() {
        let logits = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5], vec![-0.7, 0.1]]);
        let mut t = Tape::new();
        let l = t.leaf(logits.clone());
        let loss = t.softmax_cross_entropy(l, vec![(0, 1), (2, 0)]);
        let g = t.backward(loss);
        let p = softmax_rows(&logits);
        let gl = g.get(l).unwrap();
        for k in 0..2 {
            assert!((gl.get(0, k) - (p.get(0, k) - (k == 1) as u8 as f64) / 2.0).abs() < 1e-15);
            assert!((gl.get(2, k) - (p.get(2, k) - (k == 0) as u8 as f64) / 2.0).abs() < 1e-15);
            assert_eq!(gl.get(1, k), 0.0);
        }
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![2.0]]));
        let y = t.matmul(x, x);
        let g = t.backward(y);
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }
}
