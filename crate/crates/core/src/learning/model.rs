//! The two-layer message-passing encoder shared by all channels, the softmax
//! classifier head and the cross-entropy objective.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{softmax_rows, BatchStats, Gradients, Tape, Var, PROB_FLOOR};
use super::{LearningError, Propagator, Tensor};
use crate::conversion::HypergraphOperators;
use crate::model::Class;
use crate::sparse::CsrMatrix;

pub const N_CLASSES: usize = 2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

pub const HIDDEN_GRID: [usize; 3] = [16, 32, 64];
pub const LR_GRID: [f64; 5] = [0.1, 0.05, 0.01, 0.005, 0.001];
pub const BATCH_NORM_GRID: [bool; 2] = [true, false];

/// Which graph the encoder propagates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// Native hypergraph, two-stage node -> hyperedge -> node propagation.
    Hyper,
    /// Clique expansion of the hypergraph with a GCN-style operator.
    HyperHomo,
    /// The pairwise transaction graph with a GCN-style operator.
    Homogeneous,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Homogeneous, Channel::Hyper, Channel::HyperHomo];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Hyper => "hyper",
            Channel::HyperHomo => "hyper-homo",
            Channel::Homogeneous => "homogeneous",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = LearningError;
    fn from_str(s: &str) -> Result<Self, LearningError> {
        match s {
            "hyper" => Ok(Channel::Hyper),
            "hyper-homo" => Ok(Channel::HyperHomo),
            "homogeneous" => Ok(Channel::Homogeneous),
            other => Err(LearningError::Config(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channel: Channel,
    pub layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channel: Channel::Hyper,
            layers: 2,
            hidden_dim: 32,
            dropout: 0.5,
            batch_norm: false,
            lr: 0.01,
            weight_decay: 5e-4,
            epochs: 300,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |msg: String| Err(LearningError::Config(msg));
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be finite and >= 0", self.weight_decay));
        }
        Ok(())
    }

    /// Compact label used in leaderboards, e.g. `hyper/h32/lr0.01/bn`.
    pub fn label(&self) -> String {
        format!(
            "{}/h{}/lr{}/{}",
            self.channel,
            self.hidden_dim,
            self.lr,
            if self.batch_norm { "bn" } else { "nobn" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bn: Option<BatchNormParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
    /// `hidden x 2`.
    pub head_weight: Tensor,
    /// `1 x 2`.
    pub head_bias: Tensor,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect())
}

impl Parameters {
    /// Glorot-uniform weights from `cfg.seed`; BN scale 1 and shift 0; zero bias.
    /// The draw depends only on shapes and seed, not on the channel.
    pub fn init(cfg: &ModelConfig, in_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.hidden_dim;
        let layers = (0..cfg.layers)
            .map(|l| LayerParams {
                weight: glorot(if l == 0 { in_dim } else { h }, h, &mut rng),
                bn: cfg.batch_norm.then(|| BatchNormParams {
                    gamma: Tensor::full(1, h, 1.0),
                    beta: Tensor::zeros(1, h),
                    running_mean: vec![0.0; h],
                    running_var: vec![1.0; h],
                }),
            })
            .collect();
        Self {
            layers,
            head_weight: glorot(h, N_CLASSES, &mut rng),
            head_bias: Tensor::zeros(1, N_CLASSES),
        }
    }

    /// Trainable tensors with stable names, in optimizer order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.weight"), &layer.weight));
            if let Some(bn) = &layer.bn {
                out.push((format!("layer{l}.bn.gamma"), &bn.gamma));
                out.push((format!("layer{l}.bn.beta"), &bn.beta));
            }
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Mutable view in the same order as [`Parameters::named`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            if let Some(bn) = &mut layer.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Folds one batch's statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        let bns = self.layers.iter_mut().filter_map(|l| l.bn.as_mut());
        for (bn, s) in bns.zip(stats) {
            for (r, b) in bn.running_mean.iter_mut().zip(&s.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in bn.running_var.iter_mut().zip(&s.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks drawn from `dropout_seed`; batch-norm uses batch statistics.
    Train { dropout_seed: u64 },
    /// No dropout; batch-norm uses running statistics.
    Eval,
}

/// One recorded forward pass.
pub struct Forward<'a> {
    pub tape: Tape<'a>,
    /// Leaves of the trainable parameters, in [`Parameters::named`] order.
    pub params: Vec<Var>,
    pub embedding: Var,
    pub logits: Var,
    /// Batch statistics of each batch-norm layer (training mode only).
    pub batch_stats: Vec<BatchStats>,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, seed: u64, layer: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(layer as u64);
    let keep = 1.0 / (1.0 - p);
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect(),
    )
}

/// Records encoder and classifier on a fresh tape:
/// `h' = act(BN?(P · dropout(h) · W))` per layer (ReLU between layers, none
/// after the last), then `logits = Z W_head + b`.
pub fn forward<'a>(
    x: &Tensor,
    prop: &'a dyn Propagator,
    params: &Parameters,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Forward<'a>, LearningError> {
    let first = params.layers.first().ok_or_else(|| LearningError::Config("model has no layers".into()))?;
    if x.rows() != prop.dim() {
        return Err(LearningError::Shape {
            what: "feature rows vs propagation operator",
            expected: (prop.dim(), x.cols()),
            found: x.shape(),
        });
    }
    if x.cols() != first.weight.rows() {
        return Err(LearningError::Shape {
            what: "feature columns vs first-layer weight",
            expected: (x.rows(), first.weight.rows()),
            found: x.shape(),
        });
    }

    let mut tape = Tape::new();
    let mut param_vars = Vec::new();
    let mut h = tape.constant(x.clone());
    let mut batch_stats = Vec::new();
    let n_layers = params.layers.len();
    for (l, layer) in params.layers.iter().enumerate() {
        let w = tape.leaf(layer.weight.clone());
        param_vars.push(w);
        let bn_vars = layer.bn.as_ref().map(|bn| {
            let g = tape.leaf(bn.gamma.clone());
            let b = tape.leaf(bn.beta.clone());
            param_vars.push(g);
            param_vars.push(b);
            (g, b)
        });
        if let Mode::Train { dropout_seed } = mode {
            if cfg.dropout > 0.0 {
                let (r, c) = tape.value(h).shape();
                h = tape.mul_const(h, dropout_mask(r, c, cfg.dropout, dropout_seed, l));
            }
        }
        let propagated = tape.propagate(prop, h);
        h = tape.matmul(propagated, w);
        if let (Some((g, b)), Some(bn)) = (bn_vars, &layer.bn) {
            let fixed = match mode {
                Mode::Train { .. } => None,
                Mode::Eval => Some((&bn.running_mean[..], &bn.running_var[..])),
            };
            let (out, stats) = tape.batch_norm(h, g, b, BN_EPS, fixed);
            h = out;
            if fixed.is_none() {
                batch_stats.push(stats);
            }
        }
        if l + 1 < n_layers {
            h = tape.relu(h);
        }
    }
    let embedding = h;
    let hw = tape.leaf(params.head_weight.clone());
    let hb = tape.leaf(params.head_bias.clone());
    param_vars.push(hw);
    param_vars.push(hb);
    let zw = tape.matmul(embedding, hw);
    let logits = tape.add_bias(zw, hb);
    if !tape.value(logits).is_finite() {
        return Err(LearningError::NonFiniteLogits);
    }
    Ok(Forward {
        tape,
        params: param_vars,
        embedding,
        logits,
        batch_stats,
    })
}

/// Node embeddings `Z_homo` over a normalized adjacency.
pub fn gnn_forward(
    x: &Tensor,
    adjacency: &CsrMatrix,
    params: &Parameters,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Tensor, LearningError> {
    let f = forward(x, adjacency, params, cfg, mode)?;
    Ok(f.tape.value(f.embedding).clone())
}

/// Node embeddings `Z_hyper` over the two-stage hypergraph operator.
pub fn hgnn_forward(
    x: &Tensor,
    ops: &HypergraphOperators,
    params: &Parameters,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Tensor, LearningError> {
    let f = forward(x, ops, params, cfg, mode)?;
    Ok(f.tape.value(f.embedding).clone())
}

/// Row-wise `softmax(Z W + b)`.
pub fn classify(z: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, LearningError> {
    if z.cols() != w.rows() || b.shape() != (1, w.cols()) {
        return Err(LearningError::Shape {
            what: "classifier input vs head weight",
            expected: (z.rows(), w.rows()),
            found: z.shape(),
        });
    }
    let mut logits = z.matmul(w);
    for r in 0..logits.rows() {
        for (v, bv) in logits.row_mut(r).iter_mut().zip(b.row(0)) {
            *v += bv;
        }
    }
    if !logits.is_finite() {
        return Err(LearningError::NonFiniteLogits);
    }
    Ok(softmax_rows(&logits))
}

/// `(row, class)` pairs for the masked rows; every masked row must be labeled.
pub fn mask_targets(labels: &[Option<Class>], mask: &[u32]) -> Result<Vec<(usize, usize)>, LearningError> {
    if mask.is_empty() {
        return Err(LearningError::EmptyMask);
    }
    mask.iter()
        .map(|&r| match labels.get(r as usize) {
            Some(Some(c)) => Ok((r as usize, c.index())),
            _ => Err(LearningError::Unlabeled(r)),
        })
        .collect()
}

/// `-(1/N) Σ_i log p[i, y_i]` over the masked rows, probabilities clamped at 1e-12.
pub fn cross_entropy(p: &Tensor, labels: &[Option<Class>], mask: &[u32]) -> Result<f64, LearningError> {
    let targets = mask_targets(labels, mask)?;
    let total: f64 = targets.iter().map(|&(r, c)| p.get(r, c).max(PROB_FLOOR).ln()).sum();
    Ok(-total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

pub struct LossAndGrads {
    pub loss: f64,
    /// One per trainable tensor, in [`Parameters::named`] order.
    pub grads: Vec<Tensor>,
    pub batch_stats: Vec<BatchStats>,
}

impl Model {
    pub fn new(config: ModelConfig, in_dim: usize) -> Result<Self, LearningError> {
        config.validate()?;
        let params = Parameters::init(&config, in_dim);
        Ok(Self { config, params })
    }

    /// Class probabilities for every node, in evaluation mode.
    pub fn predict_proba(&self, x: &Tensor, prop: &dyn Propagator) -> Result<Tensor, LearningError> {
        let f = forward(x, prop, &self.params, &self.config, Mode::Eval)?;
        Ok(softmax_rows(f.tape.value(f.logits)))
    }

    pub fn embed(&self, x: &Tensor, prop: &dyn Propagator, mode: Mode) -> Result<Tensor, LearningError> {
        let f = forward(x, prop, &self.params, &self.config, mode)?;
        Ok(f.tape.value(f.embedding).clone())
    }

    /// Training-mode forward pass, cross-entropy over `mask`, and the exact
    /// gradient of that loss for every trainable tensor.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        prop: &dyn Propagator,
        labels: &[Option<Class>],
        mask: &[u32],
        dropout_seed: u64,
    ) -> Result<LossAndGrads, LearningError> {
        let targets = mask_targets(labels, mask)?;
        let mut f = forward(x, prop, &self.params, &self.config, Mode::Train { dropout_seed })?;
        let loss_var = f.tape.softmax_cross_entropy(f.logits, targets);
        let loss = f.tape.value(loss_var).get(0, 0);
        let g: Gradients = f.tape.backward(loss_var);
        let grads = f
            .params
            .iter()
            .map(|&v| g.get_or_zeros(v, f.tape.value(v).shape()))
            .collect();
        Ok(LossAndGrads {
            loss,
            grads,
            batch_stats: f.batch_stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_plain(hidden: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: hidden,
            dropout: 0.0,
            batch_norm: false,
            ..Default::default()
        }
    }

    #[test]
    fn identity_operator_and_weights_reproduce_input() {
        let cfg = cfg_plain(2);
        let mut params = Parameters::init(&cfg, 2);
        for layer in &mut params.layers {
            layer.weight = Tensor::identity(2);
        }
        // nonnegative input so the inner ReLU is the identity too
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5], vec![0.0, 4.0]]);
        let z = gnn_forward(&x, &CsrMatrix::identity(3), &params, &cfg, Mode::Eval).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn zero_input_gives_zero_embedding() {
        let cfg = cfg_plain(4);
        let params = Parameters::init(&cfg, 3);
        let z = gnn_forward(&Tensor::zeros(5, 3), &CsrMatrix::identity(5), &params, &cfg, Mode::Eval).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_on_path_graph() {
        let cfg = ModelConfig { layers: 1, ..cfg_plain(2) };
        let mut params = Parameters::init(&cfg, 2);
        let w = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]);
        params.layers[0].weight = w.clone();
        // normalized 3-node path 0-1-2 with self-loops: degrees (2, 3, 2)
        let s2 = 1.0 / 2.0;
        let s6 = 1.0 / 6f64.sqrt();
        let a = CsrMatrix::from_triplets(
            3,
            3,
            [(0, 0, s2), (0, 1, s6), (1, 0, s6), (1, 1, 1.0 / 3.0), (1, 2, s6), (2, 1, s6), (2, 2, s2)],
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0]]);
        let z = gnn_forward(&x, &a, &params, &cfg, Mode::Eval).unwrap();
        // hand algebra: Âx rows, then times W
        let ax = [
            [s2 * 1.0, s6 * 1.0],
            [s6 * 1.0 + s6 * 2.0, 1.0 / 3.0 + s6],
            [s2 * 2.0, s6 + s2],
        ];
        for r in 0..3 {
            let expect = [ax[r][0] * 1.0 + ax[r][1] * 0.5, -ax[r][0] + ax[r][1] * 2.0];
            for c in 0..2 {
                assert!((z.get(r, c) - expect[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = cfg_plain(4);
        let params = Parameters::init(&cfg, 3);
        let err = gnn_forward(&Tensor::zeros(5, 2), &CsrMatrix::identity(5), &params, &cfg, Mode::Eval).unwrap_err();
        assert!(matches!(err, LearningError::Shape { found: (5, 2), .. }));
        let err = gnn_forward(&Tensor::zeros(4, 3), &CsrMatrix::identity(5), &params, &cfg, Mode::Eval).unwrap_err();
        assert!(matches!(err, LearningError::Shape { .. }));
    }

    #[test]
    fn classify_symmetric_and_stable() {
        let w = Tensor::identity(2);
        let b = Tensor::zeros(1, 2);
        let p = classify(&Tensor::from_rows(&[vec![0.0, 0.0]]), &w, &b).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = classify(&Tensor::from_rows(&[vec![1000.0, 0.0]]), &w, &b).unwrap();
        assert!(p.is_finite());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-300_f64.max(1e-15));
        assert!(p.get(0, 1) >= 0.0 && p.get(0, 1) < 1e-300);
        let inf = classify(&Tensor::from_rows(&[vec![f64::INFINITY, 0.0]]), &w, &b);
        assert!(matches!(inf, Err(LearningError::NonFiniteLogits)));
    }

    #[test]
    fn cross_entropy_cases() {
        let labels = vec![Some(Class::Normal), Some(Class::Ponzi), None];
        let perfect = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert!(cross_entropy(&perfect, &labels, &[0, 1]).unwrap() <= 1e-10);
        let uniform = Tensor::full(3, 2, 0.5);
        assert!((cross_entropy(&uniform, &labels, &[0, 1]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy(&uniform, &labels, &[]), Err(LearningError::EmptyMask)));
        assert!(matches!(cross_entropy(&uniform, &labels, &[2]), Err(LearningError::Unlabeled(2))));
    }

    #[test]
    fn init_depends_only_on_seed_and_shape() {
        let a = ModelConfig { channel: Channel::Hyper, ..Default::default() };
        let b = ModelConfig { channel: Channel::HyperHomo, ..Default::default() };
        assert_eq!(Parameters::init(&a, 17), Parameters::init(&b, 17));
        let c = ModelConfig { seed: 1, ..a.clone() };
        assert_ne!(Parameters::init(&a, 17), Parameters::init(&c, 17));
    }

    #[test]
    fn channel_names_roundtrip() {
        for c in Channel::ALL {
            assert_eq!(c.as_str().parse::<Channel>().unwrap(), c);
        }
        assert!("gin".parse::<Channel>().is_err());
    }
}
