//! Adam with an L2 penalty folded into the gradient.

use super::{LearningError, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'t>(shapes: impl IntoIterator<Item = &'t Tensor>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One Adam update over every parameter. `names` is used only for error reports.
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), LearningError> {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state not aligned with parameters");
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(LearningError::NonFiniteGradient {
                param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            });
        }
        assert_eq!(g.shape(), params[i].shape(), "gradient shape for parameter {i}");
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g[k] + weight_decay * *w;
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *w -= lr * mh / (vh.sqrt() + EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step1(p: &mut Tensor, g: &Tensor, st: &mut AdamState, lr: f64, wd: f64) -> Result<(), LearningError> {
        adam_step(&mut [p], std::slice::from_ref(g), &["p".to_string()], st, lr, wd)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_rows(&[vec![1.5, -2.0]]);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        for _ in 0..5 {
            step1(&mut p, &Tensor::zeros(1, 2), &mut st, 0.1, 0.0).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02, 1e4] {
            let mut p = Tensor::zeros(1, 1);
            let mut st = AdamState::new([&p]);
            step1(&mut p, &Tensor::full(1, 1, g), &mut st, 0.01, 0.0).unwrap();
            assert!((p.get(0, 0) + 0.01 * f64::signum(g)).abs() < 1e-8);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x) = |x - c|^2 / 2, minimum value 0 at c
        let c = [3.0, -1.0, 0.5, 2.0, 0.0];
        let offsets = [0.1, -0.1, 0.05, -0.02, 0.08];
        let mut p = Tensor::from_vec(1, 5, c.iter().zip(offsets).map(|(a, d)| a + d).collect());
        let mut st = AdamState::new([&p]);
        for _ in 0..100 {
            let g = Tensor::from_vec(1, 5, p.data().iter().zip(c).map(|(x, a)| x - a).collect());
            step1(&mut p, &g, &mut st, 0.01, 0.0).unwrap();
        }
        let f: f64 = p.data().iter().zip(c).map(|(x, a)| 0.5 * (x - a) * (x - a)).sum();
        assert!(f < 1e-6, "{f}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::zeros(1, 1);
        let mut st = AdamState::new([&p]);
        let err = step1(&mut p, &Tensor::full(1, 1, f64::NAN), &mut st, 0.1, 0.0).unwrap_err();
        assert!(matches!(err, LearningError::NonFiniteGradient { ref param } if param == "p"));
        assert_eq!(st.step, 0);
    }
}
