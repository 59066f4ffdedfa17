//! Confusion-matrix metrics and rank-sum AUC. The positive class is 1 (Ponzi).

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn binary_f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    /// F1 of class 0, i.e. with the roles of the classes swapped.
    pub fn negative_f1(&self) -> f64 {
        f1(ratio(self.tn, self.tn + self.fn_), ratio(self.tn, self.tn + self.fp))
    }

    pub fn macro_f1(&self) -> f64 {
        (self.binary_f1() + self.negative_f1()) / 2.0
    }

    pub fn summary(&self) -> ConfusionMetrics {
        ConfusionMetrics {
            precision: self.precision(),
            recall: self.recall(),
            binary_f1: self.binary_f1(),
            macro_f1: self.macro_f1(),
            confusion: *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub binary_f1: f64,
    pub macro_f1: f64,
    pub confusion: Confusion,
}

fn check_class(c: u8) -> Result<bool, EvalError> {
    match c {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(EvalError::InvalidClass(other)),
    }
}

pub fn confusion(predicted: &[u8], truth: &[u8]) -> Result<Confusion, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &t) in predicted.iter().zip(truth) {
        match (check_class(p)?, check_class(t)?) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn confusion_metrics(predicted: &[u8], truth: &[u8]) -> Result<ConfusionMetrics, EvalError> {
    Ok(confusion(predicted, truth)?.summary())
}

/// Exact Mann–Whitney statistic as `(2U, n_pos, n_neg)`, where `U` counts
/// positive-over-negative pairs with ties counted half.
pub fn twice_u(scores: &[f64], truth: &[u8]) -> Result<(u128, u64, u64), EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: truth.len(),
        });
    }
    let mut pos = Vec::with_capacity(scores.len());
    for (&s, &t) in scores.iter().zip(truth) {
        if s.is_nan() {
            return Err(EvalError::NanScore);
        }
        pos.push(check_class(t)?);
    }
    let n_pos = pos.iter().filter(|&&p| p).count() as u64;
    let n_neg = pos.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Doubled average rank of a tie block at 1-based positions a..=b is a + b.
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let twice_rank = (start + 1 + end + 1) as u128;
        let block_pos = order[start..=end].iter().filter(|&&i| pos[i]).count() as u128;
        twice_rank_sum += twice_rank * block_pos;
        start = end + 1;
    }
    let np = n_pos as u128;
    Ok((twice_rank_sum - np * (np + 1), n_pos, n_neg))
}

/// Area under the ROC curve via the rank-sum identity, O(n log n).
pub fn auc(scores: &[f64], truth: &[u8]) -> Result<f64, EvalError> {
    let (u2, p, n) = twice_u(scores, truth)?;
    Ok(u2 as f64 / (2.0 * p as f64 * n as f64))
}
