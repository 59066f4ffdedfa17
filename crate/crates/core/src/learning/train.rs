//! Full-batch training with model selection on validation macro-F1.

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Parameters};
use super::optim::{adam_step, AdamState};
use super::{LearningError, Propagator, Tensor};
use crate::eval::metrics::{auc, confusion_metrics, ConfusionMetrics};
use crate::model::{Class, Masks};

const DROPOUT_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Everything a run needs besides its configuration. Features are expected to
/// be normalized with statistics of the training rows only.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a Tensor,
    pub propagator: &'a dyn Propagator,
    /// Class per row; `None` for unlabeled rows.
    pub labels: &'a [Option<Class>],
    pub masks: &'a Masks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_macro_f1: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub val_auc: Option<f64>,
    pub params: Parameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: ModelConfig,
    /// Parameters after the last epoch.
    pub params: Parameters,
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
    pub best: Snapshot,
}

/// Scores of one split of the labeled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub metrics: ConfusionMetrics,
    /// Undefined when the split holds a single class.
    pub auc: Option<f64>,
}

impl TrainRun {
    /// The selected model: configuration plus best-epoch parameters.
    pub fn best_model(&self) -> Model {
        Model {
            config: self.config.clone(),
            params: self.best.params.clone(),
        }
    }
}

fn dropout_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(DROPOUT_SEED_STRIDE)
}

/// Argmax predictions and Ponzi probabilities of `probs` on `mask`.
pub fn score_rows(probs: &Tensor, labels: &[Option<Class>], mask: &[u32]) -> Result<SplitScores, LearningError> {
    let mut pred = Vec::with_capacity(mask.len());
    let mut truth = Vec::with_capacity(mask.len());
    let mut score = Vec::with_capacity(mask.len());
    for &r in mask {
        let c = labels
            .get(r as usize)
            .copied()
            .flatten()
            .ok_or(LearningError::Unlabeled(r))?;
        let p1 = probs.get(r as usize, 1);
        pred.push(u8::from(p1 > probs.get(r as usize, 0)));
        truth.push(c as u8);
        score.push(p1);
    }
    let metrics = confusion_metrics(&pred, &truth).map_err(|_| LearningError::EmptyMask)?;
    Ok(SplitScores {
        metrics,
        auc: auc(&score, &truth).ok(),
    })
}

fn better(f1: f64, auc: Option<f64>, best: &Snapshot) -> bool {
    if f1 != best.val_macro_f1 {
        return f1 > best.val_macro_f1;
    }
    auc.unwrap_or(f64::NEG_INFINITY) > best.val_auc.unwrap_or(f64::NEG_INFINITY)
}

/// Trains `cfg.epochs` full-batch epochs and keeps the epoch with the highest
/// validation macro-F1 (then validation AUC, then the earliest).
pub fn train(data: &TrainData<'_>, cfg: &ModelConfig) -> Result<TrainRun, LearningError> {
    cfg.validate()?;
    if data.labels.len() != data.features.rows() {
        return Err(LearningError::Shape {
            what: "label rows vs feature rows",
            expected: (data.features.rows(), 1),
            found: (data.labels.len(), 1),
        });
    }
    let mut model = Model::new(cfg.clone(), data.features.cols())?;
    let names = model.params.names();
    let mut optimizer = AdamState::new(model.params.named().into_iter().map(|(_, t)| t));
    let diverged = |epoch: usize, reason: String| LearningError::Diverged {
        config: cfg.label(),
        epoch,
        reason,
    };

    let initial = score_rows(
        &model.predict_proba(data.features, data.propagator)?,
        data.labels,
        &data.masks.val,
    )?;
    let mut best = Snapshot {
        epoch: 0,
        val_macro_f1: initial.metrics.macro_f1,
        val_auc: initial.auc,
        params: model.params.clone(),
    };
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let step = model
            .loss_and_grads(
                data.features,
                data.propagator,
                data.labels,
                &data.masks.train,
                dropout_seed(cfg.seed, epoch),
            )
            .map_err(|e| match e {
                LearningError::NonFiniteLogits => diverged(epoch, e.to_string()),
                other => other,
            })?;
        if !step.loss.is_finite() {
            return Err(diverged(epoch, format!("training loss {}", step.loss)));
        }
        model.params.update_running_stats(&step.batch_stats);
        adam_step(
            &mut model.params.trainable_mut(),
            &step.grads,
            &names,
            &mut optimizer,
            cfg.lr,
            cfg.weight_decay,
        )
        .map_err(|e| diverged(epoch, e.to_string()))?;

        let probs = model
            .predict_proba(data.features, data.propagator)
            .map_err(|e| match e {
                LearningError::NonFiniteLogits => diverged(epoch, e.to_string()),
                other => other,
            })?;
        let val = score_rows(&probs, data.labels, &data.masks.val)?;
        history.push(EpochRecord {
            epoch,
            loss: step.loss,
            val_macro_f1: val.metrics.macro_f1,
            val_auc: val.auc,
        });
        if better(val.metrics.macro_f1, val.auc, &best) {
            best = Snapshot {
                epoch,
                val_macro_f1: val.metrics.macro_f1,
                val_auc: val.auc,
                params: model.params.clone(),
            };
        }
    }
    log::debug!(
        "{}: best epoch {} val macro-F1 {:.4}",
        cfg.label(),
        best.epoch,
        best.val_macro_f1
    );
    Ok(TrainRun {
        config: cfg.clone(),
        params: model.params,
        optimizer,
        history,
        best,
    })
}

/// Scores the selected model of `run` on `mask`.
pub fn evaluate_run(run: &TrainRun, data: &TrainData<'_>, mask: &[u32]) -> Result<SplitScores, LearningError> {
    let probs = run.best_model().predict_proba(data.features, data.propagator)?;
    score_rows(&probs, data.labels, mask)
}
