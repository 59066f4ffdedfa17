//! Dense tensors, a reverse-mode tape, the detection channels and training.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{
    classify, cross_entropy, gnn_forward, hgnn_forward, Channel, LayerParams, Mode, Model, ModelConfig, Parameters,
};
pub use optim::{adam_step, AdamState};
pub use tape::{Gradients, Propagator, Tape, Var};
pub use tensor::Tensor;
pub use train::{train, EpochRecord, TrainData, TrainRun};

#[derive(Debug, thiserror::Error)]
pub enum LearningError {
    #[error("{what}: expected {expected:?}, found {found:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("empty mask")]
    EmptyMask,
    #[error("row {0} is masked but unlabeled")]
    Unlabeled(u32),
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("run {config} diverged at epoch {epoch}: {reason}")]
    Diverged { config: String, epoch: usize, reason: String },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
