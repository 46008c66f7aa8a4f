//! Minimal reverse-mode neural-network core.
//!
//! Dense layers, stacked GRUs, additive attention over time steps, softmax
//! output with class-weighted cross-entropy, Adam, variational dropout, and a
//! finite-difference gradient checker. All parameters of a model live in one
//! flat `Vec<f64>`; layouts map named blocks to offset ranges, which keeps
//! optimizer state, serialization, and gradient checking uniform.

mod linalg;
mod mlp;
mod model;
mod ops;
mod train;

pub use linalg::Tensor2;
pub use mlp::{Act, Mlp, MlpCache};
pub use model::{
    attention_forward, grad_check, AttentionOutput, DropoutMasks, ForwardOutput, ModelShape,
    SequenceModel, SEQUENCE_MODEL_MAGIC,
};
pub use ops::{class_weights, softmax_in_place, weighted_softmax_ce, AdamState};
pub use train::{train, LabeledSequence};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, sequence {sequence}")]
    NonFiniteLoss { epoch: usize, sequence: usize },
}

/// Architecture and optimization settings for one sequence classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Input dropout fraction applied to what enters each recurrent layer.
    pub dropout: f64,
    /// Recurrent dropout fraction on h_{t-1} inside the gate inputs.
    pub recurrent_dropout: f64,
    /// Hidden units per recurrent layer.
    pub hidden: usize,
    pub recurrent_layers: usize,
    /// 1 = softmax head only; 2 = one tanh dense layer before the head.
    pub forward_layers: usize,
    /// Insert an attention layer between the recurrent stack and the head.
    pub attention: bool,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dropout: 0.35,
            recurrent_dropout: 0.65,
            hidden: 80,
            recurrent_layers: 5,
            forward_layers: 1,
            attention: true,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(NetError::InvalidConfig(
                "dropout fractions must lie in [0, 1)".into(),
            ));
        }
        if self.hidden == 0 || self.recurrent_layers == 0 {
            return Err(NetError::InvalidConfig(
                "hidden size and recurrent layer count must be at least 1".into(),
            ));
        }
        if !(1..=2).contains(&self.forward_layers) {
            return Err(NetError::InvalidConfig(
                "forward_layers must be 1 or 2".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}
