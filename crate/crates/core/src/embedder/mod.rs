//! Small fully connected embedder and its classifier head.
//!
//! Hidden layers are `relu(xW + b)`; the last layer is linear with no
//! nonlinearity, so embeddings can point anywhere on the hypersphere. The
//! angular head holds unit-norm, bias-free class weights that are projected
//! back onto the unit sphere after every optimizer step.

mod checkpoint;
mod train;

pub use checkpoint::{checkpoint_load, checkpoint_save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{learning_rate_at, loss_and_gradients, train, train_step, Gradients, LossKind, TrainConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{AnnealState, LossError};
use crate::numcore::{column_norms, normalize_columns, Matrix, NumError, Rng};

/// Columns shorter than this are reset to the first axis on projection.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input has {found} columns, model expects {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("{kind:?} loss cannot train a model with a {head} head")]
    HeadMismatch { kind: LossKind, head: &'static str },
    #[error("training diverged at iteration {iteration} (lambda = {lambda}, lr = {lr}): {reason}")]
    Diverged { iteration: u64, lambda: f64, lr: f64, reason: String },
    #[error("checkpoint byte offset {offset}: {msg}")]
    Checkpoint { offset: u64, msg: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    /// Input width, hidden widths, embedding width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        if self.layer_widths.len() < 2 {
            return Err(EmbedderError::InvalidConfig(format!(
                "layer_widths needs at least input and embedding widths, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(EmbedderError::InvalidConfig(format!("zero width in {:?}", self.layer_widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }
}

/// `y = xW + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// `d × K` class weights with unit-norm columns and no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    weights: Matrix,
}

impl ClassifierWeights {
    /// Normalizes the columns of `m`.
    pub fn new(m: &Matrix) -> Self {
        ClassifierWeights { weights: normalize_columns(m, NORMALIZE_EPS) }
    }

    /// Accepts `m` as is when every column is already unit-norm within `1e-9`.
    pub fn from_unit(m: Matrix) -> Result<Self, EmbedderError> {
        for (j, n) in column_norms(&m).into_iter().enumerate() {
            if (n - 1.0).abs() > crate::losses::UNIT_NORM_TOLERANCE {
                return Err(EmbedderError::InvalidConfig(format!("classifier column {j} has norm {n}")));
            }
        }
        Ok(ClassifierWeights { weights: m })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn class_count(&self) -> usize {
        self.weights.cols()
    }

    /// Gradient step followed by projection onto unit columns.
    pub(crate) fn step(&mut self, grad: &Matrix, lr: f64) {
        if lr == 0.0 {
            return;
        }
        let mut w = self.weights.clone();
        w.sub_scaled(grad, lr);
        self.weights = normalize_columns(&w, NORMALIZE_EPS);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierHead {
    /// Unit-norm, bias-free weights (modified softmax and A-Softmax).
    Angular(ClassifierWeights),
    /// Unconstrained weights with biases (plain softmax baseline).
    Linear { weights: Matrix, biases: Vec<f64> },
}

impl ClassifierHead {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierHead::Angular(_) => "angular",
            ClassifierHead::Linear { .. } => "linear",
        }
    }

    pub fn weights(&self) -> &Matrix {
        match self {
            ClassifierHead::Angular(c) => c.matrix(),
            ClassifierHead::Linear { weights, .. } => weights,
        }
    }

    pub fn class_count(&self) -> usize {
        self.weights().cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: EmbedderConfig,
    pub layers: Vec<Dense>,
    pub head: ClassifierHead,
    /// Set on the first A-Softmax step.
    pub anneal: Option<AnnealState>,
    pub iteration: u64,
}

/// Builds a seeded model. Hidden layers get He-uniform weights, the linear
/// embedding layer LeCun-uniform, biases start at zero. Class weights are
/// Gaussian columns scaled to unit norm; the linear head starts from the same
/// directions with zero biases, so both heads share initial logits.
pub fn init_model(cfg: &EmbedderConfig, k_classes: usize, kind: LossKind) -> Result<ModelState, EmbedderError> {
    cfg.validate()?;
    if k_classes < 2 {
        return Err(EmbedderError::InvalidConfig(format!("k_classes = {k_classes} (need >= 2)")));
    }
    let mut rng = Rng::new(cfg.seed);
    let n_layers = cfg.layer_widths.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (l, w) in cfg.layer_widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let gain = if l + 1 < n_layers { 6.0 } else { 3.0 };
        let bound = (gain / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
        layers.push(Dense { weights: Matrix::from_vec(fan_in, fan_out, data)?, biases: vec![0.0; fan_out] });
    }
    let d = cfg.embedding_dim();
    let raw = Matrix::from_vec(d, k_classes, (0..d * k_classes).map(|_| rng.normal()).collect())?;
    let unit = ClassifierWeights::new(&raw);
    let head = match kind {
        LossKind::Softmax => ClassifierHead::Linear { weights: unit.matrix().clone(), biases: vec![0.0; k_classes] },
        LossKind::Modified | LossKind::Asoftmax => ClassifierHead::Angular(unit),
    };
    Ok(ModelState { config: cfg.clone(), layers, head, anneal: None, iteration: 0 })
}

pub(crate) struct Forward {
    /// Input followed by the output of every layer (post-activation).
    pub activations: Vec<Matrix>,
}

pub(crate) fn forward(state: &ModelState, inputs: &Matrix) -> Result<Forward, EmbedderError> {
    let expected = state.config.input_dim();
    if inputs.cols() != expected {
        return Err(EmbedderError::InputWidth { expected, found: inputs.cols() });
    }
    let n_layers = state.layers.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(inputs.clone());
    for (l, layer) in state.layers.iter().enumerate() {
        let mut z = crate::numcore::matmul(activations.last().expect("non-empty"), &layer.weights)?;
        let hidden = l + 1 < n_layers;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.biases) {
                *v += b;
                if hidden && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        activations.push(z);
    }
    Ok(Forward { activations })
}

/// Embeds each input row. No nonlinearity follows the last layer.
pub fn embed(state: &ModelState, inputs: &Matrix) -> Result<Matrix, EmbedderError> {
    Ok(forward(state, inputs)?.activations.pop().expect("output layer"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(widths: &[usize]) -> EmbedderConfig {
        EmbedderConfig { layer_widths: widths.to_vec(), activation: Activation::Relu, seed: 21 }
    }

    #[test]
    fn init_is_deterministic_and_unit() {
        let a = init_model(&cfg(&[5, 8, 2]), 6, LossKind::Asoftmax).unwrap();
        let b = init_model(&cfg(&[5, 8, 2]), 6, LossKind::Asoftmax).unwrap();
        assert_eq!(a, b);
        for n in column_norms(a.head.weights()) {
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.head.class_count(), 6);
        let lin = init_model(&cfg(&[5, 8, 2]), 6, LossKind::Softmax).unwrap();
        assert_eq!(lin.head.weights(), a.head.weights());
    }

    #[test]
    fn invalid_configs() {
        assert!(init_model(&cfg(&[5]), 3, LossKind::Modified).is_err());
        assert!(init_model(&cfg(&[5, 0, 2]), 3, LossKind::Modified).is_err());
        assert!(init_model(&cfg(&[5, 2]), 1, LossKind::Modified).is_err());
    }

    #[test]
    fn linear_model_is_affine() {
        let mut s = init_model(&cfg(&[3, 2]), 2, LossKind::Modified).unwrap();
        s.layers[0].biases = vec![0.5, -0.25];
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]]).unwrap();
        let out = embed(&s, &x).unwrap();
        let mut expected = crate::numcore::matmul(&x, &s.layers[0].weights).unwrap();
        for r in 0..2 {
            for (v, b) in expected.row_mut(r).iter_mut().zip(&s.layers[0].biases) {
                *v += b;
            }
        }
        assert_eq!(out, expected);
    }

    #[test]
    fn embedding_can_be_negative() {
        let s = init_model(&cfg(&[4, 16, 3]), 3, LossKind::Modified).unwrap();
        let mut rng = Rng::new(1);
        let x = Matrix::from_vec(20, 4, (0..80).map(|_| rng.normal()).collect()).unwrap();
        let e = embed(&s, &x).unwrap();
        assert!(e.data().iter().any(|&v| v < 0.0));
        assert_eq!(embed(&s, &x).unwrap(), e);
    }

    #[test]
    fn width_mismatch() {
        let s = init_model(&cfg(&[4, 3]), 3, LossKind::Modified).unwrap();
        assert!(matches!(embed(&s, &Matrix::zeros(1, 5)), Err(EmbedderError::InputWidth { expected: 4, found: 5 })));
    }
}
