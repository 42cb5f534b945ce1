//! Softmax, modified softmax and A-Softmax cross-entropy with analytic gradients.
//!
//! All three share one forward/backward routine and differ only in how the
//! logits are formed:
//!
//! | loss     | `f_j`                           | target `f_y`                                   |
//! |----------|---------------------------------|------------------------------------------------|
//! | softmax  | `W_jᵀx + b_j`                   | same                                           |
//! | modified | `W_jᵀx` (unit `W_j`)            | same                                           |
//! | A-Softmax| `W_jᵀx` (unit `W_j`)            | `(λ‖x‖cos θ + ‖x‖ψ(θ)) / (1 + λ)`              |
//!
//! The reduction over the batch is the mean. Classifier weights are treated as
//! free parameters: renormalization to unit columns is a projection applied by
//! the optimizer after each step, not something the gradient differentiates
//! through.

use std::f64::consts::PI;

use thiserror::Error;

use crate::angular::{self, AngularError, MarginConfig};
use crate::numcore::{column_norms, dot, norm, par, Matrix};

/// Lower bound on `‖x‖` when forming `cos θ = Wᵀx / ‖x‖`.
pub const FEATURE_NORM_EPS: f64 = 1e-12;

/// Allowed deviation of a classifier column norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("features have {features} columns but weights have {weights} rows")]
    FeatureDim { features: usize, weights: usize },
    #[error("{labels} labels for {rows} feature rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("{biases} biases for {classes} classes")]
    BiasCount { biases: usize, classes: usize },
    #[error("label {label} at sample {sample} is outside [0, {classes})")]
    LabelOutOfRange { sample: usize, label: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("weight column {column} has norm {norm}, expected 1")]
    NotUnitColumn { column: usize, norm: f64 },
    #[error("sample {0} has a zero-norm feature vector")]
    ZeroFeature(usize),
    #[error(transparent)]
    Angular(#[from] AngularError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    pub grad_features: Matrix,
    pub grad_weights: Matrix,
    /// Only populated by [`softmax_loss`].
    pub grad_biases: Option<Vec<f64>>,
    pub per_sample_loss: Vec<f64>,
    /// Angle between each sample and its target weight column, in radians.
    pub per_sample_target_angle: Vec<f64>,
}

/// Iteration counter and current blend weight λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealState {
    pub iteration: u64,
    pub lambda: f64,
}

impl AnnealState {
    pub fn new(config: &MarginConfig) -> Self {
        AnnealState { iteration: 0, lambda: config.lambda_start }
    }
}

/// One annealing step: `λ = max(λ_min, λ_start / (1 + decay · t))` with the
/// incremented iteration count `t`.
pub fn advance_anneal(state: AnnealState, config: &MarginConfig) -> AnnealState {
    let iteration = state.iteration + 1;
    let decayed = config.lambda_start / (1.0 + config.lambda_decay * iteration as f64);
    AnnealState { iteration, lambda: decayed.max(config.lambda_min) }
}

#[derive(Clone, Copy)]
enum Head<'a> {
    Linear { biases: Option<&'a [f64]> },
    Margin { m: u32, lambda: f64 },
}

struct SampleTerms {
    loss: f64,
    angle: f64,
    /// `∂L_i/∂f_ij` scaled by `1/N`.
    dlogit: Vec<f64>,
    /// Multiplier on `x_i` for the target column of the weight gradient.
    target_weight_coef: f64,
    grad_x: Vec<f64>,
}

fn validate(features: &Matrix, weights: &Matrix, labels: &[usize]) -> Result<(), LossError> {
    if features.cols() != weights.rows() {
        return Err(LossError::FeatureDim { features: features.cols(), weights: weights.rows() });
    }
    if labels.len() != features.rows() {
        return Err(LossError::LabelCount { labels: labels.len(), rows: features.rows() });
    }
    if labels.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let classes = weights.cols();
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(LossError::LabelOutOfRange { sample, label, classes });
    }
    if !features.is_finite() {
        return Err(LossError::NonFinite("features"));
    }
    if !weights.is_finite() {
        return Err(LossError::NonFinite("weights"));
    }
    Ok(())
}

fn check_unit_columns(weights: &Matrix) -> Result<(), LossError> {
    match column_norms(weights).into_iter().enumerate().find(|(_, n)| (n - 1.0).abs() > UNIT_NORM_TOLERANCE) {
        Some((column, norm)) => Err(LossError::NotUnitColumn { column, norm }),
        None => Ok(()),
    }
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < FEATURE_NORM_EPS || nb < FEATURE_NORM_EPS {
        return PI / 2.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

fn sample_terms(x: &[f64], weight_cols: &Matrix, label: usize, head: Head<'_>, scale: f64) -> Result<SampleTerms, LossError> {
    let k = weight_cols.rows();
    let mut logits: Vec<f64> = (0..k).map(|j| dot(x, weight_cols.row(j))).collect();
    let w_y = weight_cols.row(label);
    let mut angle = angle_between(x, w_y);

    // dfy_dx = ∂f_y/∂x; target_weight_coef such that ∂f_y/∂W_y = coef · x.
    let mut dfy_dx: Vec<f64> = w_y.to_vec();
    let mut target_weight_coef = 1.0;

    match head {
        Head::Linear { biases } => {
            if let Some(b) = biases {
                for (f, bj) in logits.iter_mut().zip(b) {
                    *f += bj;
                }
            }
        }
        Head::Margin { m, lambda } => {
            let r = norm(x).max(FEATURE_NORM_EPS);
            let dot_y = logits[label];
            let cos = angular::clamp_cosine(dot_y / r)?;
            angle = cos.acos();
            let (psi, dpsi, _) = angular::psi_from_cos(cos, m)?;
            let blend = 1.0 + lambda;
            logits[label] = (lambda * dot_y + r * psi) / blend;
            // ∂f_y/∂x = (λW_y + ψ x̂ + ψ'(W_y − c x̂)) / (1+λ)
            for (d, (&w, &xi)) in dfy_dx.iter_mut().zip(w_y.iter().zip(x)) {
                let xhat = xi / r;
                *d = (lambda * w + psi * xhat + dpsi * (w - cos * xhat)) / blend;
            }
            target_weight_coef = (lambda + dpsi) / blend;
        }
    }

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|f| (f - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];

    let mut dlogit: Vec<f64> = exps.iter().map(|e| e / sum * scale).collect();
    dlogit[label] -= scale;

    let mut grad_x = vec![0.0; x.len()];
    for (j, &g) in dlogit.iter().enumerate() {
        let dir = if j == label { &dfy_dx[..] } else { weight_cols.row(j) };
        for (gx, &d) in grad_x.iter_mut().zip(dir) {
            *gx += g * d;
        }
    }

    Ok(SampleTerms { loss, angle, dlogit, target_weight_coef, grad_x })
}

fn cross_entropy(features: &Matrix, weights: &Matrix, labels: &[usize], head: Head<'_>) -> Result<LossOutput, LossError> {
    let n = features.rows();
    let d = features.cols();
    let k = weights.cols();
    let scale = 1.0 / n as f64;
    // K×d so each class weight is a contiguous row.
    let weight_cols = weights.transpose();

    let terms: Vec<SampleTerms> =
        par::map_range(n, |i| sample_terms(features.row(i), &weight_cols, labels[i], head, scale)).into_iter().collect::<Result<_, _>>()?;

    let per_sample_loss: Vec<f64> = terms.iter().map(|t| t.loss).collect();
    let loss = par::pairwise_sum(&per_sample_loss) * scale;
    if !loss.is_finite() {
        return Err(LossError::NonFinite("loss"));
    }

    let mut grad_features = Matrix::zeros(n, d);
    for (i, t) in terms.iter().enumerate() {
        grad_features.row_mut(i).copy_from_slice(&t.grad_x);
    }

    // Column j of the weight gradient: Σ_i coef_ij x_i, accumulated in sample
    // order so the result does not depend on the worker count.
    let mut grad_cols = vec![0.0; k * d];
    par::for_each_chunk_mut(&mut grad_cols, d.max(1), |j, col| {
        for (i, t) in terms.iter().enumerate() {
            let mut coef = t.dlogit[j];
            if labels[i] == j {
                coef *= t.target_weight_coef;
            }
            if coef != 0.0 {
                for (g, &x) in col.iter_mut().zip(features.row(i)) {
                    *g += coef * x;
                }
            }
        }
    });
    let grad_weights = Matrix::from_vec(k, d, grad_cols).map_err(|_| LossError::NonFinite("weight gradient"))?.transpose();

    let grad_biases = match head {
        Head::Linear { biases: Some(_) } => Some(
            (0..k)
                .map(|j| {
                    let col: Vec<f64> = terms.iter().map(|t| t.dlogit[j]).collect();
                    par::pairwise_sum(&col)
                })
                .collect(),
        ),
        _ => None,
    };

    if !grad_features.is_finite() {
        return Err(LossError::NonFinite("feature gradient"));
    }

    Ok(LossOutput {
        loss,
        grad_features,
        grad_weights,
        grad_biases,
        per_sample_loss,
        per_sample_target_angle: terms.iter().map(|t| t.angle).collect(),
    })
}

/// Plain softmax cross-entropy over `f = xW + b`.
pub fn softmax_loss(features: &Matrix, weights: &Matrix, biases: &[f64], labels: &[usize]) -> Result<LossOutput, LossError> {
    validate(features, weights, labels)?;
    if biases.len() != weights.cols() {
        return Err(LossError::BiasCount { biases: biases.len(), classes: weights.cols() });
    }
    if biases.iter().any(|b| !b.is_finite()) {
        return Err(LossError::NonFinite("biases"));
    }
    cross_entropy(features, weights, labels, Head::Linear { biases: Some(biases) })
}

/// Softmax with unit-norm, bias-free classifier columns: logits `‖x‖ cos θ_j`.
pub fn modified_softmax_loss(features: &Matrix, weights: &Matrix, labels: &[usize]) -> Result<LossOutput, LossError> {
    validate(features, weights, labels)?;
    check_unit_columns(weights)?;
    cross_entropy(features, weights, labels, Head::Linear { biases: None })
}

/// A-Softmax with the λ-blended target logit. `λ = 0` is the pure ψ logit.
pub fn asoftmax_loss(
    features: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    config: &MarginConfig,
    anneal: &AnnealState,
) -> Result<LossOutput, LossError> {
    validate(features, weights, labels)?;
    check_unit_columns(weights)?;
    asoftmax_loss_unchecked(features, weights, labels, config.m, anneal.lambda)
}

/// [`asoftmax_loss`] without the unit-column check, so finite-difference
/// probes may perturb individual weight entries.
pub fn asoftmax_loss_unchecked(
    features: &Matrix,
    weights: &Matrix,
    labels: &[usize],
    m: u32,
    lambda: f64,
) -> Result<LossOutput, LossError> {
    validate(features, weights, labels)?;
    if m < 1 {
        return Err(AngularError::MarginTooSmall { m, min: 1 }.into());
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(AngularError::InvalidConfig(format!("lambda {lambda} must be finite and >= 0")).into());
    }
    cross_entropy(features, weights, labels, Head::Margin { m, lambda })
}

/// [`modified_softmax_loss`] without the unit-column check.
pub fn modified_softmax_loss_unchecked(features: &Matrix, weights: &Matrix, labels: &[usize]) -> Result<LossOutput, LossError> {
    validate(features, weights, labels)?;
    cross_entropy(features, weights, labels, Head::Linear { biases: None })
}

/// Target logit restricted to the first ψ segment: `‖x‖ cos(mθ)` for
/// `θ ∈ [0, π/m]`. Outside that range it is not monotone, which is what ψ fixes.
pub fn restricted_target_logit(x: &[f64], w_target: &[f64], m: u32) -> Result<f64, LossError> {
    let r = norm(x);
    if r == 0.0 {
        return Err(LossError::ZeroFeature(0));
    }
    let c = angular::clamp_cosine(dot(x, w_target) / r)?;
    if c.acos() > PI / f64::from(m.max(1)) + 1e-15 {
        return Err(AngularError::AngleOutOfRange(c.acos()).into());
    }
    Ok(r * angular::cos_multiple(c, m)?)
}

/// The A-Softmax target logit `(λ‖x‖cos θ + ‖x‖ψ(θ)) / (1+λ)` for one sample.
pub fn asoftmax_target_logit(x: &[f64], w_target: &[f64], m: u32, lambda: f64) -> Result<f64, LossError> {
    let r = norm(x);
    if r == 0.0 {
        return Err(LossError::ZeroFeature(0));
    }
    let dot_y = dot(x, w_target);
    let c = angular::clamp_cosine(dot_y / r)?;
    let (psi, _, _) = angular::psi_from_cos(c, m)?;
    Ok((lambda * dot_y + r * psi) / (1.0 + lambda))
}
