//! Closed-form angular geometry of the multiplicative angular margin.
//!
//! The target-class logit of A-Softmax replaces `cos θ` by the monotone
//! extension `ψ(θ) = (-1)^k cos(mθ) - 2k` for `θ ∈ [kπ/m, (k+1)π/m]`.
//! `cos(mθ)` itself is always evaluated as the Chebyshev polynomial
//! `T_m(cos θ)`, so gradients can be expressed in terms of the cosine alone.
//!
//! The `m_min` helpers evaluate the intra/inter-class angle inequalities
//! that bound the smallest margin for which the largest intra-class angle
//! stays below the smallest inter-class angle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{dot, norm};

/// Inputs this far outside `[-1, 1]` are clamped instead of rejected.
pub const COSINE_CLAMP_TOLERANCE: f64 = 1e-12;

/// Slack allowed when deciding whether a bound inequality holds.
const BOUND_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AngularError {
    #[error("angle {0} is outside [0, pi]")]
    AngleOutOfRange(f64),
    #[error("angle {0} is outside (0, pi]")]
    SeparationOutOfRange(f64),
    #[error("margin m = {m} is below the minimum {min}")]
    MarginTooSmall { m: u32, min: u32 },
    #[error("cosine {0} is outside [-1, 1]")]
    CosineOutOfRange(f64),
    #[error("zero-norm vector has no direction")]
    ZeroVector,
    #[error("class count {0} is below 3")]
    TooFewClasses(u32),
    #[error("invalid margin config: {0}")]
    InvalidConfig(String),
}

/// Margin multiplier and the λ annealing schedule of the blended target logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    pub m: u32,
    pub lambda_start: f64,
    pub lambda_min: f64,
    /// Hyperbolic decay rate per iteration.
    pub lambda_decay: f64,
}

impl MarginConfig {
    /// Pure ψ logit from the first iteration (λ fixed at 0).
    pub fn fixed(m: u32) -> Self {
        MarginConfig { m, lambda_start: 0.0, lambda_min: 0.0, lambda_decay: 0.0 }
    }

    pub fn validate(&self) -> Result<(), AngularError> {
        if self.m < 1 {
            return Err(AngularError::MarginTooSmall { m: self.m, min: 1 });
        }
        let finite = [self.lambda_start, self.lambda_min, self.lambda_decay].iter().all(|v| v.is_finite());
        if !finite || self.lambda_start < 0.0 || self.lambda_min < 0.0 || self.lambda_decay < 0.0 {
            return Err(AngularError::InvalidConfig("lambda values must be finite and >= 0".into()));
        }
        if self.lambda_min > self.lambda_start {
            return Err(AngularError::InvalidConfig(format!("lambda_min {} exceeds lambda_start {}", self.lambda_min, self.lambda_start)));
        }
        Ok(())
    }
}

fn check_margin(m: u32, min: u32) -> Result<(), AngularError> {
    if m < min {
        Err(AngularError::MarginTooSmall { m, min })
    } else {
        Ok(())
    }
}

/// Segment index `k = floor(θm/π)` clamped to `[0, m-1]`.
pub fn psi_segment(theta: f64, m: u32) -> u32 {
    let k = (theta * f64::from(m) / PI).floor();
    if k <= 0.0 {
        0
    } else {
        (k as u32).min(m - 1)
    }
}

/// `ψ(θ) = (-1)^k cos(mθ) - 2k`, monotonically decreasing on `[0, π]`.
pub fn psi(theta: f64, m: u32) -> Result<f64, AngularError> {
    check_margin(m, 1)?;
    if !(0.0..=PI).contains(&theta) {
        return Err(AngularError::AngleOutOfRange(theta));
    }
    let k = psi_segment(theta, m);
    let c = (f64::from(m) * theta).cos();
    Ok(sign(k) * c - 2.0 * f64::from(k))
}

/// ψ evaluated from `cos θ` through `T_m`, together with `dψ/d(cos θ)` and the
/// segment index. This is the form the loss backward pass uses.
pub fn psi_from_cos(cos_theta: f64, m: u32) -> Result<(f64, f64, u32), AngularError> {
    let c = clamp_cosine(cos_theta)?;
    check_margin(m, 1)?;
    let k = psi_segment(c.acos(), m);
    let s = sign(k);
    let value = s * chebyshev_t(c, m) - 2.0 * f64::from(k);
    let slope = s * f64::from(m) * chebyshev_u(c, m - 1);
    Ok((value, slope, k))
}

fn sign(k: u32) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Clamps small floating-point drift past ±1; larger violations are errors.
pub fn clamp_cosine(c: f64) -> Result<f64, AngularError> {
    if !c.is_finite() || c.abs() > 1.0 + COSINE_CLAMP_TOLERANCE {
        return Err(AngularError::CosineOutOfRange(c));
    }
    Ok(c.clamp(-1.0, 1.0))
}

fn chebyshev_t(c: f64, m: u32) -> f64 {
    let (mut prev, mut cur) = (1.0, c);
    if m == 0 {
        return prev;
    }
    for _ in 1..m {
        let next = 2.0 * c * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn chebyshev_u(c: f64, n: u32) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * c);
    if n == 0 {
        return prev;
    }
    for _ in 1..n {
        let next = 2.0 * c * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `cos(mθ)` as the degree-m Chebyshev polynomial in `cos θ`.
pub fn cos_multiple(cos_theta: f64, m: u32) -> Result<f64, AngularError> {
    check_margin(m, 1)?;
    Ok(chebyshev_t(clamp_cosine(cos_theta)?, m))
}

/// `d/dc T_m(c) = m U_{m-1}(c)`.
pub fn cos_multiple_derivative(cos_theta: f64, m: u32) -> Result<f64, AngularError> {
    check_margin(m, 1)?;
    Ok(f64::from(m) * chebyshev_u(clamp_cosine(cos_theta)?, m - 1))
}

/// Angular gap `(m-1)/(m+1) · θ12` between the two stringent decision regions.
pub fn angular_margin(theta12: f64, m: u32) -> Result<f64, AngularError> {
    check_margin(m, 2)?;
    if !(theta12 > 0.0 && theta12 <= PI) {
        return Err(AngularError::SeparationOutOfRange(theta12));
    }
    let m = f64::from(m);
    Ok((m - 1.0) / (m + 1.0) * theta12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryDecision {
    Class1,
    Class2,
    /// Inside the margin band: neither stringent condition holds.
    Neither,
}

/// Binary A-Softmax decision rule with unit weights `w1`, `w2`.
pub fn classify_binary(x: &[f64], w1: &[f64], w2: &[f64], m: u32) -> Result<BinaryDecision, AngularError> {
    check_margin(m, 1)?;
    let r = norm(x);
    if r == 0.0 || !r.is_finite() {
        return Err(AngularError::ZeroVector);
    }
    let c1 = clamp_cosine(dot(x, w1) / r)?;
    let c2 = clamp_cosine(dot(x, w2) / r)?;
    let limit = PI / f64::from(m);
    if c1.acos() <= limit && chebyshev_t(c1, m) > c2 {
        Ok(BinaryDecision::Class1)
    } else if c2.acos() <= limit && chebyshev_t(c2, m) > c1 {
        Ok(BinaryDecision::Class2)
    } else {
        Ok(BinaryDecision::Neither)
    }
}

/// Min inter-class angle minus max intra-class angle in the binary case, for a
/// real-valued margin `m > 1`. Non-negative exactly when the bound holds.
///
/// For `θ12 ≤ (m-1)π/m` the intra-class span is `θ12/(m-1) + θ12/(m+1)`;
/// beyond that it wraps around the circle and becomes `2π/(m+1)`.
pub fn binary_bound_slack(m: f64, theta12: f64) -> f64 {
    let inter = (m - 1.0) * theta12 / (m + 1.0);
    let intra = if theta12 <= (m - 1.0) * PI / m {
        theta12 / (m - 1.0) + theta12 / (m + 1.0)
    } else {
        (2.0 * PI - theta12) / (m + 1.0) + theta12 / (m + 1.0)
    };
    inter - intra
}

/// Whether the binary max-intra ≤ min-inter inequality holds at `θ12`.
/// Always false for `m < 2`, where no margin exists.
pub fn bound_inequalities_hold(m: u32, theta12: f64) -> bool {
    m >= 2 && theta12 > 0.0 && theta12 <= PI && binary_bound_slack(f64::from(m), theta12) >= -BOUND_TOLERANCE
}

/// Closed-form lower bound on `m_min` for two classes: `2 + √3`.
pub fn m_min_binary() -> f64 {
    2.0 + 3f64.sqrt()
}

/// Root of the binary boundary equation `1/(m-1) + 1/(m+1) = (m-1)/(m+1)`,
/// found by bisection on `(2, 10]`.
pub fn binary_bound_root() -> f64 {
    let g = |m: f64| 1.0 / (m - 1.0) + 1.0 / (m + 1.0) - (m - 1.0) / (m + 1.0);
    let (mut lo, mut hi) = (2.5, 10.0);
    debug_assert!(g(lo) > 0.0 && g(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Uniform grid `θ_i = iπ/points`, `i = 1..=points`, over `(0, π]`.
pub fn separation_grid(points: usize) -> impl Iterator<Item = f64> {
    (1..=points).map(move |i| PI * i as f64 / points as f64)
}

/// Whether the binary bound holds at every point of the separation grid.
pub fn binary_bound_holds_on_grid(m: u32, points: usize) -> bool {
    separation_grid(points).all(|t| bound_inequalities_hold(m, t))
}

/// Multi-class lower bound on `m_min` under uniformly spaced class weights.
/// The adjacent angle `2π/k` cancels, so the bound does not depend on `k`.
pub fn m_min_multiclass(k: u32) -> Result<f64, AngularError> {
    if k < 3 {
        return Err(AngularError::TooFewClasses(k));
    }
    Ok(3.0)
}

/// Slack of the multi-class inequality for a class whose neighbours sit at
/// angles `theta_next` and `theta_prev`. Non-negative when it holds.
pub fn adjacent_bound_slack(m: f64, theta_next: f64, theta_prev: f64) -> f64 {
    let intra = (theta_next + theta_prev) / (m + 1.0);
    let inter = ((m - 1.0) * theta_next / (m + 1.0)).min((m - 1.0) * theta_prev / (m + 1.0));
    inter - intra
}

/// Multi-class inequality with `k` weights uniformly spaced on the circle.
pub fn multiclass_bound_holds(m: u32, k: u32) -> Result<bool, AngularError> {
    if k < 3 {
        return Err(AngularError::TooFewClasses(k));
    }
    let theta = 2.0 * PI / f64::from(k);
    Ok(adjacent_bound_slack(f64::from(m), theta, theta) >= -BOUND_TOLERANCE)
}
