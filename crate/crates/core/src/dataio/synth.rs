use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledBatch};
use crate::numcore::{dot, norm, Matrix, Rng};

/// Candidate directions drawn per class center; the one farthest from the
/// centers already placed is kept.
const CENTER_CANDIDATES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Maximum angle (radians) between a sample and its class center.
    pub angular_spread: f64,
    /// Sample norms are drawn uniformly from `1 ± radius_jitter`.
    pub radius_jitter: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Invalid(msg));
        if self.k_classes < 2 {
            return bad(format!("k_classes = {} (need >= 2)", self.k_classes));
        }
        if self.per_class < 1 {
            return bad("per_class must be >= 1".into());
        }
        if self.dim < 2 {
            return bad(format!("dim = {} (need >= 2)", self.dim));
        }
        if !(self.angular_spread > 0.0 && self.angular_spread < FRAC_PI_2) {
            return bad(format!("angular_spread = {} must lie in (0, pi/2)", self.angular_spread));
        }
        if !(0.0..1.0).contains(&self.radius_jitter) {
            return bad(format!("radius_jitter = {} must lie in [0, 1)", self.radius_jitter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub batch: LabeledBatch,
    /// Unit class-center directions, one per row.
    pub centers: Matrix,
    pub min_center_angle: f64,
    /// Set when the centers are closer than twice the spread, so classes may overlap.
    pub warning: Option<String>,
}

fn unit_normal(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

fn place_centers(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    if spec.dim == 2 {
        return (0..spec.k_classes)
            .map(|j| {
                let a = TAU * j as f64 / spec.k_classes as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.k_classes);
    for _ in 0..spec.k_classes {
        let mut best = unit_normal(rng, spec.dim);
        let mut best_sep = centers.iter().map(|c| angle(c, &best)).fold(f64::INFINITY, f64::min);
        for _ in 1..CENTER_CANDIDATES {
            let cand = unit_normal(rng, spec.dim);
            let sep = centers.iter().map(|c| angle(c, &cand)).fold(f64::INFINITY, f64::min);
            if sep > best_sep {
                best = cand;
                best_sep = sep;
            }
        }
        centers.push(best);
    }
    centers
}

/// A sample at angle at most `spread` from unit `center`, with jittered norm.
fn sample_around(center: &[f64], spec: &SyntheticSpec, rng: &mut Rng) -> Vec<f64> {
    let tangent = loop {
        let mut u: Vec<f64> = (0..spec.dim).map(|_| rng.normal()).collect();
        let proj = dot(&u, center);
        for (ui, ci) in u.iter_mut().zip(center) {
            *ui -= proj * ci;
        }
        let n = norm(&u);
        if n > 1e-8 {
            break u.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let alpha = spec.angular_spread * rng.next_f64();
    let radius = 1.0 + spec.radius_jitter * rng.uniform(-1.0, 1.0);
    center.iter().zip(&tangent).map(|(c, t)| radius * (alpha.cos() * c + alpha.sin() * t)).collect()
}

fn draw(centers: &[Vec<f64>], spec: &SyntheticSpec, per_class: usize, rng: &mut Rng) -> LabeledBatch {
    let mut data = Vec::with_capacity(centers.len() * per_class * spec.dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(sample_around(c, spec, rng));
            labels.push(label);
        }
    }
    let features = Matrix::from_vec(labels.len(), spec.dim, data).expect("finite synthetic samples");
    LabeledBatch { features, labels, class_count: centers.len() }
}

/// Seeded blobs around well-separated class centers, class-major order.
///
/// In two dimensions centers are uniformly spaced on the circle; otherwise
/// each center is the best of several random directions (maximin).
pub fn synth_blobs(spec: &SyntheticSpec) -> Result<SyntheticSet, DataError> {
    Ok(synth_blobs_split(spec, 0)?.0)
}

/// Like [`synth_blobs`] plus `holdout_per_class` extra samples per class from
/// the same centers. The training set does not depend on the holdout size.
pub fn synth_blobs_split(spec: &SyntheticSpec, holdout_per_class: usize) -> Result<(SyntheticSet, LabeledBatch), DataError> {
    spec.validate()?;
    let centers = place_centers(spec, &mut Rng::derived(spec.seed, 0));
    let batch = draw(&centers, spec, spec.per_class, &mut Rng::derived(spec.seed, 1));
    let holdout = draw(&centers, spec, holdout_per_class, &mut Rng::derived(spec.seed, 2));

    let mut min_center_angle = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            min_center_angle = min_center_angle.min(angle(&centers[i], &centers[j]));
        }
    }
    let warning = (min_center_angle < 2.0 * spec.angular_spread).then(|| {
        format!(
            "closest class centers are {:.4} rad apart, less than twice the spread {:.4}; classes may overlap",
            min_center_angle, spec.angular_spread
        )
    });
    let centers = Matrix::from_rows(&centers).expect("finite centers");
    Ok((SyntheticSet { batch, centers, min_center_angle, warning }, holdout))
}
