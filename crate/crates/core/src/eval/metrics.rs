use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{EvalError, COSINE_CLAMP, MIN_BETWEEN_SCATTER};
use crate::dataio::LabeledBatch;
use crate::numcore::{dot, norm, par, Matrix, Rng};

/// `aᵀb / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EvalError::ZeroVector("cosine score operand".into()));
    }
    let c = dot(a, b) / (na * nb);
    if !c.is_finite() || c.abs() > 1.0 + COSINE_CLAMP {
        return Err(EvalError::Invalid(format!("cosine {c} out of range")));
    }
    Ok(c.clamp(-1.0, 1.0))
}

fn angle(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    Ok(cosine_score(a, b)?.acos())
}

fn check_labels(features: &Matrix, labels: &[usize]) -> Result<(), EvalError> {
    if features.rows() != labels.len() {
        return Err(EvalError::Invalid(format!("{} labels for {} features", labels.len(), features.rows())));
    }
    Ok(())
}

/// Within-class over between-class cosine scatter. Lower is more compact.
///
/// `S_w = Σ_i Σ_{x ∈ X_i} (1 - cos⟨x, m_i⟩)` and `S_b = Σ_i n_i (1 - cos⟨m_i, m⟩)`,
/// where `m_i` and `m` are plain arithmetic means of the raw features (they are
/// not renormalized).
pub fn angular_fisher_score(features: &Matrix, labels: &[usize]) -> Result<f64, EvalError> {
    check_labels(features, labels)?;
    if features.rows() == 0 {
        return Err(EvalError::Invalid("no features".into()));
    }
    let d = features.cols();
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    let mut total = vec![0.0; d];
    for (i, &l) in labels.iter().enumerate() {
        let row = features.row(i);
        if norm(row) == 0.0 {
            return Err(EvalError::ZeroVector(format!("feature {i}")));
        }
        let entry = sums.entry(l).or_insert_with(|| (vec![0.0; d], 0));
        for ((s, t), &v) in entry.0.iter_mut().zip(total.iter_mut()).zip(row) {
            *s += v;
            *t += v;
        }
        entry.1 += 1;
    }
    if sums.len() < 2 {
        return Err(EvalError::Degenerate(format!("{} class(es) present, need >= 2", sums.len())));
    }
    let n = labels.len() as f64;
    let global: Vec<f64> = total.iter().map(|t| t / n).collect();
    if norm(&global) == 0.0 {
        return Err(EvalError::ZeroVector("global mean".into()));
    }
    let means: BTreeMap<usize, (Vec<f64>, usize)> =
        sums.into_iter().map(|(l, (s, c))| (l, (s.into_iter().map(|v| v / c as f64).collect(), c))).collect();
    for (l, (m, _)) in &means {
        if norm(m) == 0.0 {
            return Err(EvalError::ZeroVector(format!("mean of class {l}")));
        }
    }

    let within: Vec<f64> = par::map_range(labels.len(), |i| cosine_score(features.row(i), &means[&labels[i]].0).map(|c| 1.0 - c))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let s_w = par::pairwise_sum(&within);
    let between: Vec<f64> =
        means.values().map(|(m, c)| cosine_score(m, &global).map(|cos| *c as f64 * (1.0 - cos))).collect::<Result<_, _>>()?;
    let s_b = par::pairwise_sum(&between);
    if s_b < MIN_BETWEEN_SCATTER {
        return Err(EvalError::Degenerate(format!("between-class scatter {s_b:e}")));
    }
    Ok(s_w / s_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub accuracy: f64,
    /// Pairs with cosine `>= best_threshold` are accepted as same-identity.
    pub best_threshold: f64,
    /// `(false accept rate, true accept rate)` from strictest to loosest threshold.
    pub roc: Vec<(f64, f64)>,
}

/// Threshold sweep over `(score, same_identity)` pairs.
///
/// Candidate thresholds are every distinct score plus the sentinels `1` and
/// `-1`; a pair is accepted when `score >= t`. Among equally accurate
/// thresholds the lowest wins.
pub fn verification_from_scores(scored: &[(f64, bool)]) -> Result<Verification, EvalError> {
    let pos = scored.iter().filter(|p| p.1).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::Invalid(format!("need positive and negative pairs, got {pos} and {neg}")));
    }
    if scored.iter().any(|p| !p.0.is_finite()) {
        return Err(EvalError::Invalid("non-finite score".into()));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total = scored.len() as f64;
    let (pos_f, neg_f) = (pos as f64, neg as f64);
    let (mut tp, mut fp) = (0usize, 0usize);

    // Sentinel t = 1 rejects everything unless some score is exactly 1.
    let (mut best_acc, mut best_t) = if sorted[0].0 < 1.0 { (neg_f / total, 1.0) } else { (f64::NEG_INFINITY, 1.0) };
    let mut roc = vec![(0.0, 0.0)];
    let mut last_acc = best_acc;

    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        last_acc = (tp + (neg - fp)) as f64 / total;
        if last_acc >= best_acc {
            best_acc = last_acc;
            best_t = t;
        }
        roc.push((fp as f64 / neg_f, tp as f64 / pos_f));
    }
    // Sentinel t = -1 accepts everything, same as the lowest score.
    if last_acc >= best_acc {
        best_t = -1.0;
    }
    Ok(Verification { accuracy: best_acc, best_threshold: best_t, roc })
}

/// Cosine verification on explicit feature pairs.
pub fn verification(pairs: &[(&[f64], &[f64], bool)]) -> Result<Verification, EvalError> {
    let scored: Vec<(f64, bool)> = par::map_range(pairs.len(), |i| cosine_score(pairs[i].0, pairs[i].1).map(|s| (s, pairs[i].2)))
        .into_iter()
        .collect::<Result<_, _>>()?;
    verification_from_scores(&scored)
}

/// `count` index pairs, half same-class and half cross-class, drawn with `seed`.
/// Classes with a single sample cannot supply positive pairs.
pub fn sample_pairs(labels: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize, bool)>, EvalError> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let multi: Vec<&Vec<usize>> = by_class.values().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() || by_class.len() < 2 {
        return Err(EvalError::Invalid("need a class with two samples and at least two classes".into()));
    }
    let mut rng = Rng::new(seed);
    let n = labels.len();
    let mut pairs = Vec::with_capacity(count);
    for k in 0..count {
        if k % 2 == 0 {
            let members = multi[rng.below(multi.len())];
            let a = rng.below(members.len());
            let mut b = rng.below(members.len() - 1);
            if b >= a {
                b += 1;
            }
            pairs.push((members[a], members[b], true));
        } else {
            loop {
                let (a, b) = (rng.below(n), rng.below(n));
                if labels[a] != labels[b] {
                    pairs.push((a, b, false));
                    break;
                }
            }
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub rank1: f64,
    /// `(rank, fraction of probes whose identity is within the top rank)`.
    pub cmc: Vec<(usize, f64)>,
}

/// Closed-set identification by cosine nearest neighbour.
///
/// Each gallery identity is scored by its best-matching gallery feature, and
/// identities are ranked by that score (ties broken by smaller label). A probe
/// is correct at rank `r` when its identity is among the top `r`.
pub fn identification(gallery: &LabeledBatch, probes: &LabeledBatch, max_rank: usize) -> Result<Identification, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::Invalid("empty gallery".into()));
    }
    if probes.is_empty() {
        return Err(EvalError::Invalid("no probes".into()));
    }
    if gallery.dim() != probes.dim() {
        return Err(EvalError::LengthMismatch(gallery.dim(), probes.dim()));
    }
    let mut identities: Vec<usize> = gallery.labels.clone();
    identities.sort_unstable();
    identities.dedup();
    if max_rank == 0 || max_rank > identities.len() {
        return Err(EvalError::Invalid(format!("max_rank {max_rank} outside 1..={}", identities.len())));
    }
    let slot: BTreeMap<usize, usize> = identities.iter().enumerate().map(|(s, &l)| (l, s)).collect();

    let ranks: Vec<Option<usize>> = par::map_range(probes.len(), |p| {
        let probe = probes.features.row(p);
        let mut best = vec![f64::NEG_INFINITY; identities.len()];
        for g in 0..gallery.len() {
            let s = cosine_score(probe, gallery.features.row(g))?;
            let b = &mut best[slot[&gallery.labels[g]]];
            if s > *b {
                *b = s;
            }
        }
        let Some(&own) = slot.get(&probes.labels[p]) else {
            return Ok(None);
        };
        // Identities strictly ahead: higher score, or equal score and smaller label.
        let ahead = best.iter().enumerate().filter(|&(s, &v)| v > best[own] || (v == best[own] && s < own)).count();
        Ok(Some(ahead + 1))
    })
    .into_iter()
    .collect::<Result<_, EvalError>>()?;

    let n = probes.len() as f64;
    let cmc: Vec<(usize, f64)> =
        (1..=max_rank).map(|r| (r, ranks.iter().filter(|k| k.is_some_and(|k| k <= r)).count() as f64 / n)).collect();
    Ok(Identification { rank1: cmc[0].1, cmc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniform edges over `[0, π]`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn angles(bins: usize) -> Self {
        Histogram { bin_edges: (0..=bins).map(|i| PI * i as f64 / bins as f64).collect(), counts: vec![0; bins] }
    }

    fn add(&mut self, theta: f64) {
        let bins = self.counts.len();
        let b = ((theta / PI) * bins as f64).floor() as usize;
        self.counts[b.min(bins - 1)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Angle histograms of all same-class pairs and all cross-class pairs.
pub fn pair_angle_histograms(features: &Matrix, labels: &[usize], bins: usize) -> Result<(Histogram, Histogram), EvalError> {
    check_labels(features, labels)?;
    if bins == 0 {
        return Err(EvalError::Invalid("bins must be >= 1".into()));
    }
    if labels.len() < 2 {
        return Err(EvalError::Invalid("need at least two samples".into()));
    }
    let n = labels.len();
    let rows: Vec<Vec<(f64, bool)>> = par::map_range(n, |i| {
        (i + 1..n).map(|j| angle(features.row(i), features.row(j)).map(|a| (a, labels[i] == labels[j]))).collect::<Result<_, _>>()
    })
    .into_iter()
    .collect::<Result<_, EvalError>>()?;
    let (mut pos, mut neg) = (Histogram::angles(bins), Histogram::angles(bins));
    for (a, same) in rows.into_iter().flatten() {
        if same {
            pos.add(a);
        } else {
            neg.add(a);
        }
    }
    Ok((pos, neg))
}

/// `(largest same-class pair angle, smallest cross-class pair angle)`, radians.
pub fn intra_inter_angle_stats(features: &Matrix, labels: &[usize]) -> Result<(f64, f64), EvalError> {
    check_labels(features, labels)?;
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::Degenerate("a single class has no inter-class angle".into()));
    }
    let n = labels.len();
    let rows: Vec<(f64, f64)> = par::map_range(n, |i| {
        let (mut intra, mut inter) = (0.0f64, f64::INFINITY);
        for j in i + 1..n {
            let a = angle(features.row(i), features.row(j))?;
            if labels[i] == labels[j] {
                intra = intra.max(a);
            } else {
                inter = inter.min(a);
            }
        }
        Ok((intra, inter))
    })
    .into_iter()
    .collect::<Result<_, EvalError>>()?;
    Ok(rows.into_iter().fold((0.0, f64::INFINITY), |(a, b), (x, y)| (a.max(x), b.min(y))))
}
