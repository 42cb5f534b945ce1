use serde::{Deserialize, Serialize};

use super::metrics::{angular_fisher_score, identification, pair_angle_histograms, sample_pairs, verification, Histogram};
use super::EvalError;
use crate::dataio::LabeledBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub bins: usize,
    /// Clamped to the number of gallery identities.
    pub max_rank: usize,
    /// Balanced verification pairs drawn from the evaluation set.
    pub pair_count: usize,
    pub pair_seed: u64,
    /// The first this-many samples of each class form the identification gallery.
    pub gallery_per_class: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bins: 36, max_rank: 5, pair_count: 2000, pair_seed: 0, gallery_per_class: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub afs: f64,
    pub verification_accuracy: f64,
    pub best_threshold: f64,
    pub rank1: f64,
    pub roc: Vec<(f64, f64)>,
    pub cmc: Vec<(usize, f64)>,
    pub pos_angle_hist: Histogram,
    pub neg_angle_hist: Histogram,
}

impl EvalReport {
    /// Checks curve monotonicity and ranges before the report is written.
    pub fn validate(&self, expected_pos: Option<u64>, expected_neg: Option<u64>) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Inconsistent(m));
        if !(self.afs.is_finite() && self.afs >= 0.0) {
            return bad(format!("afs {}", self.afs));
        }
        for (name, v) in [("verification_accuracy", self.verification_accuracy), ("rank1", self.rank1)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(-1.0..=1.0).contains(&self.best_threshold) {
            return bad(format!("best_threshold {} outside [-1, 1]", self.best_threshold));
        }
        if self.roc.windows(2).any(|w| w[1].0 < w[0].0 || w[1].1 < w[0].1) {
            return bad("roc is not monotone".into());
        }
        if self.cmc.windows(2).any(|w| w[1].1 < w[0].1 || w[1].0 != w[0].0 + 1) {
            return bad("cmc is not monotone in rank".into());
        }
        if let Some(p) = expected_pos.filter(|&p| p != self.pos_angle_hist.total()) {
            return bad(format!("positive histogram holds {} pairs, expected {p}", self.pos_angle_hist.total()));
        }
        if let Some(n) = expected_neg.filter(|&n| n != self.neg_angle_hist.total()) {
            return bad(format!("negative histogram holds {} pairs, expected {n}", self.neg_angle_hist.total()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Computes every metric on an embedded evaluation set.
pub fn evaluate(batch: &LabeledBatch, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let afs = angular_fisher_score(&batch.features, &batch.labels)?;

    let pairs = sample_pairs(&batch.labels, opts.pair_count.max(2), opts.pair_seed)?;
    let refs: Vec<(&[f64], &[f64], bool)> =
        pairs.iter().map(|&(a, b, same)| (batch.features.row(a), batch.features.row(b), same)).collect();
    let ver = verification(&refs)?;

    let mut seen = vec![0usize; batch.class_count];
    let (mut gallery_idx, mut probe_idx) = (Vec::new(), Vec::new());
    for (i, &l) in batch.labels.iter().enumerate() {
        if seen[l] < opts.gallery_per_class.max(1) {
            gallery_idx.push(i);
        } else {
            probe_idx.push(i);
        }
        seen[l] += 1;
    }
    if probe_idx.is_empty() {
        return Err(EvalError::Invalid("no samples left for identification probes".into()));
    }
    let gallery = batch.select(&gallery_idx);
    let probes = batch.select(&probe_idx);
    let identities = seen.iter().filter(|&&c| c > 0).count();
    let id = identification(&gallery, &probes, opts.max_rank.clamp(1, identities))?;

    let (pos, neg) = pair_angle_histograms(&batch.features, &batch.labels, opts.bins)?;

    let report = EvalReport {
        afs,
        verification_accuracy: ver.accuracy,
        best_threshold: ver.best_threshold,
        rank1: id.rank1,
        roc: ver.roc,
        cmc: id.cmc,
        pos_angle_hist: pos,
        neg_angle_hist: neg,
    };
    let n = batch.len() as u64;
    let same: u64 = batch.class_sizes().iter().map(|&c| (c as u64) * (c as u64).saturating_sub(1) / 2).sum();
    report.validate(Some(same), Some(n * (n - 1) / 2 - same))?;
    Ok(report)
}
