//! Angular evaluation: Fisher score, cosine verification and identification,
//! pair-angle histograms, and the JSON report that bundles them.

mod metrics;
mod report;

pub use metrics::{
    angular_fisher_score, cosine_score, identification, intra_inter_angle_stats, pair_angle_histograms, sample_pairs, verification,
    verification_from_scores, Histogram, Identification, Verification,
};
pub use report::{evaluate, EvalOptions, EvalReport};

use thiserror::Error;

/// Cosines this far outside `[-1, 1]` are treated as rounding drift.
pub const COSINE_CLAMP: f64 = 1e-12;

/// Between-class scatter below this is treated as degenerate.
pub const MIN_BETWEEN_SCATTER: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("zero-norm vector ({0})")]
    ZeroVector(String),
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("report check failed: {0}")]
    Inconsistent(String),
}
