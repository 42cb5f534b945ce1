//! Angular-margin softmax losses for hypersphere embeddings.
//!
//! - [`numcore`]: dense matrices, seeded RNG, deterministic parallel helpers
//! - [`angular`]: ψ, multi-angle expansion, margin widths, `m_min` bounds
//! - [`losses`]: softmax / modified softmax / A-Softmax with analytic gradients
//! - [`embedder`]: small fully connected embedder, projected SGD training, checkpoints
//! - [`eval`]: angular Fisher score, verification, identification, histograms
//! - [`dataio`]: synthetic blobs, IDX ingestion, feature CSV export
//! - [`cli`]: the `asoftmax` command-line surface

pub mod angular;
pub mod cli;
pub mod dataio;
pub mod embedder;
pub mod eval;
pub mod losses;
pub mod numcore;

pub use numcore::{Matrix, Rng};
