//! Datasets: labeled batches, seeded synthetic blobs, IDX files, feature CSV.

mod batch;
mod csvio;
mod idx;
mod synth;

pub use batch::LabeledBatch;
pub use csvio::{export_batch, export_features, import_features};
pub use idx::{load_idx, read_idx, write_idx, IdxImages, PIXEL_OFFSET, PIXEL_SCALE};
pub use synth::{synth_blobs, synth_blobs_split, SyntheticSet, SyntheticSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: byte offset {offset}: {msg}", path.display())]
    Format { path: PathBuf, offset: u64, msg: String },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io { path: path.into(), source }
    }
}
