//! Dense matrices, seeded randomness, and the parallel execution helpers.

mod matrix;
pub mod par;
mod rng;

pub use matrix::{column_norms, dot, matmul, norm, normalize_columns, Matrix};
pub use rng::Rng;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("matrix {rows}x{cols} needs {} values, got {len}", rows * cols)]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("row {row} has {found} values, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}
