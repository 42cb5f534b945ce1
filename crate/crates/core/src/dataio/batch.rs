use super::DataError;
use crate::numcore::Matrix;

/// Feature rows paired with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledBatch {
    /// Validates label count and range. `class_count` must exceed every label.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        if labels.len() != features.rows() {
            return Err(DataError::Invalid(format!("{} labels for {} feature rows", labels.len(), features.rows())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!("label {bad} is not below class count {class_count}")));
        }
        Ok(LabeledBatch { features, labels, class_count })
    }

    /// Infers `class_count = max label + 1`.
    pub fn from_labels(features: Matrix, labels: Vec<usize>) -> Result<Self, DataError> {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        LabeledBatch::new(features, labels, k)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}
