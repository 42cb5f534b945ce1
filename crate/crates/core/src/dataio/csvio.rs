use std::path::Path;

use super::{DataError, LabeledBatch};
use crate::numcore::Matrix;

/// Writes `label,f0,f1,...` rows. Values use 17 significant digits, so a
/// re-import reproduces every `f64` exactly.
pub fn export_features(path: &Path, features: &Matrix, labels: &[usize]) -> Result<(), DataError> {
    if labels.len() != features.rows() {
        return Err(DataError::Invalid(format!("{} labels for {} rows", labels.len(), features.rows())));
    }
    let csv_err = |source| DataError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..features.cols()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, &label) in labels.iter().enumerate() {
        let mut rec = Vec::with_capacity(features.cols() + 1);
        rec.push(label.to_string());
        rec.extend(features.row(i).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn export_batch(path: &Path, batch: &LabeledBatch) -> Result<(), DataError> {
    export_features(path, &batch.features, &batch.labels)
}

/// Reads a file written by [`export_features`].
pub fn import_features(path: &Path) -> Result<(Matrix, Vec<usize>), DataError> {
    let csv_err = |source| DataError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let dim = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| DataError::Invalid(format!("{}: line {line}: bad {what}", path.display()));
        labels.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("label"))?);
        for field in rec.iter().skip(1) {
            data.push(field.parse::<f64>().map_err(|_| bad("value"))?);
        }
    }
    let features = Matrix::from_vec(labels.len(), dim, data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok((features, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let mut rng = Rng::new(4);
        let vals: Vec<f64> = (0..30).map(|_| rng.normal() * 1e3).chain([f64::MIN_POSITIVE, -0.0, 1.0 / 3.0]).collect();
        let m = Matrix::from_vec(11, 3, vals).unwrap();
        let labels: Vec<usize> = (0..11).collect();
        export_features(&path, &m, &labels).unwrap();
        let (back, lb) = import_features(&path).unwrap();
        assert_eq!(lb, labels);
        for (a, b) in back.data().iter().zip(m.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 12);
        assert!(text.starts_with("label,f0,f1,f2\n"));
    }

    #[test]
    fn empty_batch_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        export_features(&path, &Matrix::zeros(0, 2), &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "label,f0,f1\n");
        let (m, l) = import_features(&path).unwrap();
        assert_eq!((m.shape(), l.len()), ((0, 2), 0));
    }
}
