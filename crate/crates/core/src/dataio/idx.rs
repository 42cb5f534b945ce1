//! IDX (MNIST-style) files: big-endian u32 header, unsigned byte payload.
//!
//! ```text
//! images: 0x00000803 | count | rows | cols | count*rows*cols bytes
//! labels: 0x00000801 | count | count bytes
//! ```

use std::fs;
use std::path::Path;

use super::{DataError, LabeledBatch};
use crate::numcore::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Pixels map to `(p - PIXEL_OFFSET) / PIXEL_SCALE`.
pub const PIXEL_OFFSET: f64 = 127.5;
pub const PIXEL_SCALE: f64 = 128.0;

/// Raw image payload of an IDX images file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn format_err(path: &Path, offset: u64, msg: impl Into<String>) -> DataError {
    DataError::Format { path: path.to_path_buf(), offset, msg: msg.into() }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len() as u64, format!("truncated header, need 4 bytes at offset {offset}")))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<(), DataError> {
    let have = bytes.len() - header;
    if have < expected {
        return Err(format_err(path, bytes.len() as u64, format!("truncated payload: declared {expected} bytes, found {have}")));
    }
    if have > expected {
        return Err(format_err(path, (header + expected) as u64, format!("{} trailing bytes after declared payload", have - expected)));
    }
    Ok(())
}

fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages, DataError> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, 0, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let expected =
        count.checked_mul(rows).and_then(|v| v.checked_mul(cols)).ok_or_else(|| format_err(path, 4, "declared dimensions overflow"))?;
    check_payload(bytes, 16, expected, path)?;
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..].to_vec() })
}

fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DataError> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, 0, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    check_payload(bytes, 8, count, path)?;
    Ok(bytes[8..].to_vec())
}

/// Reads both files without pixel scaling.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<u8>), DataError> {
    let img_bytes = fs::read(images_path).map_err(|e| DataError::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| DataError::io(labels_path, e))?;
    let images = parse_images(&img_bytes, images_path)?;
    let labels = parse_labels(&lbl_bytes, labels_path)?;
    if images.count != labels.len() {
        return Err(format_err(labels_path, 4, format!("label count {} does not match image count {}", labels.len(), images.count)));
    }
    Ok((images, labels))
}

/// Loads an IDX image/label pair as a batch of flattened, rescaled rows.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledBatch, DataError> {
    let (images, labels) = read_idx(images_path, labels_path)?;
    let dim = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| (f64::from(p) - PIXEL_OFFSET) / PIXEL_SCALE).collect();
    let features = Matrix::from_vec(images.count, dim, data).map_err(|e| DataError::Invalid(e.to_string()))?;
    LabeledBatch::from_labels(features, labels.into_iter().map(usize::from).collect())
}

/// Writes an IDX image/label pair.
pub fn write_idx(images_path: &Path, labels_path: &Path, images: &IdxImages, labels: &[u8]) -> Result<(), DataError> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(DataError::Invalid(format!(
            "{} pixels for {} images of {}x{}",
            images.pixels.len(),
            images.count,
            images.rows,
            images.cols
        )));
    }
    if labels.len() != images.count {
        return Err(DataError::Invalid(format!("{} labels for {} images", labels.len(), images.count)));
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| DataError::Invalid(format!("{v} does not fit in u32")));
    let mut img = Vec::with_capacity(16 + images.pixels.len());
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.count, images.rows, images.cols] {
        img.extend_from_slice(&to_u32(v)?.to_be_bytes());
    }
    img.extend_from_slice(&images.pixels);
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&to_u32(labels.len())?.to_be_bytes());
    lbl.extend_from_slice(labels);
    fs::write(images_path, img).map_err(|e| DataError::io(images_path, e))?;
    fs::write(labels_path, lbl).map_err(|e| DataError::io(labels_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let images = IdxImages { count: 2, rows: 2, cols: 2, pixels: vec![0, 127, 128, 255, 10, 20, 30, 40] };
        let (ip, lp) = (dir.join("img.idx"), dir.join("lbl.idx"));
        write_idx(&ip, &lp, &images, &[3, 1]).unwrap();
        (ip, lp)
    }

    #[test]
    fn round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let (images, labels) = read_idx(&ip, &lp).unwrap();
        assert_eq!(images.pixels, vec![0, 127, 128, 255, 10, 20, 30, 40]);
        assert_eq!(labels, vec![3, 1]);

        let batch = load_idx(&ip, &lp).unwrap();
        assert_eq!(batch.features.shape(), (2, 4));
        assert_eq!(batch.labels, vec![3, 1]);
        assert_eq!(batch.class_count, 4);
        assert_eq!(batch.features[(0, 3)], 0.99609375);
        assert_eq!(batch.features[(0, 1)], -0.00390625);
        assert_eq!(batch.features[(0, 0)], -127.5 / 128.0);
        assert_eq!(load_idx(&ip, &lp).unwrap(), batch);
    }

    #[test]
    fn header_bytes_are_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let img = fs::read(ip).unwrap();
        assert_eq!(&img[..16], &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]);
        let lbl = fs::read(lp).unwrap();
        assert_eq!(lbl, vec![0, 0, 8, 1, 0, 0, 0, 2, 3, 1]);
    }

    #[test]
    fn rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let good = fs::read(&ip).unwrap();

        let bad = dir.path().join("bad.idx");
        fs::write(&bad, &good[..good.len() - 1]).unwrap();
        let err = load_idx(&bad, &lp).unwrap_err().to_string();
        assert!(err.contains("truncated payload") && err.contains("offset 23"), "{err}");

        let mut extra = good.clone();
        extra.push(0);
        fs::write(&bad, extra).unwrap();
        assert!(load_idx(&bad, &lp).unwrap_err().to_string().contains("trailing"));

        let mut magic = good.clone();
        magic[3] = 1;
        fs::write(&bad, magic).unwrap();
        assert!(load_idx(&bad, &lp).unwrap_err().to_string().contains("bad magic"));

        fs::write(&bad, &good[..10]).unwrap();
        assert!(load_idx(&bad, &lp).unwrap_err().to_string().contains("truncated header"));

        let short_labels = dir.path().join("l1.idx");
        fs::write(&short_labels, [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        assert!(load_idx(&ip, &short_labels).unwrap_err().to_string().contains("does not match"));

        assert!(matches!(load_idx(&dir.path().join("missing"), &lp), Err(DataError::Io { .. })));
    }
}
