//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SPHM"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header (see `Header`)
//! 16+H    ...   one block per entry of header.arrays, in order:
//!               u64 LE element count, then that many f64 LE values
//! ```
//!
//! The file ends exactly after the last array. Arrays are row-major; biases
//! are stored as `1 × n`. Array names, in order: `layer{i}.weights`,
//! `layer{i}.biases` for each layer, `head.weights`, `head.biases` (linear head
//! only), `anneal.lambda` (`1 × 1`, only once annealing started).

use serde::{Deserialize, Serialize};

use super::{ClassifierHead, ClassifierWeights, Dense, EmbedderConfig, EmbedderError, ModelState};
use crate::losses::AnnealState;
use crate::numcore::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPHM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArraySpec {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    embedder: EmbedderConfig,
    k_classes: usize,
    head: String,
    iteration: u64,
    anneal_iteration: Option<u64>,
    arrays: Vec<ArraySpec>,
}

fn ckpt_err(offset: usize, msg: impl Into<String>) -> EmbedderError {
    EmbedderError::Checkpoint { offset: offset as u64, msg: msg.into() }
}

pub fn checkpoint_save(state: &ModelState) -> Vec<u8> {
    let mut arrays: Vec<(String, &Matrix)> = Vec::new();
    let mut owned: Vec<(String, Matrix)> = Vec::new();
    for (i, layer) in state.layers.iter().enumerate() {
        arrays.push((format!("layer{i}.weights"), &layer.weights));
        owned.push((format!("layer{i}.biases"), row(&layer.biases)));
    }
    let mut specs: Vec<ArraySpec> = Vec::new();
    let mut blocks: Vec<&[f64]> = Vec::new();
    // Interleave layer weights and biases in declaration order.
    for (i, (name, w)) in arrays.iter().enumerate() {
        specs.push(ArraySpec { name: name.clone(), rows: w.rows(), cols: w.cols() });
        blocks.push(w.data());
        let (bname, b) = &owned[i];
        specs.push(ArraySpec { name: bname.clone(), rows: 1, cols: b.cols() });
        blocks.push(b.data());
    }
    let head_w = state.head.weights();
    specs.push(ArraySpec { name: "head.weights".into(), rows: head_w.rows(), cols: head_w.cols() });
    blocks.push(head_w.data());
    if let ClassifierHead::Linear { biases, .. } = &state.head {
        specs.push(ArraySpec { name: "head.biases".into(), rows: 1, cols: biases.len() });
        blocks.push(biases);
    }
    let lambda;
    if let Some(a) = &state.anneal {
        lambda = [a.lambda];
        specs.push(ArraySpec { name: "anneal.lambda".into(), rows: 1, cols: 1 });
        blocks.push(&lambda);
    }

    let header = Header {
        embedder: state.config.clone(),
        k_classes: state.head.class_count(),
        head: state.head.name().into(),
        iteration: state.iteration,
        anneal_iteration: state.anneal.map(|a| a.iteration),
        arrays: specs,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for block in blocks {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).unwrap_or_else(|_| Matrix::zeros(1, v.len()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbedderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ckpt_err(self.bytes.len(), format!("truncated while reading {what} at offset {}", self.pos))),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64, EmbedderError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint. Nothing is returned unless the whole stream is valid.
pub fn checkpoint_load(bytes: &[u8]) -> Result<ModelState, EmbedderError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(ckpt_err(0, "bad magic, expected \"SPHM\""));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(4, format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header_len = cur.u64("header length")?;
    let header_start = cur.pos;
    let header_bytes = cur.take(usize::try_from(header_len).map_err(|_| ckpt_err(8, "header length overflow"))?, "header")?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| ckpt_err(header_start + e.column().saturating_sub(1), format!("bad header: {e}")))?;
    header.embedder.validate().map_err(|e| ckpt_err(header_start, e.to_string()))?;

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for spec in &header.arrays {
        let at = cur.pos;
        let count = cur.u64(&spec.name)? as usize;
        if count != spec.rows * spec.cols {
            return Err(ckpt_err(at, format!("{} holds {count} values, header declares {}x{}", spec.name, spec.rows, spec.cols)));
        }
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| ckpt_err(at, "array length overflow"))?, &spec.name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let m = Matrix::from_vec(spec.rows, spec.cols, data).map_err(|e| ckpt_err(at, format!("{}: {e}", spec.name)))?;
        arrays.push((spec.name.as_str(), m, at));
    }
    if cur.pos != bytes.len() {
        return Err(ckpt_err(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }

    let mut it = arrays.into_iter();
    let mut next = |name: &str, rows: usize, cols: usize| -> Result<Matrix, EmbedderError> {
        let (found, m, at) = it.next().ok_or_else(|| ckpt_err(bytes.len(), format!("missing array {name}")))?;
        if found != name || m.shape() != (rows, cols) {
            return Err(ckpt_err(at, format!("expected {name} {rows}x{cols}, found {found} {}x{}", m.rows(), m.cols())));
        }
        Ok(m)
    };
    let widths = &header.embedder.layer_widths;
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (i, w) in widths.windows(2).enumerate() {
        let weights = next(&format!("layer{i}.weights"), w[0], w[1])?;
        let biases = next(&format!("layer{i}.biases"), 1, w[1])?.into_vec();
        layers.push(Dense { weights, biases });
    }
    let d = header.embedder.embedding_dim();
    let head_w = next("head.weights", d, header.k_classes)?;
    let head = match header.head.as_str() {
        "angular" => ClassifierHead::Angular(ClassifierWeights::from_unit(head_w).map_err(|e| ckpt_err(header_start, e.to_string()))?),
        "linear" => ClassifierHead::Linear { weights: head_w, biases: next("head.biases", 1, header.k_classes)?.into_vec() },
        other => return Err(ckpt_err(header_start, format!("unknown head kind {other:?}"))),
    };
    let anneal = match header.anneal_iteration {
        Some(iteration) => Some(AnnealState { iteration, lambda: next("anneal.lambda", 1, 1)?[(0, 0)] }),
        None => None,
    };
    if let Some((name, _, at)) = it.next() {
        return Err(ckpt_err(at, format!("unexpected array {name}")));
    }
    Ok(ModelState { config: header.embedder, layers, head, anneal, iteration: header.iteration })
}
