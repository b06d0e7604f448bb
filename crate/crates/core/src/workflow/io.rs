//! On-disk formats for embeddings, labels, and datasets.
//!
//! Embeddings: magic `DPRG`, version `u16 = 1`, flags `u16 = 0`, `N u64`,
//! `d u64`, then `N·d` little-endian `f32`, row-major.
//!
//! Datasets: magic `DPRD`, version `u16 = 1`, split `u16` (0 train, 1 test),
//! `N u64`, `p u64`, `L u64`, then `N·p` little-endian `f64` features and
//! `N·L` label bytes (0/1), both row-major.
//!
//! Labels: CSV with header `id,label_0,...,label_{L-1}` and 0/1 values.

use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};
use crate::geometry::EmbeddingMatrix;
use crate::matrix::{LabelMatrix, Matrix};
use crate::synthdata::{Dataset, Split};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"DPRG";
pub const DATASET_MAGIC: &[u8; 4] = b"DPRD";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_embeddings(z: &EmbeddingMatrix) -> Vec<u8> {
    let m = z.matrix();
    let mut out = Vec::with_capacity(24 + m.as_slice().len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != EMBEDDING_MAGIC {
        return Err(r.error("bad magic, expected DPRG"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(r.error(format!("unsupported embedding version {version}")));
    }
    let flags = r.u16()?;
    if flags != 0 {
        return Err(r.error(format!("unsupported flags {flags:#x}")));
    }
    let n = r.u64()?;
    let d = r.u64()?;
    if n == 0 || d == 0 {
        return Err(r.error(format!("embedding file declares {n}x{d}; N and d must be >= 1")));
    }
    let count = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| r.error("dimension overflow"))?;
    if r.remaining() != count * 4 {
        return Err(r.error(format!(
            "truncated or oversized payload: header declares {} bytes, found {}",
            count * 4,
            r.remaining()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from(r.f32()?));
    }
    EmbeddingMatrix::new(Matrix::new(n as usize, d as usize, data)?).map_err(|e| r.error(e.to_string()))
}

pub fn write_embeddings(z: &EmbeddingMatrix, path: &Path) -> Result<()> {
    write_file(path, &encode_embeddings(z))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&read_file(path)?, path)
}

pub fn labels_to_csv(labels: &LabelMatrix) -> String {
    let mut out = String::from("id");
    for l in 0..labels.cols() {
        let _ = write!(out, ",label_{l}");
    }
    out.push('\n');
    for i in 0..labels.rows() {
        let _ = write!(out, "{i}");
        for &v in labels.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn labels_from_csv(text: &str, path: &Path) -> Result<LabelMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format(path, "empty label file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(Error::format(path, "header must be id,label_0,..."));
    }
    for (l, c) in cols[1..].iter().enumerate() {
        if *c != format!("label_{l}") {
            return Err(Error::format(path, format!("expected column label_{l}, found {c}")));
        }
    }
    let n_labels = cols.len() - 1;
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::format(path, format!("row {k} has {} fields, expected {}", fields.len(), cols.len())));
        }
        for f in &fields[1..] {
            match *f {
                "0" => data.push(0),
                "1" => data.push(1),
                other => return Err(Error::format(path, format!("row {k}: label value {other:?} is not 0/1"))),
            }
        }
        rows += 1;
    }
    LabelMatrix::new(rows, n_labels, data)
}

pub fn write_labels(labels: &LabelMatrix, path: &Path) -> Result<()> {
    write_file(path, labels_to_csv(labels).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<LabelMatrix> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "label file is not UTF-8"))?;
    labels_from_csv(&text, path)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + ds.features.as_slice().len() * 8 + ds.labels.as_slice().len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let split: u16 = match ds.split {
        Split::Train => 0,
        Split::Test => 1,
    };
    out.extend_from_slice(&split.to_le_bytes());
    for v in [ds.len(), ds.feature_dim(), ds.n_labels()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for v in ds.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(ds.labels.as_slice());
    out
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4)? != DATASET_MAGIC {
        return Err(r.error("bad magic, expected DPRD"));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(r.error(format!("unsupported dataset version {version}")));
    }
    let split = match r.u16()? {
        0 => Split::Train,
        1 => Split::Test,
        s => return Err(r.error(format!("unknown split tag {s}"))),
    };
    let dims = [r.u64()?, r.u64()?, r.u64()?];
    let [n, p, l] = dims.map(|v| usize::try_from(v).unwrap_or(usize::MAX));
    let n_feat = n.checked_mul(p).filter(|c| c.checked_mul(8).is_some());
    let n_lab = n.checked_mul(l);
    let (Some(n_feat), Some(n_lab)) = (n_feat, n_lab) else {
        return Err(r.error("dimension overflow"));
    };
    if n == 0 || p == 0 || l == 0 {
        return Err(r.error(format!("dataset declares N={n}, p={p}, L={l}; all must be >= 1")));
    }
    if Some(r.remaining()) != (n_feat * 8).checked_add(n_lab) {
        return Err(r.error("payload size does not match header"));
    }
    let mut features = Vec::with_capacity(n_feat);
    for _ in 0..n_feat {
        features.push(r.f64()?);
    }
    let labels = r.take(n_lab)?.to_vec();
    let labels = LabelMatrix::new(n, l, labels).map_err(|e| r.error(e.to_string()))?;
    Dataset::new(Matrix::new(n, p, features)?, labels, split).map_err(|e| r.error(e.to_string()))
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?, path)
}
