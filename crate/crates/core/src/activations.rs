//! ACTV1 activation dumps and token mean pooling.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0..6      b"ACTV1\n"
//! 6..10     u32 header length H
//! 10..10+H  UTF-8 JSON header
//! ..        n_layers * n_tokens * hidden_dim f32, row-major (layer, token, dim)
//! ```
//!
//! Datasets store one file per statement at `<root>/<concept_id>/<polarity>/<index>.actv`.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Polarity;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"ACTV1\n";
pub const DTYPE_F32LE: &str = "f32le";
pub const DUMP_EXTENSION: &str = "actv";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("bad magic, not an ACTV1 file")]
    BadMagic,
    #[error("file too short for header length prefix")]
    MissingHeaderLength,
    #[error("header length {declared} exceeds remaining {available} bytes")]
    HeaderLength { declared: usize, available: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("unsupported dtype {0:?}, expected \"f32le\"")]
    UnsupportedDtype(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing bytes: expected {expected} payload bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("non-finite value at flat offset {0}")]
    NonFinite(usize),
    #[error("invalid shape: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StatementKey {
    pub concept_id: String,
    pub polarity: Polarity,
    pub index: u64,
}

impl fmt::Display for StatementKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.concept_id, self.polarity, self.index)
    }
}

impl StatementKey {
    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(&self.concept_id)
            .join(self.polarity.as_str())
            .join(format!("{}.{DUMP_EXTENSION}", self.index))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    concept_id: String,
    polarity: Polarity,
    index: u64,
    n_layers: usize,
    n_tokens: usize,
    hidden_dim: usize,
    dtype: String,
    pooled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

/// Hidden states of one statement: `n_layers x n_tokens x hidden_dim` f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    pub key: StatementKey,
    pub n_layers: usize,
    pub n_tokens: usize,
    pub hidden_dim: usize,
    pub data: Vec<f32>,
    pub pooled: bool,
    /// Optional header extension; concept vectors carry `"concept_vector"`.
    pub kind: Option<String>,
}

impl ActivationTensor {
    pub fn new(
        key: StatementKey,
        n_layers: usize,
        n_tokens: usize,
        hidden_dim: usize,
        data: Vec<f32>,
        pooled: bool,
    ) -> std::result::Result<Self, DumpError> {
        let t = ActivationTensor {
            key,
            n_layers,
            n_tokens,
            hidden_dim,
            data,
            pooled,
            kind: None,
        };
        t.check()?;
        Ok(t)
    }

    fn element_count(n_layers: usize, n_tokens: usize, hidden_dim: usize) -> Option<usize> {
        n_layers.checked_mul(n_tokens)?.checked_mul(hidden_dim)
    }

    pub fn check(&self) -> std::result::Result<(), DumpError> {
        if self.n_layers == 0 || self.n_tokens == 0 || self.hidden_dim == 0 {
            return Err(DumpError::Shape(format!(
                "dimensions must be positive, got L={} T={} D={}",
                self.n_layers, self.n_tokens, self.hidden_dim
            )));
        }
        if self.pooled && self.n_tokens != 1 {
            return Err(DumpError::Shape(format!(
                "pooled tensor must have one token, got {}",
                self.n_tokens
            )));
        }
        let expected = Self::element_count(self.n_layers, self.n_tokens, self.hidden_dim)
            .ok_or_else(|| DumpError::Shape("element count overflows".into()))?;
        if self.data.len() != expected {
            return Err(DumpError::Shape(format!(
                "data holds {} values, shape needs {expected}",
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(DumpError::NonFinite(i));
        }
        Ok(())
    }

    pub fn at(&self, layer: usize, token: usize, dim: usize) -> f32 {
        self.data[(layer * self.n_tokens + token) * self.hidden_dim + dim]
    }

    fn header(&self) -> Header {
        Header {
            concept_id: self.key.concept_id.clone(),
            polarity: self.key.polarity,
            index: self.key.index,
            n_layers: self.n_layers,
            n_tokens: self.n_tokens,
            hidden_dim: self.hidden_dim,
            dtype: DTYPE_F32LE.to_string(),
            pooled: self.pooled,
            kind: self.kind.clone(),
        }
    }
}

pub fn encode(t: &ActivationTensor) -> std::result::Result<Vec<u8>, DumpError> {
    t.check()?;
    let header = serde_json::to_vec(&t.header()).expect("header serializes");
    let header_len = u32::try_from(header.len())
        .map_err(|_| DumpError::Header("header longer than u32::MAX".into()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + t.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ActivationTensor, DumpError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or(DumpError::BadMagic)?;
    if rest.len() < 4 {
        return Err(DumpError::MissingHeaderLength);
    }
    let (len_bytes, rest) = rest.split_at(4);
    let header_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    if header_len > rest.len() {
        return Err(DumpError::HeaderLength {
            declared: header_len,
            available: rest.len(),
        });
    }
    let (header_bytes, payload) = rest.split_at(header_len);
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| DumpError::Header(e.to_string()))?;
    if header.dtype != DTYPE_F32LE {
        return Err(DumpError::UnsupportedDtype(header.dtype));
    }
    let expected =
        ActivationTensor::element_count(header.n_layers, header.n_tokens, header.hidden_dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DumpError::Shape("element count overflows".into()))?;
    if payload.len() < expected {
        return Err(DumpError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(DumpError::TrailingBytes {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let t = ActivationTensor {
        key: StatementKey {
            concept_id: header.concept_id,
            polarity: header.polarity,
            index: header.index,
        },
        n_layers: header.n_layers,
        n_tokens: header.n_tokens,
        hidden_dim: header.hidden_dim,
        data,
        pooled: header.pooled,
        kind: header.kind,
    };
    t.check()?;
    Ok(t)
}

pub fn read_dump(path: &Path) -> Result<ActivationTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|kind| Error::Dump {
        path: path.to_path_buf(),
        kind,
    })
}

pub fn write_dump(t: &ActivationTensor, path: &Path) -> Result<()> {
    let bytes = encode(t).map_err(|kind| Error::Dump {
        path: path.to_path_buf(),
        kind,
    })?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Token-pooled hidden states of one statement: `n_layers x hidden_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatementVector {
    pub key: StatementKey,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub rows: Vec<f32>,
}

impl StatementVector {
    pub fn row(&self, layer: usize) -> &[f32] {
        &self.rows[layer * self.hidden_dim..(layer + 1) * self.hidden_dim]
    }
}

/// Average every layer's token vectors.
///
/// Sums run sequentially over tokens in f64, are divided by the token count,
/// and the result is stored as f32.
pub fn mean_pool(t: &ActivationTensor) -> Result<StatementVector> {
    t.check().map_err(|e| Error::Data {
        key: t.key.to_string(),
        msg: e.to_string(),
    })?;
    let (layers, tokens, dim) = (t.n_layers, t.n_tokens, t.hidden_dim);
    if t.pooled {
        return Ok(StatementVector {
            key: t.key.clone(),
            n_layers: layers,
            hidden_dim: dim,
            rows: t.data.clone(),
        });
    }
    let mut rows = Vec::with_capacity(layers * dim);
    let mut acc = vec![0f64; dim];
    for layer in 0..layers {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for token in 0..tokens {
            let start = (layer * tokens + token) * dim;
            for (a, &v) in acc.iter_mut().zip(&t.data[start..start + dim]) {
                *a += f64::from(v);
            }
        }
        rows.extend(acc.iter().map(|a| (a / tokens as f64) as f32));
    }
    Ok(StatementVector {
        key: t.key.clone(),
        n_layers: layers,
        hidden_dim: dim,
        rows,
    })
}

fn class_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(DUMP_EXTENSION) {
            continue;
        }
        let index = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| {
                Error::Validation(format!("{}: file name is not an index", path.display()))
            })?;
        files.push((index, path));
    }
    files.sort();
    Ok(files)
}

fn load_class(root: &Path, concept_id: &str, polarity: Polarity) -> Result<Vec<StatementVector>> {
    let dir = root.join(concept_id).join(polarity.as_str());
    let files = class_files(&dir)?;
    if files.is_empty() {
        return Err(Error::EmptyClass(format!(
            "no {polarity} dumps for {concept_id} under {}",
            root.display()
        )));
    }
    files
        .par_iter()
        .map(|(index, path)| {
            let t = read_dump(path)?;
            let expected = StatementKey {
                concept_id: concept_id.to_string(),
                polarity,
                index: *index,
            };
            if t.key != expected {
                return Err(Error::Data {
                    key: expected.to_string(),
                    msg: format!("header names {}", t.key),
                });
            }
            mean_pool(&t)
        })
        .collect()
}

/// Load and pool every dump of a concept, each class ordered by statement index.
pub fn load_statement_vectors(
    root: &Path,
    concept_id: &str,
) -> Result<(Vec<StatementVector>, Vec<StatementVector>)> {
    let positives = load_class(root, concept_id, Polarity::Positive)?;
    let negatives = load_class(root, concept_id, Polarity::Negative)?;
    let first = &positives[0];
    for v in positives.iter().chain(&negatives) {
        if v.n_layers != first.n_layers || v.hidden_dim != first.hidden_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} has shape ({}, {}), {} has ({}, {})",
                v.key, v.n_layers, v.hidden_dim, first.key, first.n_layers, first.hidden_dim
            )));
        }
    }
    Ok((positives, negatives))
}
