//! Concept vectors as the per-layer difference of class means, and cosine similarity.

use std::path::{Path, PathBuf};

use crate::activations::{self, ActivationTensor, StatementKey, StatementVector};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

pub const CONCEPT_VECTOR_KIND: &str = "concept_vector";

/// Row-major `n_layers x hidden_dim` matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub data: Vec<f64>,
}

impl LayerMatrix {
    pub fn row(&self, layer: usize) -> &[f64] {
        &self.data[layer * self.hidden_dim..(layer + 1) * self.hidden_dim]
    }
}

/// Elementwise mean over statements, accumulated sequentially in f64.
pub fn class_mean(vs: &[StatementVector]) -> Result<LayerMatrix> {
    let first = vs
        .first()
        .ok_or_else(|| Error::EmptyClass("class_mean of an empty list".into()))?;
    let (layers, dim) = (first.n_layers, first.hidden_dim);
    let mut acc = vec![0f64; layers * dim];
    for v in vs {
        if v.n_layers != layers || v.hidden_dim != dim || v.rows.len() != layers * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} has shape ({}, {}), expected ({layers}, {dim})",
                v.key, v.n_layers, v.hidden_dim
            )));
        }
        for (a, &x) in acc.iter_mut().zip(&v.rows) {
            *a += f64::from(x);
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(LayerMatrix {
        n_layers: layers,
        hidden_dim: dim,
        data: acc,
    })
}

fn layer_average(per_layer: &[f64], n_layers: usize, dim: usize) -> Vec<f64> {
    let mut avg = vec![0f64; dim];
    for layer in 0..n_layers {
        for (a, &x) in avg
            .iter_mut()
            .zip(&per_layer[layer * dim..(layer + 1) * dim])
        {
            *a += x;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n_layers as f64);
    avg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVector {
    pub concept_id: String,
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Positive-minus-negative class mean, one row per layer.
    pub per_layer: Vec<f64>,
    /// Mean of `per_layer` over the layer axis.
    pub averaged: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ConceptVector {
    pub fn from_per_layer(
        concept_id: impl Into<String>,
        n_layers: usize,
        hidden_dim: usize,
        per_layer: Vec<f64>,
        n_pos: usize,
        n_neg: usize,
    ) -> Result<Self> {
        let concept_id = concept_id.into();
        if n_layers == 0 || hidden_dim == 0 || per_layer.len() != n_layers * hidden_dim {
            return Err(Error::ShapeMismatch(format!(
                "{concept_id}: {} values do not fit ({n_layers}, {hidden_dim})",
                per_layer.len()
            )));
        }
        let averaged = layer_average(&per_layer, n_layers, hidden_dim);
        let cv = ConceptVector {
            concept_id,
            n_layers,
            hidden_dim,
            per_layer,
            averaged,
            n_pos,
            n_neg,
        };
        cv.verify()?;
        Ok(cv)
    }

    /// Check the stored layer average and the finiteness/class-size invariants.
    pub fn verify(&self) -> Result<()> {
        let data_err = |msg: String| Error::Data {
            key: self.concept_id.clone(),
            msg,
        };
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(data_err("class sizes must be at least 1".into()));
        }
        if self
            .per_layer
            .iter()
            .chain(&self.averaged)
            .any(|v| !v.is_finite())
        {
            return Err(data_err("non-finite entry".into()));
        }
        if self.averaged != layer_average(&self.per_layer, self.n_layers, self.hidden_dim) {
            return Err(data_err(
                "averaged is not the layer mean of per_layer".into(),
            ));
        }
        Ok(())
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.per_layer[layer * self.hidden_dim..(layer + 1) * self.hidden_dim]
    }

    /// The vector obtained by swapping the positive and negative classes.
    pub fn negated(&self) -> Self {
        ConceptVector {
            concept_id: self.concept_id.clone(),
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            per_layer: self.per_layer.iter().map(|v| -v).collect(),
            averaged: self.averaged.iter().map(|v| -v).collect(),
            n_pos: self.n_neg,
            n_neg: self.n_pos,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let per_layer: Vec<f64> = self.per_layer.iter().map(|v| v * alpha).collect();
        let averaged = layer_average(&per_layer, self.n_layers, self.hidden_dim);
        ConceptVector {
            per_layer,
            averaged,
            ..self.clone()
        }
    }
}

pub fn concept_vector(
    concept_id: &str,
    positives: &[StatementVector],
    negatives: &[StatementVector],
) -> Result<ConceptVector> {
    let pos = class_mean(positives).map_err(|e| with_class(e, concept_id, Polarity::Positive))?;
    let neg = class_mean(negatives).map_err(|e| with_class(e, concept_id, Polarity::Negative))?;
    if (pos.n_layers, pos.hidden_dim) != (neg.n_layers, neg.hidden_dim) {
        return Err(Error::ShapeMismatch(format!(
            "{concept_id}: positive class is ({}, {}), negative class is ({}, {})",
            pos.n_layers, pos.hidden_dim, neg.n_layers, neg.hidden_dim
        )));
    }
    let per_layer = pos.data.iter().zip(&neg.data).map(|(p, n)| p - n).collect();
    ConceptVector::from_per_layer(
        concept_id,
        pos.n_layers,
        pos.hidden_dim,
        per_layer,
        positives.len(),
        negatives.len(),
    )
}

fn with_class(e: Error, concept_id: &str, polarity: Polarity) -> Error {
    match e {
        Error::EmptyClass(_) => {
            Error::EmptyClass(format!("{concept_id} has no {polarity} statements"))
        }
        other => other,
    }
}

fn sum_sq(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum()
}

fn norm(u: &[f64]) -> f64 {
    sum_sq(u).sqrt()
}

/// Cosine similarity in f64, clamped to [-1, 1]. Zero-norm inputs are an error.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (su, sv) = (sum_sq(u), sum_sq(v));
    if su == 0.0 || !su.is_finite() {
        return Err(Error::DegenerateVector("first operand".into()));
    }
    if sv == 0.0 || !sv.is_finite() {
        return Err(Error::DegenerateVector("second operand".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // sqrt(su * sv) rather than |u| |v|: sqrt(fl(s * s)) == s, so cosine(x, x) is exactly 1
    Ok((dot / (su * sv).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine of two concept vectors' layer averages, naming the offending concept on failure.
pub fn concept_cosine(a: &ConceptVector, b: &ConceptVector) -> Result<f64> {
    if norm(&a.averaged) == 0.0 {
        return Err(Error::DegenerateVector(a.concept_id.clone()));
    }
    if norm(&b.averaged) == 0.0 {
        return Err(Error::DegenerateVector(b.concept_id.clone()));
    }
    cosine(&a.averaged, &b.averaged).map_err(|e| match e {
        Error::ShapeMismatch(_) => Error::ShapeMismatch(format!(
            "{} has dim {}, {} has dim {}",
            a.concept_id, a.hidden_dim, b.concept_id, b.hidden_dim
        )),
        other => other,
    })
}

fn to_f32(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

fn vector_tensor(cv: &ConceptVector, n_layers: usize, values: &[f64]) -> ActivationTensor {
    ActivationTensor {
        key: StatementKey {
            concept_id: cv.concept_id.clone(),
            polarity: Polarity::Positive,
            index: 0,
        },
        n_layers,
        n_tokens: 1,
        hidden_dim: cv.hidden_dim,
        data: to_f32(values),
        pooled: true,
        kind: Some(CONCEPT_VECTOR_KIND.to_string()),
    }
}

pub fn layers_path(dir: &Path, concept_id: &str) -> PathBuf {
    dir.join(format!("{concept_id}.layers.actv"))
}

pub fn averaged_path(dir: &Path, concept_id: &str) -> PathBuf {
    dir.join(format!("{concept_id}.avg.actv"))
}

/// Write `<id>.layers.actv` (per-layer rows) and `<id>.avg.actv` (one row) into `dir`.
///
/// The ACTV1 index field carries `n_pos * 2^32 + n_neg` so class sizes survive a round trip.
pub fn export_concept_vector(cv: &ConceptVector, dir: &Path) -> Result<()> {
    let index = ((cv.n_pos as u64) << 32) | cv.n_neg as u64;
    let mut layers = vector_tensor(cv, cv.n_layers, &cv.per_layer);
    layers.key.index = index;
    let mut avg = vector_tensor(cv, 1, &cv.averaged);
    avg.key.index = index;
    activations::write_dump(&layers, &layers_path(dir, &cv.concept_id))?;
    activations::write_dump(&avg, &averaged_path(dir, &cv.concept_id))
}

/// Read a concept vector back. The layer average is recomputed from the stored
/// f32 rows and checked against the stored average file.
pub fn import_concept_vector(dir: &Path, concept_id: &str) -> Result<ConceptVector> {
    let lpath = layers_path(dir, concept_id);
    let apath = averaged_path(dir, concept_id);
    let layers = activations::read_dump(&lpath)?;
    let avg = activations::read_dump(&apath)?;
    for (t, path) in [(&layers, &lpath), (&avg, &apath)] {
        if t.kind.as_deref() != Some(CONCEPT_VECTOR_KIND) || t.key.concept_id != concept_id {
            return Err(Error::Validation(format!(
                "{} is not a concept vector for {concept_id}",
                path.display()
            )));
        }
    }
    if avg.n_layers != 1 || avg.hidden_dim != layers.hidden_dim {
        return Err(Error::ShapeMismatch(format!(
            "{}: averaged file has shape ({}, {}), expected (1, {})",
            concept_id, avg.n_layers, avg.hidden_dim, layers.hidden_dim
        )));
    }
    let n_pos = (layers.key.index >> 32) as usize;
    let n_neg = (layers.key.index & 0xffff_ffff) as usize;
    let per_layer = layers.data.iter().map(|&v| f64::from(v)).collect();
    let cv = ConceptVector::from_per_layer(
        concept_id,
        layers.n_layers,
        layers.hidden_dim,
        per_layer,
        n_pos,
        n_neg,
    )?;
    let scale = cv.averaged.iter().fold(0f64, |m, v| m.max(v.abs()));
    for (&stored, &recomputed) in avg.data.iter().zip(&cv.averaged) {
        if (f64::from(stored) - recomputed).abs() > 1e-6 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Data {
                key: concept_id.to_string(),
                msg: "stored average disagrees with the layer mean".into(),
            });
        }
    }
    Ok(cv)
}

/// Concept ids with an exported vector in `dir`, sorted.
pub fn list_concept_vectors(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(id) = entry
            .file_name()
            .to_str()
            .and_then(|n| n.strip_suffix(".layers.actv"))
        {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}
