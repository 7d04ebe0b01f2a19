//! Pairwise similarity matrices, their histogram, and percentile thresholds.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectors::{concept_cosine, ConceptVector};

pub const DEFAULT_BINS: usize = 40;
pub const DEFAULT_PERCENTILE: f64 = 80.0;
pub const PERCENTILE_METHOD: &str = "linear_between_closest_ranks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub concept_ids: Vec<String>,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(concept_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let m = SimilarityMatrix {
            concept_ids,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concept_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn index_of(&self, concept_id: &str) -> Option<usize> {
        self.concept_ids.iter().position(|c| c == concept_id)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.values.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {n} concepts",
                self.values.len()
            )));
        }
        let unique: BTreeSet<&String> = self.concept_ids.iter().collect();
        if unique.len() != n {
            return Err(Error::Validation("duplicate concept id in matrix".into()));
        }
        for i in 0..n {
            if self.get(i, i) != 1.0 {
                return Err(Error::Validation(format!(
                    "diagonal entry for {} is {}, expected 1",
                    self.concept_ids[i],
                    self.get(i, i)
                )));
            }
            for j in 0..i {
                let v = self.get(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Validation(format!(
                        "entry ({}, {}) = {v} outside [-1, 1]",
                        self.concept_ids[i], self.concept_ids[j]
                    )));
                }
                if v != self.get(j, i) {
                    return Err(Error::Validation(format!(
                        "matrix not symmetric at ({}, {})",
                        self.concept_ids[i], self.concept_ids[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cosine similarity of every pair of layer-averaged concept vectors.
pub fn pairwise_matrix(cvs: &[ConceptVector]) -> Result<SimilarityMatrix> {
    let n = cvs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "similarity matrix needs at least 2 concepts, got {n}"
        )));
    }
    let ids: Vec<String> = cvs.iter().map(|c| c.concept_id.clone()).collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != n {
        return Err(Error::Validation("duplicate concept id in input".into()));
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| concept_cosine(&cvs[i], &cvs[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // a concept with no later partner still needs its norm checked
    concept_cosine(&cvs[n - 1], &cvs[n - 1])?;
    let mut values = vec![0f64; n * n];
    for (i, row) in upper.iter().enumerate() {
        values[i * n + i] = 1.0;
        for (k, &v) in row.iter().enumerate() {
            let j = i + 1 + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    SimilarityMatrix::new(ids, values)
}

/// Strict upper triangle, row-major: `n (n - 1) / 2` values.
pub fn off_diagonal_values(m: &SimilarityMatrix) -> Vec<f64> {
    let n = m.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(m.get(i, j));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Uniform bins over [-1, 1]; bins are half-open except the last, which includes 1.
pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument(
            "histogram needs at least one bin".into(),
        ));
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("histogram of no values".into()));
    }
    let edges: Vec<f64> = (0..=n_bins)
        .map(|i| -1.0 + 2.0 * i as f64 / n_bins as f64)
        .collect();
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "histogram value {v} outside [-1, 1]"
            )));
        }
        let mut bin = (((v + 1.0) / 2.0 * n_bins as f64).floor() as usize).min(n_bins - 1);
        while bin > 0 && v < edges[bin] {
            bin -= 1;
        }
        while bin + 1 < n_bins && v >= edges[bin + 1] {
            bin += 1;
        }
        counts[bin] += 1;
    }
    Ok(Histogram {
        bin_edges: edges,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub percentile: f64,
    pub value: f64,
    pub n_pairs: usize,
    pub method: String,
}

/// Percentile with linear interpolation between the closest ranks:
/// rank `r = p/100 (n - 1)` on the ascending sort.
pub fn percentile_threshold(values: &[f64], p: f64) -> Result<ThresholdResult> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of no values".into()));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile must lie strictly between 0 and 100, got {p}"
        )));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in percentile input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let value = if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        (sorted[lo] + w * (sorted[hi] - sorted[lo])).clamp(sorted[lo], sorted[hi])
    };
    Ok(ThresholdResult {
        percentile: p,
        value,
        n_pairs: values.len(),
        method: PERCENTILE_METHOD.to_string(),
    })
}

/// Where the downstream significance threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    Computed,
    Pinned(f64),
}

impl ThresholdPolicy {
    pub fn resolve(self, computed: &ThresholdResult) -> f64 {
        match self {
            ThresholdPolicy::Computed => computed.value,
            ThresholdPolicy::Pinned(v) => v,
        }
    }
}

/// Expected dump shape and pinned threshold for reproducing a published model study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReproductionProfile {
    pub name: &'static str,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub pinned_threshold: f64,
}

/// GPT-J-6B: 28 transformer blocks of width 4096, threshold pinned at 0.6.
pub const GPTJ_6B: ReproductionProfile = ReproductionProfile {
    name: "gptj-6b",
    n_layers: 28,
    hidden_dim: 4096,
    pinned_threshold: 0.6,
};

impl ReproductionProfile {
    pub fn by_name(name: &str) -> Option<Self> {
        [GPTJ_6B].into_iter().find(|p| p.name == name)
    }

    pub fn policy(&self) -> ThresholdPolicy {
        ThresholdPolicy::Pinned(self.pinned_threshold)
    }

    pub fn check(&self, cv: &ConceptVector) -> Result<()> {
        if (cv.n_layers, cv.hidden_dim) != (self.n_layers, self.hidden_dim) {
            return Err(Error::ShapeMismatch(format!(
                "{} has shape ({}, {}), profile {} expects ({}, {})",
                cv.concept_id,
                cv.n_layers,
                cv.hidden_dim,
                self.name,
                self.n_layers,
                self.hidden_dim
            )));
        }
        Ok(())
    }
}
