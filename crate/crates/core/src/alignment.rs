//! Trust models as data, and their alignment with an anchor concept.
//!
//! Each model is scored two ways against the anchor (by default `trust1`):
//! the signed mean of its members' cosine similarities, and the number of
//! members whose similarity strictly exceeds the significance threshold.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::parse_concept_id;
use crate::error::{Error, Result};
use crate::vectors::{concept_cosine, ConceptVector};

const MODELS_JSON: &str = include_str!("../data/trust_models.json");
const MODEL_CONCEPTS_JSON: &str = include_str!("../data/trust_model_concepts.json");

pub const DEFAULT_ANCHOR: &str = "trust1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustModelSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl TrustModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation("trust model without a name".into()));
        }
        if self.members.is_empty() {
            return Err(Error::Validation(format!("{} has no members", self.name)));
        }
        let mut seen = BTreeSet::new();
        for m in &self.members {
            parse_concept_id(m)?;
            if !seen.insert(m) {
                return Err(Error::Validation(format!("{} lists {m} twice", self.name)));
            }
        }
        Ok(())
    }
}

pub fn parse_models(text: &str) -> serde_json::Result<Vec<TrustModelSpec>> {
    serde_json::from_str(text)
}

pub fn validate_models(models: &[TrustModelSpec]) -> Result<()> {
    let mut names = BTreeSet::new();
    for m in models {
        m.validate()?;
        if !names.insert(&m.name) {
            return Err(Error::Validation(format!("model {} defined twice", m.name)));
        }
    }
    Ok(())
}

pub fn load_models(path: &Path) -> Result<Vec<TrustModelSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let models = parse_models(&text).map_err(|e| Error::json(path, e))?;
    validate_models(&models)?;
    Ok(models)
}

/// Marsh, Mayer, McAllister, McKnight and Castelfranchi with directional members.
pub fn builtin_models() -> Vec<TrustModelSpec> {
    parse_models(MODELS_JSON).expect("embedded trust models are valid")
}

/// Undirected concept membership per model, as tabulated alongside the directional lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConcepts {
    pub name: String,
    pub concepts: Vec<String>,
}

pub fn builtin_model_concepts() -> Vec<ModelConcepts> {
    serde_json::from_str(MODEL_CONCEPTS_JSON).expect("embedded model concepts are valid")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipDiff {
    pub model: String,
    /// Base names in the undirected table but absent from the directional list.
    pub only_in_table: Vec<String>,
    /// Base names in the directional list but absent from the undirected table.
    pub only_in_members: Vec<String>,
}

/// Compare directional member lists against undirected membership, by base name.
pub fn membership_discrepancies(
    models: &[TrustModelSpec],
    table: &[ModelConcepts],
) -> Result<Vec<MembershipDiff>> {
    let mut out = Vec::new();
    for m in models {
        let Some(row) = table.iter().find(|r| r.name == m.name) else {
            continue;
        };
        let bases: BTreeSet<String> = m
            .members
            .iter()
            .map(|id| parse_concept_id(id).map(|(b, _)| b))
            .collect::<Result<_>>()?;
        let tabled: BTreeSet<String> = row.concepts.iter().cloned().collect();
        let only_in_table: Vec<String> = tabled.difference(&bases).cloned().collect();
        let only_in_members: Vec<String> = bases.difference(&tabled).cloned().collect();
        if !only_in_table.is_empty() || !only_in_members.is_empty() {
            out.push(MembershipDiff {
                model: m.name.clone(),
                only_in_table,
                only_in_members,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSimilarity {
    pub concept_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub model_name: String,
    pub per_concept: Vec<ConceptSimilarity>,
    pub average: f64,
    pub above_threshold: Vec<String>,
    pub n_above: usize,
    pub threshold_used: f64,
    /// Members whose similarity to the anchor is negative.
    pub negative: Vec<String>,
}

pub fn score_model(
    model: &TrustModelSpec,
    sims: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<AlignmentScore> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [-1, 1]"
        )));
    }
    if model.members.is_empty() {
        return Err(Error::Validation(format!("{} has no members", model.name)));
    }
    let per_concept = model
        .members
        .iter()
        .map(|id| {
            let s = sims.get(id).copied().ok_or_else(|| {
                Error::MissingData(format!("no similarity for {id} ({})", model.name))
            })?;
            if !s.is_finite() {
                return Err(Error::Validation(format!("similarity for {id} is {s}")));
            }
            Ok(ConceptSimilarity {
                concept_id: id.clone(),
                similarity: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = per_concept.iter().map(|c| c.similarity).sum();
    let average = sum / per_concept.len() as f64;
    let above_threshold: Vec<String> = per_concept
        .iter()
        .filter(|c| c.similarity > threshold)
        .map(|c| c.concept_id.clone())
        .collect();
    let negative = per_concept
        .iter()
        .filter(|c| c.similarity < 0.0)
        .map(|c| c.concept_id.clone())
        .collect();
    Ok(AlignmentScore {
        model_name: model.name.clone(),
        n_above: above_threshold.len(),
        above_threshold,
        per_concept,
        average,
        threshold_used: threshold,
        negative,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Average,
    Count,
}

/// Models whose primary measure tied in a ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingTie {
    pub measure: Measure,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub anchor_concept_id: String,
    pub scores: Vec<AlignmentScore>,
    pub ranking_by_average: Vec<String>,
    pub ranking_by_count: Vec<String>,
    pub ties: Vec<RankingTie>,
}

impl AlignmentReport {
    pub fn score(&self, model: &str) -> Option<&AlignmentScore> {
        self.scores.iter().find(|s| s.model_name == model)
    }

    /// Distinct concepts with a negative similarity to the anchor, in first-seen order.
    pub fn negative_associations(&self) -> Vec<(String, f64)> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.scores {
            for c in &s.per_concept {
                if c.similarity < 0.0 && seen.insert(c.concept_id.clone()) {
                    out.push((c.concept_id.clone(), c.similarity));
                }
            }
        }
        out
    }
}

fn by_average(a: &AlignmentScore, b: &AlignmentScore) -> Ordering {
    b.average.total_cmp(&a.average)
}

fn by_count(a: &AlignmentScore, b: &AlignmentScore) -> Ordering {
    b.n_above.cmp(&a.n_above)
}

fn rank(scores: &[AlignmentScore], measure: Measure, ties: &mut Vec<RankingTie>) -> Vec<String> {
    type Cmp = fn(&AlignmentScore, &AlignmentScore) -> Ordering;
    let (primary, secondary): (Cmp, Cmp) = match measure {
        Measure::Average => (by_average, by_count),
        Measure::Count => (by_count, by_average),
    };
    let mut order: Vec<&AlignmentScore> = scores.iter().collect();
    order.sort_by(|a, b| {
        primary(a, b)
            .then_with(|| secondary(a, b))
            .then_with(|| a.model_name.cmp(&b.model_name))
    });
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && primary(order[start], order[end]) == Ordering::Equal {
            end += 1;
        }
        if end - start > 1 {
            ties.push(RankingTie {
                measure,
                models: order[start..end]
                    .iter()
                    .map(|s| s.model_name.clone())
                    .collect(),
            });
        }
        start = end;
    }
    order.into_iter().map(|s| s.model_name.clone()).collect()
}

/// Score every model from precomputed anchor similarities and rank them.
pub fn report_from_sims(
    anchor_concept_id: &str,
    sims: &BTreeMap<String, f64>,
    models: &[TrustModelSpec],
    threshold: f64,
) -> Result<AlignmentReport> {
    validate_models(models)?;
    let scores = models
        .iter()
        .map(|m| score_model(m, sims, threshold))
        .collect::<Result<Vec<_>>>()?;
    let mut ties = Vec::new();
    let ranking_by_average = rank(&scores, Measure::Average, &mut ties);
    let ranking_by_count = rank(&scores, Measure::Count, &mut ties);
    Ok(AlignmentReport {
        anchor_concept_id: anchor_concept_id.to_string(),
        scores,
        ranking_by_average,
        ranking_by_count,
        ties,
    })
}

/// Cosine similarity of the anchor to every model member, then [`report_from_sims`].
pub fn build_report(
    anchor: &ConceptVector,
    concepts: &[ConceptVector],
    models: &[TrustModelSpec],
    threshold: f64,
) -> Result<AlignmentReport> {
    let mut sims = BTreeMap::new();
    for m in models {
        for id in &m.members {
            if sims.contains_key(id) {
                continue;
            }
            let cv = if *id == anchor.concept_id {
                anchor
            } else {
                concepts
                    .iter()
                    .find(|c| c.concept_id == *id)
                    .ok_or_else(|| {
                        Error::MissingData(format!("no concept vector for {id} ({})", m.name))
                    })?
            };
            sims.insert(id.clone(), concept_cosine(anchor, cv)?);
        }
    }
    report_from_sims(&anchor.concept_id, &sims, models, threshold)
}
