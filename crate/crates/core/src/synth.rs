//! Synthetic activation datasets with planted concept directions.
//!
//! Every random draw comes from a SplitMix64 stream keyed by
//! `(seed, concept_id, tag, statement index)`:
//!
//! ```text
//! mix(z)   = z ^= z >> 30; z *= 0xbf58476d1ce4e5b9;
//!            z ^= z >> 27; z *= 0x94d049bb133111eb; z ^ (z >> 31)
//! key      = mix(mix(mix(seed ^ fnv1a64(concept_id)) ^ tag) ^ index)
//! next()   = state += 0x9e3779b97f4a7c15; mix(state)        (state starts at key)
//! uniform  = (next() >> 11) * 2^-53                          in [0, 1)
//! ```
//!
//! Tags: 0 draws the planted direction, 1 the positive class, 2 the negative class.
//! A statement first draws its token count `3 + next() % 10`, then
//! `n_layers * n_tokens * hidden_dim` noise values in (layer, token, dim) order.
//! Each stored value is `f32(noise_scale * (2u - 1) ± direction[dim])`.
//! Only integer ops, IEEE multiply/add, and `sqrt` are involved, so streams
//! are reproducible in any language.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use crate::activations::{write_dump, ActivationTensor, StatementKey};
use crate::corpus::{write_corpus, Polarity, StoryRecord};
use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const TAG_DIRECTION: u64 = 0;
const TAG_POSITIVE: u64 = 1;
const TAG_NEGATIVE: u64 = 2;

pub const MIN_TOKENS: usize = 3;
pub const MAX_TOKENS: usize = 12;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// A keyed SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64, concept_id: &str, tag: u64, index: u64) -> Self {
        let key = mix(mix(mix(seed ^ fnv1a64(concept_id.as_bytes())) ^ tag) ^ index);
        Stream { state: key }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [-1, 1).
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Planted {
    /// Drawn from the concept's direction stream, then normalized.
    Seeded,
    /// Normalized before use.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_statements_per_class: usize,
    pub noise_scale: f64,
    pub planted: Vec<(String, Planted)>,
}

impl SynthConfig {
    pub fn seeded(
        seed: u64,
        n_layers: usize,
        hidden_dim: usize,
        n_statements_per_class: usize,
        noise_scale: f64,
        concept_ids: impl IntoIterator<Item = String>,
    ) -> Self {
        SynthConfig {
            seed,
            n_layers,
            hidden_dim,
            n_statements_per_class,
            noise_scale,
            planted: concept_ids
                .into_iter()
                .map(|id| (id, Planted::Seeded))
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.hidden_dim == 0 || self.n_statements_per_class == 0 {
            return Err(Error::InvalidArgument(
                "layers, dim and statements per class must be at least 1".into(),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise scale must be finite and non-negative, got {}",
                self.noise_scale
            )));
        }
        if self.planted.is_empty() {
            return Err(Error::EmptyInput("no concepts to synthesize".into()));
        }
        let mut seen = BTreeSet::new();
        for (id, _) in &self.planted {
            if !seen.insert(id) {
                return Err(Error::Validation(format!("concept {id} planted twice")));
            }
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64], concept_id: &str) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateVector(format!(
            "planted direction for {concept_id}"
        )));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

pub fn planted_direction(
    cfg: &SynthConfig,
    concept_id: &str,
    planted: &Planted,
) -> Result<Vec<f64>> {
    let mut v = match planted {
        Planted::Seeded => {
            let mut s = Stream::new(cfg.seed, concept_id, TAG_DIRECTION, 0);
            (0..cfg.hidden_dim).map(|_| s.symmetric()).collect()
        }
        Planted::Explicit(v) => {
            if v.len() != cfg.hidden_dim {
                return Err(Error::ShapeMismatch(format!(
                    "planted direction for {concept_id} has {} entries, dim is {}",
                    v.len(),
                    cfg.hidden_dim
                )));
            }
            v.clone()
        }
    };
    normalize(&mut v, concept_id)?;
    Ok(v)
}

fn statement(
    cfg: &SynthConfig,
    concept_id: &str,
    polarity: Polarity,
    index: u64,
    direction: &[f64],
) -> ActivationTensor {
    let (tag, sign) = match polarity {
        Polarity::Positive => (TAG_POSITIVE, 1.0),
        Polarity::Negative => (TAG_NEGATIVE, -1.0),
    };
    let mut s = Stream::new(cfg.seed, concept_id, tag, index);
    let n_tokens = MIN_TOKENS + (s.next_u64() % (MAX_TOKENS - MIN_TOKENS + 1) as u64) as usize;
    let mut data = Vec::with_capacity(cfg.n_layers * n_tokens * cfg.hidden_dim);
    for _layer in 0..cfg.n_layers {
        for _token in 0..n_tokens {
            for &d in direction {
                data.push((cfg.noise_scale * s.symmetric() + sign * d) as f32);
            }
        }
    }
    ActivationTensor {
        key: StatementKey {
            concept_id: concept_id.to_string(),
            polarity,
            index,
        },
        n_layers: cfg.n_layers,
        n_tokens,
        hidden_dim: cfg.hidden_dim,
        data,
        pooled: false,
        kind: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConcept {
    pub concept_id: String,
    /// Unit planted direction.
    pub direction: Vec<f64>,
    pub positives: Vec<ActivationTensor>,
    pub negatives: Vec<ActivationTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub concepts: Vec<SynthConcept>,
}

impl SynthDataset {
    pub fn tensors(&self) -> impl Iterator<Item = &ActivationTensor> {
        self.concepts
            .iter()
            .flat_map(|c| c.positives.iter().chain(&c.negatives))
    }

    pub fn concept(&self, concept_id: &str) -> Option<&SynthConcept> {
        self.concepts.iter().find(|c| c.concept_id == concept_id)
    }

    /// Placeholder one-line stories, one per generated statement.
    pub fn corpus(&self) -> Vec<StoryRecord> {
        self.tensors()
            .map(|t| StoryRecord {
                concept_id: t.key.concept_id.clone(),
                polarity: t.key.polarity,
                index: t.key.index,
                text: format!(
                    "Synthetic {} statement {} for {}.",
                    t.key.polarity, t.key.index, t.key.concept_id
                ),
            })
            .collect()
    }

    /// Write every tensor under `root` in the dataset layout, plus `root/corpus.jsonl`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let tensors: Vec<&ActivationTensor> = self.tensors().collect();
        tensors
            .par_iter()
            .try_for_each(|t| write_dump(t, &root.join(t.key.relative_path())))?;
        write_corpus(&self.corpus(), &root.join("corpus.jsonl"))
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let concepts = cfg
        .planted
        .par_iter()
        .map(|(id, planted)| {
            let direction = planted_direction(cfg, id, planted)?;
            let class = |polarity| {
                (0..cfg.n_statements_per_class as u64)
                    .map(|i| statement(cfg, id, polarity, i, &direction))
                    .collect::<Vec<_>>()
            };
            Ok(SynthConcept {
                concept_id: id.clone(),
                positives: class(Polarity::Positive),
                negatives: class(Polarity::Negative),
                direction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { concepts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{encode, load_statement_vectors, mean_pool};
    use crate::vectors::{concept_cosine, concept_vector};

    fn build(ds: &SynthDataset, id: &str) -> crate::vectors::ConceptVector {
        let c = ds.concept(id).unwrap();
        let pool =
            |ts: &[ActivationTensor]| ts.iter().map(|t| mean_pool(t).unwrap()).collect::<Vec<_>>();
        concept_vector(id, &pool(&c.positives), &pool(&c.negatives)).unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // SplitMix64 seeded with 0 yields these first outputs
        let mut s = Stream { state: 0 };
        assert_eq!(s.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(s.next_u64(), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn noise_free_single_statement_recovers_twice_e1() {
        let cfg = SynthConfig {
            seed: 3,
            n_layers: 3,
            hidden_dim: 4,
            n_statements_per_class: 1,
            noise_scale: 0.0,
            planted: vec![("trust1".into(), Planted::Explicit(vec![1.0, 0.0, 0.0, 0.0]))],
        };
        let ds = generate(&cfg).unwrap();
        let cv = build(&ds, "trust1");
        assert_eq!(cv.averaged, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn parallel_plants_are_parallel() {
        let dir = vec![0.3, -0.2, 0.9];
        let cfg = SynthConfig {
            seed: 11,
            n_layers: 2,
            hidden_dim: 3,
            n_statements_per_class: 4,
            noise_scale: 0.0,
            planted: vec![
                ("a1".into(), Planted::Explicit(dir.clone())),
                ("b1".into(), Planted::Explicit(dir)),
            ],
        };
        let ds = generate(&cfg).unwrap();
        let c = concept_cosine(&build(&ds, "a1"), &build(&ds, "b1")).unwrap();
        assert!((c - 1.0).abs() <= 1e-12, "{c}");
    }

    #[test]
    fn orthogonal_plants_stay_near_orthogonal() {
        let cfg = SynthConfig {
            seed: 5,
            n_layers: 2,
            hidden_dim: 8,
            n_statements_per_class: 100,
            noise_scale: 0.01,
            planted: vec![
                (
                    "a1".into(),
                    Planted::Explicit(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                ),
                (
                    "b1".into(),
                    Planted::Explicit(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                ),
            ],
        };
        let ds = generate(&cfg).unwrap();
        let c = concept_cosine(&build(&ds, "a1"), &build(&ds, "b1")).unwrap();
        assert!(c.abs() < 0.05, "{c}");
    }

    #[test]
    fn recovered_direction_is_positive_multiple_when_noise_free() {
        let cfg = SynthConfig::seeded(9, 3, 6, 2, 0.0, ["x1".to_string()]);
        let ds = generate(&cfg).unwrap();
        let cv = build(&ds, "x1");
        let dir = &ds.concept("x1").unwrap().direction;
        let c = crate::vectors::cosine(&cv.averaged, dir).unwrap();
        assert!((c - 1.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn token_counts_in_range_and_deterministic() {
        let cfg = SynthConfig::seeded(1, 2, 3, 20, 0.5, ["a1".to_string(), "b2".to_string()]);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let counts: BTreeSet<usize> = a.tensors().map(|t| t.n_tokens).collect();
        assert!(counts
            .iter()
            .all(|&n| (MIN_TOKENS..=MAX_TOKENS).contains(&n)));
        assert!(counts.len() > 3);
    }

    #[test]
    fn streams_are_keyed_by_concept_not_position() {
        let one = SynthConfig::seeded(4, 1, 4, 2, 0.3, ["b1".to_string()]);
        let two = SynthConfig::seeded(4, 1, 4, 2, 0.3, ["a1".to_string(), "b1".to_string()]);
        let x = generate(&one).unwrap();
        let y = generate(&two).unwrap();
        assert_eq!(x.concept("b1"), y.concept("b1"));
    }

    #[test]
    fn duplicate_and_invalid_configs() {
        let mut cfg = SynthConfig::seeded(1, 1, 2, 1, 0.0, ["a1".to_string(), "a1".to_string()]);
        assert!(matches!(generate(&cfg), Err(Error::Validation(_))));
        cfg.planted.pop();
        cfg.hidden_dim = 0;
        assert!(generate(&cfg).is_err());
        let cfg = SynthConfig {
            planted: vec![("a1".into(), Planted::Explicit(vec![0.0, 0.0]))],
            ..SynthConfig::seeded(1, 1, 2, 1, 0.0, [])
        };
        assert!(matches!(generate(&cfg), Err(Error::DegenerateVector(_))));
    }

    #[test]
    fn written_dataset_is_byte_identical_and_loadable() {
        let cfg = SynthConfig::seeded(2, 2, 4, 3, 0.2, ["a1".to_string(), "a2".to_string()]);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&cfg).unwrap().write(d1.path()).unwrap();
        generate(&cfg).unwrap().write(d2.path()).unwrap();
        for rel in ["a1/positive/0.actv", "a2/negative/2.actv", "corpus.jsonl"] {
            assert_eq!(
                std::fs::read(d1.path().join(rel)).unwrap(),
                std::fs::read(d2.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        let (p, n) = load_statement_vectors(d1.path(), "a2").unwrap();
        assert_eq!((p.len(), n.len()), (3, 3));
        let ds = generate(&cfg).unwrap();
        let t = &ds.concept("a1").unwrap().positives[0];
        assert_eq!(
            std::fs::read(d1.path().join("a1/positive/0.actv")).unwrap(),
            encode(t).unwrap()
        );
    }
}
