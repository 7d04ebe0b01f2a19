//! Dyadic concepts, their contrastive prompt templates, and story corpora.
//!
//! A concept is authored once per direction of the dyad: suffix `1` means the
//! attitude runs from person A to person B, suffix `2` from B to A. Templates
//! are direction-specific text with `{A}` and `{B}` placeholders; rendering
//! never swaps roles on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BASELINE_JSON: &str = include_str!("../data/baseline_concepts.json");
const TRUST_JSON: &str = include_str!("../data/trust_concepts.json");
const CONTEXT_JSON: &str = include_str!("../data/default_context.json");

/// Number of stories per (concept, polarity) a full corpus is expected to hold.
pub const EXPECTED_STORIES_PER_CLASS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub fn suffix(self) -> char {
        match self {
            Direction::AtoB => '1',
            Direction::BtoA => '2',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    BaselinePositive,
    BaselineNegative,
    TrustRelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            other => Err(Error::Validation(format!("unknown polarity {other:?}"))),
        }
    }
}

fn valid_base_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Split a directional concept id such as `cooperation2` into its base name and direction.
pub fn parse_concept_id(id: &str) -> Result<(String, Direction)> {
    let direction = match id.chars().last() {
        Some('1') => Direction::AtoB,
        Some('2') => Direction::BtoA,
        _ => {
            return Err(Error::Validation(format!(
                "concept id {id:?} must end in 1 or 2"
            )))
        }
    };
    let base = &id[..id.len() - 1];
    if !valid_base_name(base) {
        return Err(Error::Validation(format!(
            "concept id {id:?} has an invalid base name"
        )));
    }
    Ok((base.to_string(), direction))
}

pub fn concept_id(base_name: &str, direction: Direction) -> String {
    format!("{base_name}{}", direction.suffix())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadContext {
    pub person_a: String,
    pub person_b: String,
    pub background: String,
}

impl Default for DyadContext {
    fn default() -> Self {
        serde_json::from_str(CONTEXT_JSON).expect("embedded context is valid JSON")
    }
}

impl DyadContext {
    pub fn validate(&self) -> Result<()> {
        if self.person_a.trim().is_empty()
            || self.person_b.trim().is_empty()
            || self.background.trim().is_empty()
        {
            return Err(Error::Validation(
                "dyad context fields must be non-empty".into(),
            ));
        }
        if self.person_a == self.person_b {
            return Err(Error::Validation(format!(
                "dyad context names the same person twice: {:?}",
                self.person_a
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ctx: DyadContext = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        ctx.validate()?;
        Ok(ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub base_name: String,
    pub direction: Direction,
    pub positive_template: String,
    pub negative_template: String,
    pub category: Category,
}

impl ConceptSpec {
    pub fn concept_id(&self) -> String {
        concept_id(&self.base_name, self.direction)
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_base_name(&self.base_name) {
            return Err(Error::Validation(format!(
                "invalid base name {:?}",
                self.base_name
            )));
        }
        check_template(&self.positive_template)?;
        check_template(&self.negative_template)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    A,
    B,
}

fn tokenize(template: &str) -> Result<Vec<Piece<'_>>> {
    let mut pieces = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(Error::Template(format!(
                "unmatched '}}' in template {template:?}"
            )));
        }
        if open > 0 {
            pieces.push(Piece::Text(&rest[..open]));
        }
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Template(format!("unclosed '{{' in template {template:?}")))?;
        pieces.push(match &after[..close] {
            "A" => Piece::A,
            "B" => Piece::B,
            other => {
                return Err(Error::Template(format!(
                    "unknown placeholder {{{other}}} in template {template:?}"
                )))
            }
        });
        rest = &after[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    Ok(pieces)
}

fn check_template(template: &str) -> Result<()> {
    let pieces = tokenize(template)?;
    if !pieces.iter().any(|p| matches!(p, Piece::A | Piece::B)) {
        return Err(Error::Template(format!(
            "template has no {{A}} or {{B}} placeholder: {template:?}"
        )));
    }
    Ok(())
}

fn render_template(template: &str, ctx: &DyadContext) -> Result<String> {
    check_template(template)?;
    let mut out = String::with_capacity(template.len() + 16);
    for piece in tokenize(template)? {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::A => out.push_str(&ctx.person_a),
            Piece::B => out.push_str(&ctx.person_b),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub concept_id: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

/// Render both prompts for a concept: background sentence, a space, then the filled template.
pub fn render_prompts(spec: &ConceptSpec, ctx: &DyadContext) -> Result<PromptPair> {
    ctx.validate()?;
    let prefix = ctx.background.trim_end();
    let positive = render_template(&spec.positive_template, ctx)?;
    let negative = render_template(&spec.negative_template, ctx)?;
    Ok(PromptPair {
        concept_id: spec.concept_id(),
        positive_prompt: format!("{prefix} {positive}"),
        negative_prompt: format!("{prefix} {negative}"),
    })
}

/// An ordered set of concepts with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    specs: Vec<ConceptSpec>,
}

impl Registry {
    pub fn new(specs: Vec<ConceptSpec>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for spec in &specs {
            spec.validate()?;
            let id = spec.concept_id();
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!("duplicate concept id {id}")));
            }
        }
        Ok(Registry { specs })
    }

    pub fn from_json(text: &str) -> serde_json::Result<Vec<ConceptSpec>> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let specs = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        Self::new(specs)
    }

    /// The baseline emotions followed by the trust concepts they do not already cover.
    pub fn study() -> Self {
        let mut reg = Registry::new(builtin_baseline_concepts()).expect("builtin registry");
        reg.extend(builtin_trust_concepts())
            .expect("builtin trust concepts agree with the baseline");
        reg
    }

    /// Append concepts, skipping ones already present with identical templates.
    pub fn extend(&mut self, specs: impl IntoIterator<Item = ConceptSpec>) -> Result<()> {
        for spec in specs {
            spec.validate()?;
            let id = spec.concept_id();
            match self.get(&id) {
                Some(existing)
                    if existing.positive_template == spec.positive_template
                        && existing.negative_template == spec.negative_template => {}
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "concept {id} defined twice with different templates"
                    )))
                }
                None => self.specs.push(spec),
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> &[ConceptSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, concept_id: &str) -> Option<&ConceptSpec> {
        self.specs.iter().find(|s| s.concept_id() == concept_id)
    }

    pub fn contains(&self, concept_id: &str) -> bool {
        self.get(concept_id).is_some()
    }

    pub fn concept_ids(&self) -> Vec<String> {
        self.specs.iter().map(ConceptSpec::concept_id).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.specs).expect("registry serializes");
        s.push('\n');
        s
    }
}

/// The 30 baseline emotions in both directions (60 concepts).
pub fn builtin_baseline_concepts() -> Vec<ConceptSpec> {
    Registry::from_json(BASELINE_JSON).expect("embedded baseline registry is valid")
}

/// One concept per directional trust-model member.
pub fn builtin_trust_concepts() -> Vec<ConceptSpec> {
    Registry::from_json(TRUST_JSON).expect("embedded trust registry is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryRecord {
    pub concept_id: String,
    pub polarity: Polarity,
    pub index: u64,
    pub text: String,
}

impl StoryRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("story text is empty".into());
        }
        if self.text.contains(['\n', '\r']) {
            return Err("story text spans more than one line".into());
        }
        parse_concept_id(&self.concept_id).map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_positive: usize,
    pub n_negative: usize,
}

pub type CorpusManifest = BTreeMap<String, ClassCounts>;

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<StoryRecord>,
    pub manifest: CorpusManifest,
    /// Non-fatal findings, e.g. classes that deviate from the expected story count.
    pub warnings: Vec<String>,
}

pub fn parse_corpus(text: &str, path: &Path, registry: Option<&Registry>) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut manifest = CorpusManifest::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let record: StoryRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(parse_err)?;
        if let Some(reg) = registry {
            if !reg.contains(&record.concept_id) {
                return Err(Error::Validation(format!(
                    "line {line_no}: unknown concept id {}",
                    record.concept_id
                )));
            }
        }
        if !seen.insert((record.concept_id.clone(), record.polarity, record.index)) {
            return Err(parse_err(format!(
                "duplicate story {} {} #{}",
                record.concept_id, record.polarity, record.index
            )));
        }
        let counts = manifest.entry(record.concept_id.clone()).or_default();
        match record.polarity {
            Polarity::Positive => counts.n_positive += 1,
            Polarity::Negative => counts.n_negative += 1,
        }
        records.push(record);
    }
    let warnings = manifest
        .iter()
        .filter(|(_, c)| {
            c.n_positive != EXPECTED_STORIES_PER_CLASS || c.n_negative != EXPECTED_STORIES_PER_CLASS
        })
        .map(|(id, c)| {
            format!(
                "{id}: {} positive / {} negative stories (expected {EXPECTED_STORIES_PER_CLASS} each)",
                c.n_positive, c.n_negative
            )
        })
        .collect();
    Ok(Corpus {
        records,
        manifest,
        warnings,
    })
}

pub fn load_corpus(path: &Path, registry: Option<&Registry>) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path, registry)
}

pub fn write_corpus(records: &[StoryRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("story serializes"));
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
