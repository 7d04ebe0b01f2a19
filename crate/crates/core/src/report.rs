//! Plot-ready exports and the consolidated study bundle.
//!
//! Matrices are written with 6 decimals, report similarities with 4.
//! JSON keys follow struct field order so identical inputs give identical bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{AlignmentReport, RankingTie};
use crate::corpus::Registry;
use crate::error::{Error, Result};
use crate::similarity::{Histogram, SimilarityMatrix, ThresholdResult};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const STUDY_SCHEMA_VERSION: u32 = 1;
pub const STUDY_SCHEMA: &str = include_str!("../docs/study.schema.json");

fn round_to(v: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (v * scale).round() / scale;
    // avoid emitting -0.0
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("export serializes");
    out.push(b'\n');
    out
}

pub fn matrix_csv(m: &SimilarityMatrix) -> String {
    let n = m.len();
    let mut out = String::from("concept_id");
    for id in &m.concept_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&m.concept_ids[i]);
        for j in 0..n {
            out.push_str(&format!(",{:.6}", m.get(i, j)));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<SimilarityMatrix> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = ids.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if i >= n {
            return Err(parse_err(line, format!("more than {n} data rows")));
        }
        if record.get(0) != Some(ids[i].as_str()) {
            return Err(parse_err(
                line,
                format!(
                    "row label {:?} does not match column {:?}",
                    record.get(0),
                    ids[i]
                ),
            ));
        }
        if record.len() != n + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", n + 1, record.len()),
            ));
        }
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(
            rows + 2,
            format!("expected {n} data rows, found {rows}"),
        ));
    }
    SimilarityMatrix::new(ids, values)
}

pub fn import_matrix_csv(path: &Path) -> Result<SimilarityMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

/// Sidecar holding the row/column order of an exported heatmap: `<stem>.order.json`.
pub fn order_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "matrix".into());
    csv_path.with_file_name(format!("{stem}.order.json"))
}

#[derive(Serialize)]
struct Ordering<'a> {
    concept_ids: &'a [String],
}

pub fn export_heatmap(m: &SimilarityMatrix, path: &Path) -> Result<()> {
    write_file(path, matrix_csv(m).as_bytes())?;
    write_file(
        &order_path(path),
        &to_json_bytes(&Ordering {
            concept_ids: &m.concept_ids,
        }),
    )
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        out.push_str(&format!(
            "{:.6},{:.6},{c}\n",
            h.bin_edges[i],
            h.bin_edges[i + 1]
        ));
    }
    out
}

pub fn export_histogram(h: &Histogram, path: &Path) -> Result<()> {
    write_file(path, histogram_csv(h).as_bytes())
}

/// Threshold export, optionally carrying a pinned operational value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdExport {
    pub percentile: f64,
    pub value: f64,
    pub n_pairs: usize,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned: Option<f64>,
}

impl ThresholdExport {
    pub fn new(t: &ThresholdResult, pinned: Option<f64>) -> Self {
        ThresholdExport {
            percentile: t.percentile,
            value: t.value,
            n_pairs: t.n_pairs,
            method: t.method.clone(),
            pinned,
        }
    }

    /// The value used downstream: the pinned constant if present, otherwise the percentile.
    pub fn operational(&self) -> f64 {
        self.pinned.unwrap_or(self.value)
    }
}

pub fn threshold_json(t: &ThresholdExport) -> String {
    String::from_utf8(to_json_bytes(t)).expect("utf-8")
}

pub fn export_threshold(t: &ThresholdExport, path: &Path) -> Result<()> {
    write_file(path, threshold_json(t).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSimilarityJson {
    pub concept_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreJson {
    pub model_name: String,
    pub per_concept: Vec<ConceptSimilarityJson>,
    pub average: f64,
    pub above_threshold: Vec<String>,
    pub n_above: usize,
    pub threshold_used: f64,
    pub negative: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub anchor_concept_id: String,
    pub scores: Vec<ScoreJson>,
    pub ranking_by_average: Vec<String>,
    pub ranking_by_count: Vec<String>,
    pub ties: Vec<RankingTie>,
}

impl From<&AlignmentReport> for ReportJson {
    fn from(r: &AlignmentReport) -> Self {
        ReportJson {
            anchor_concept_id: r.anchor_concept_id.clone(),
            scores: r
                .scores
                .iter()
                .map(|s| ScoreJson {
                    model_name: s.model_name.clone(),
                    per_concept: s
                        .per_concept
                        .iter()
                        .map(|c| ConceptSimilarityJson {
                            concept_id: c.concept_id.clone(),
                            similarity: round_to(c.similarity, 4),
                        })
                        .collect(),
                    average: round_to(s.average, 4),
                    above_threshold: s.above_threshold.clone(),
                    n_above: s.n_above,
                    threshold_used: s.threshold_used,
                    negative: s.negative.clone(),
                })
                .collect(),
            ranking_by_average: r.ranking_by_average.clone(),
            ranking_by_count: r.ranking_by_count.clone(),
            ties: r.ties.clone(),
        }
    }
}

pub fn report_json(r: &AlignmentReport) -> String {
    String::from_utf8(to_json_bytes(&ReportJson::from(r))).expect("utf-8")
}

pub fn export_report(r: &AlignmentReport, path: &Path) -> Result<()> {
    write_file(path, report_json(r).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub model: String,
    pub axes: Vec<String>,
    pub values: Vec<f64>,
}

pub fn radar_series(r: &AlignmentReport) -> Vec<RadarSeries> {
    r.scores
        .iter()
        .map(|s| RadarSeries {
            model: s.model_name.clone(),
            axes: s.per_concept.iter().map(|c| c.concept_id.clone()).collect(),
            values: s
                .per_concept
                .iter()
                .map(|c| round_to(c.similarity, 4))
                .collect(),
        })
        .collect()
}

pub fn export_radar(r: &AlignmentReport, path: &Path) -> Result<()> {
    write_file(path, &to_json_bytes(&radar_series(r)))
}

/// Hex SHA-256 of the registry's canonical JSON.
pub fn registry_hash(registry: &Registry) -> String {
    hex::encode(Sha256::digest(registry.to_json().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_root: Option<String>,
    pub registry_hash: Option<String>,
    pub threshold_method: String,
    pub engine_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub concept_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBundle {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub threshold: ThresholdExport,
    pub operational_threshold: f64,
    pub histogram: Option<Histogram>,
    pub matrix: MatrixJson,
    pub report: ReportJson,
    pub warnings: Vec<String>,
}

/// Inputs to [`export_study`] that are not analysis results.
#[derive(Debug, Clone, Default)]
pub struct StudyContext<'a> {
    pub dataset_root: Option<&'a Path>,
    pub registry: Option<&'a Registry>,
}

pub fn study_bundle(
    report: &AlignmentReport,
    matrix: &SimilarityMatrix,
    histogram: Option<&Histogram>,
    threshold: &ThresholdExport,
    ctx: &StudyContext<'_>,
) -> StudyBundle {
    let mut warnings = Vec::new();
    if histogram.is_none() {
        warnings.push("histogram missing".to_string());
    }
    let n = matrix.len();
    StudyBundle {
        schema_version: STUDY_SCHEMA_VERSION,
        provenance: Provenance {
            dataset_root: ctx.dataset_root.map(|p| p.display().to_string()),
            registry_hash: ctx.registry.map(registry_hash),
            threshold_method: threshold.method.clone(),
            engine_version: ENGINE_VERSION.to_string(),
        },
        threshold: threshold.clone(),
        operational_threshold: threshold.operational(),
        histogram: histogram.cloned(),
        matrix: MatrixJson {
            concept_ids: matrix.concept_ids.clone(),
            values: (0..n)
                .map(|i| (0..n).map(|j| round_to(matrix.get(i, j), 6)).collect())
                .collect(),
        },
        report: ReportJson::from(report),
        warnings,
    }
}

pub fn study_json(bundle: &StudyBundle) -> String {
    String::from_utf8(to_json_bytes(bundle)).expect("utf-8")
}

pub fn export_study(
    report: &AlignmentReport,
    matrix: &SimilarityMatrix,
    histogram: Option<&Histogram>,
    threshold: &ThresholdExport,
    ctx: &StudyContext<'_>,
    path: &Path,
) -> Result<()> {
    let bundle = study_bundle(report, matrix, histogram, threshold, ctx);
    write_file(path, study_json(&bundle).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{builtin_models, report_from_sims};
    use crate::similarity::{histogram, percentile_threshold};
    use std::collections::BTreeMap;

    fn identity3() -> SimilarityMatrix {
        SimilarityMatrix::new(
            vec!["a1".into(), "b1".into(), "c2".into()],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap()
    }

    fn published_report() -> AlignmentReport {
        let sims: BTreeMap<String, f64> = [
            ("confidence1", 0.9225),
            ("experience1", 0.9049),
            ("reputation1", 0.8963),
            ("cooperation2", 0.8955),
            ("competence2", 0.8504),
            ("honesty2", 0.7445),
            ("performance2", 0.6571),
            ("expectation1", 0.2206),
            ("dependency1", 0.1844),
            ("ability2", 0.8587),
            ("predictable2", 0.7141),
            ("integrity2", 0.5576),
            ("benevolence2", -0.1434),
            ("risk1", -0.8462),
            ("responsibility2", 0.8934),
            ("reliability2", 0.7667),
            ("willingness2", 0.8858),
            ("commitment2", 0.8450),
            ("security1", 0.8089),
            ("fulfillment1", 0.4293),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        report_from_sims("trust1", &sims, &builtin_models(), 0.6).unwrap()
    }

    #[test]
    fn identity_heatmap_csv() {
        let csv = matrix_csv(&identity3());
        assert_eq!(
            csv,
            "concept_id,a1,b1,c2\na1,1.000000,0.000000,0.000000\nb1,0.000000,1.000000,0.000000\nc2,0.000000,0.000000,1.000000\n"
        );
    }

    #[test]
    fn heatmap_writes_order_file_and_reimports_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heat.csv");
        let m = SimilarityMatrix::new(
            vec!["a1".into(), "b1".into()],
            vec![1.0, -0.123_456_789, -0.123_456_789, 1.0],
        )
        .unwrap();
        export_heatmap(&m, &path).unwrap();
        let order: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(order_path(&path)).unwrap()).unwrap();
        assert_eq!(order["concept_ids"], serde_json::json!(["a1", "b1"]));
        let back = import_matrix_csv(&path).unwrap();
        let again = dir.path().join("again.csv");
        export_heatmap(&back, &again).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap()
        );
    }

    #[test]
    fn csv_import_errors() {
        let p = Path::new("m.csv");
        assert!(matches!(
            parse_matrix_csv("concept_id,a1,b1\na1,1,0\nb1,0,x\n", p),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_matrix_csv("concept_id,a1,b1\nb1,1,0\na1,0,1\n", p),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_matrix_csv("concept_id,a1,b1\na1,1,0\n", p).is_err());
        assert!(matches!(
            parse_matrix_csv("concept_id,a1,b1\na1,1,0.5\nb1,0.4,1\n", p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn histogram_csv_rows() {
        let h = histogram(&[-1.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(
            histogram_csv(&h),
            "bin_start,bin_end,count\n-1.000000,0.000000,1\n0.000000,1.000000,2\n"
        );
    }

    #[test]
    fn threshold_json_fields() {
        let t = percentile_threshold(&[0.0, 1.0], 80.0).unwrap();
        let plain: serde_json::Value =
            serde_json::from_str(&threshold_json(&ThresholdExport::new(&t, None))).unwrap();
        assert_eq!(
            plain,
            serde_json::json!({"percentile": 80.0, "value": 0.8, "n_pairs": 2, "method": "linear_between_closest_ranks"})
        );
        let pinned = ThresholdExport::new(&t, Some(0.6));
        assert_eq!(pinned.operational(), 0.6);
        assert!(threshold_json(&pinned).contains("\"pinned\": 0.6"));
    }

    #[test]
    fn report_json_rounds_to_four_places() {
        let r = published_report();
        let json: serde_json::Value = serde_json::from_str(&report_json(&r)).unwrap();
        let cast = json["scores"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| s["model_name"] == "Castelfranchi")
            .unwrap();
        assert_eq!(cast["average"], serde_json::json!(0.7303));
        assert_eq!(
            cast["per_concept"][2],
            serde_json::json!({"concept_id": "willingness2", "similarity": 0.8858})
        );
        assert_eq!(json["ranking_by_average"][0], "Castelfranchi");
    }

    #[test]
    fn radar_castelfranchi_has_ten_axes_in_member_order() {
        let r = published_report();
        let series = radar_series(&r);
        let cast = series.iter().find(|s| s.model == "Castelfranchi").unwrap();
        assert_eq!(cast.axes.len(), 10);
        assert_eq!(cast.values.len(), 10);
        let score = r.score("Castelfranchi").unwrap();
        for ((axis, value), c) in cast.axes.iter().zip(&cast.values).zip(&score.per_concept) {
            assert_eq!(axis, &c.concept_id);
            assert_eq!(*value, c.similarity);
        }
    }

    #[test]
    fn study_bundle_missing_histogram_is_flagged() {
        let r = published_report();
        let t = ThresholdExport::new(&percentile_threshold(&[0.0, 1.0], 80.0).unwrap(), Some(0.6));
        let b = study_bundle(&r, &identity3(), None, &t, &StudyContext::default());
        assert!(b.histogram.is_none());
        assert_eq!(b.warnings, vec!["histogram missing"]);
        let json: serde_json::Value = serde_json::from_str(&study_json(&b)).unwrap();
        assert!(json["histogram"].is_null());
        assert_eq!(json["operational_threshold"], serde_json::json!(0.6));
    }

    #[test]
    fn registry_hash_is_stable() {
        let reg = Registry::study();
        assert_eq!(registry_hash(&reg), registry_hash(&reg.clone()));
        assert_eq!(registry_hash(&reg).len(), 64);
        let base = Registry::new(crate::corpus::builtin_baseline_concepts()).unwrap();
        assert_ne!(registry_hash(&reg), registry_hash(&base));
    }

    #[test]
    fn rounding_never_emits_negative_zero() {
        assert_eq!(round_to(-0.00001, 4).to_bits(), 0f64.to_bits());
        assert_eq!(round_to(0.69734, 4), 0.6973);
    }
}
