//! Fixtures and an independent reference implementation shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::path::Path;

use concept_align::corpus::builtin_baseline_concepts;
use concept_align::synth::{self, SynthConfig, SynthDataset};

/// Published anchor similarities of the twenty trust-related concepts to `trust1`.
pub const PUBLISHED_SIMS: [(&str, f64); 20] = [
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
];

pub fn published_map() -> BTreeMap<String, f64> {
    PUBLISHED_SIMS
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

pub fn write_published_sims(path: &Path) {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&published_map()).unwrap(),
    )
    .unwrap();
}

pub fn baseline_ids() -> Vec<String> {
    builtin_baseline_concepts()
        .iter()
        .map(|c| c.concept_id())
        .collect()
}

/// Shape used for a given oracle seed: L in 1..=4, D in 2..=8, 1..=10 statements per class.
pub fn oracle_shape(seed: u64) -> (usize, usize, usize) {
    let layers = 1 + (seed as usize % 4);
    let dim = 2 + (seed as usize * 3 % 7);
    let per_class = 1 + (seed as usize * 7 % 10);
    (layers, dim, per_class)
}

pub fn synth_baseline(seed: u64) -> SynthDataset {
    let (layers, dim, per_class) = oracle_shape(seed);
    let cfg = SynthConfig::seeded(seed, layers, dim, per_class, 0.5, baseline_ids());
    synth::generate(&cfg).unwrap()
}

/// A dump decoded by hand from the raw bytes.
pub struct RawDump {
    pub concept_id: String,
    pub polarity: String,
    pub index: u64,
    pub layers: usize,
    pub tokens: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

pub fn decode_raw(bytes: &[u8]) -> RawDump {
    assert_eq!(&bytes[..6], b"ACTV1\n");
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[10..10 + hlen]).unwrap();
    assert_eq!(header["dtype"], "f32le");
    let data: Vec<f32> = bytes[10 + hlen..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let get = |k: &str| header[k].as_u64().unwrap();
    RawDump {
        concept_id: header["concept_id"].as_str().unwrap().to_string(),
        polarity: header["polarity"].as_str().unwrap().to_string(),
        index: get("index"),
        layers: get("n_layers") as usize,
        tokens: get("n_tokens") as usize,
        dim: get("hidden_dim") as usize,
        data,
    }
}

/// Mean over tokens for each (layer, dim), summed in f64 and stored as f32.
pub fn naive_pool(d: &RawDump) -> Vec<Vec<f32>> {
    let mut out = vec![vec![0f32; d.dim]; d.layers];
    for l in 0..d.layers {
        for k in 0..d.dim {
            let mut s = 0f64;
            for t in 0..d.tokens {
                s += f64::from(d.data[(l * d.tokens + t) * d.dim + k]);
            }
            out[l][k] = (s / d.tokens as f64) as f32;
        }
    }
    out
}

fn class_dumps(root: &Path, concept_id: &str, polarity: &str) -> Vec<RawDump> {
    let dir = root.join(concept_id).join(polarity);
    let mut dumps: Vec<RawDump> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| decode_raw(&std::fs::read(e.unwrap().path()).unwrap()))
        .collect();
    dumps.sort_by_key(|d| d.index);
    for d in &dumps {
        assert_eq!(
            (d.concept_id.as_str(), d.polarity.as_str()),
            (concept_id, polarity)
        );
    }
    dumps
}

/// Per-layer difference of class means; returns (per_layer rows, layer average).
pub fn naive_concept_vector(root: &Path, concept_id: &str) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mean = |polarity: &str| {
        let pooled: Vec<Vec<Vec<f32>>> = class_dumps(root, concept_id, polarity)
            .iter()
            .map(naive_pool)
            .collect();
        let (layers, dim) = (pooled[0].len(), pooled[0][0].len());
        let mut m = vec![vec![0f64; dim]; layers];
        for l in 0..layers {
            for k in 0..dim {
                let mut s = 0f64;
                for p in &pooled {
                    s += f64::from(p[l][k]);
                }
                m[l][k] = s / pooled.len() as f64;
            }
        }
        m
    };
    let (pos, neg) = (mean("positive"), mean("negative"));
    let per_layer: Vec<Vec<f64>> = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p.iter().zip(n).map(|(a, b)| a - b).collect())
        .collect();
    let dim = per_layer[0].len();
    let avg = (0..dim)
        .map(|k| per_layer.iter().map(|row| row[k]).sum::<f64>() / per_layer.len() as f64)
        .collect();
    (per_layer, avg)
}

pub fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

pub fn naive_matrix(avgs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = avgs.len();
    let mut m = vec![vec![0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = if i == j {
                1.0
            } else {
                naive_cosine(&avgs[i], &avgs[j])
            };
        }
    }
    m
}

pub fn upper_triangle(m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            out.push(m[i][j]);
        }
    }
    out
}

/// Sort, then interpolate linearly between the two closest ranks.
pub fn sort_percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let r = p / 100.0 * (s.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    s[lo] + (r - lo as f64) * (s[hi] - s[lo])
}

pub fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("concept-align").chain(args.iter().copied());
    let code = concept_align::cli::run_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

/// Engine vs naive reference on one synthetic seed; returns the largest vector and matrix deviations.
pub fn oracle_check(seed: u64) -> Result<(f64, f64), String> {
    use concept_align::activations::load_statement_vectors;
    use concept_align::similarity::{off_diagonal_values, pairwise_matrix, percentile_threshold};
    use concept_align::vectors::concept_vector;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = synth_baseline(seed);
    ds.write(dir.path()).map_err(|e| e.to_string())?;
    let ids = baseline_ids();
    let mut cvs = Vec::new();
    let mut naive_avgs = Vec::new();
    let mut vec_dev = 0f64;
    for id in &ids {
        let (pos, neg) = load_statement_vectors(dir.path(), id).map_err(|e| e.to_string())?;
        let cv = concept_vector(id, &pos, &neg).map_err(|e| e.to_string())?;
        let (per_layer, avg) = naive_concept_vector(dir.path(), id);
        for (l, row) in per_layer.iter().enumerate() {
            for (a, b) in cv.layer(l).iter().zip(row) {
                vec_dev = vec_dev.max((a - b).abs());
            }
        }
        for (a, b) in cv.averaged.iter().zip(&avg) {
            vec_dev = vec_dev.max((a - b).abs());
        }
        cvs.push(cv);
        naive_avgs.push(avg);
    }
    let m = pairwise_matrix(&cvs).map_err(|e| e.to_string())?;
    let naive = naive_matrix(&naive_avgs);
    let mut mat_dev = 0f64;
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            mat_dev = mat_dev.max((m.get(i, j) - naive[i][j]).abs());
        }
    }
    if vec_dev > 1e-9 || mat_dev > 1e-9 {
        return Err(format!(
            "seed {seed}: vector dev {vec_dev:e}, matrix dev {mat_dev:e}"
        ));
    }
    let values = off_diagonal_values(&m);
    if values.len() != 1770 {
        return Err(format!("seed {seed}: {} off-diagonal values", values.len()));
    }
    let t = percentile_threshold(&values, 80.0).map_err(|e| e.to_string())?;
    let oracle = sort_percentile(&values, 80.0);
    if t.value != oracle {
        return Err(format!(
            "seed {seed}: threshold {} != sort oracle {oracle}",
            t.value
        ));
    }
    let naive_t = sort_percentile(&upper_triangle(&naive), 80.0);
    if (t.value - naive_t).abs() > 1e-9 {
        return Err(format!(
            "seed {seed}: threshold {} vs naive chain {naive_t}",
            t.value
        ));
    }
    Ok((vec_dev, mat_dev))
}

/// Exchange a concept's positive and negative dumps on disk, rewriting their headers.
pub fn swap_classes(root: &Path, concept_id: &str) {
    use concept_align::activations::{read_dump, write_dump};
    let base = root.join(concept_id);
    std::fs::rename(base.join("positive"), base.join("tmp")).unwrap();
    std::fs::rename(base.join("negative"), base.join("positive")).unwrap();
    std::fs::rename(base.join("tmp"), base.join("negative")).unwrap();
    for pol in ["positive", "negative"] {
        for entry in std::fs::read_dir(base.join(pol)).unwrap() {
            let path = entry.unwrap().path();
            let mut t = read_dump(&path).unwrap();
            t.key.polarity = pol.parse().unwrap();
            write_dump(&t, &path).unwrap();
        }
    }
}
