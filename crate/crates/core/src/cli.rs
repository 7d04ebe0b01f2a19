//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::activations::load_statement_vectors;
use crate::alignment::{self, AlignmentReport, TrustModelSpec, DEFAULT_ANCHOR};
use crate::corpus::{self, DyadContext, Registry};
use crate::error::{Error, Result};
use crate::report::{self, StudyContext, ThresholdExport};
use crate::similarity::{
    self, ReproductionProfile, SimilarityMatrix, ThresholdPolicy, DEFAULT_BINS,
};
use crate::synth::{self, SynthConfig};
use crate::vectors::{self, ConceptVector};

pub const THREADS_ENV: &str = "CONCEPT_ALIGN_THREADS";
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "concept-align",
    version,
    about = "Concept vectors, similarity thresholds and trust-model alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render every concept's positive/negative story-generation prompt as JSON lines.
    #[command(alias = "emit-prompts")]
    Prompts {
        /// Concept registry JSON (defaults to the built-in study registry).
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Dyad context JSON (defaults to the built-in context).
        #[arg(long)]
        context: Option<PathBuf>,
        /// Output file; prompts go to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic ACTV1 dataset with planted concept directions.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long = "per-class")]
        per_class: usize,
        #[arg(long)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
        /// Concepts to plant (defaults to the built-in study registry).
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Build and export a concept vector for every registry concept.
    Vectors {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip concepts with no dumps instead of failing.
        #[arg(long)]
        skip_missing: bool,
    },
    /// Pairwise cosine similarity matrix over exported concept vectors.
    Matrix {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict and order the matrix by this registry.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[command(flatten)]
        hist: HistogramArgs,
    },
    /// Percentile threshold over a matrix's off-diagonal similarities.
    Threshold {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        hist: HistogramArgs,
    },
    /// Score trust models against an anchor concept.
    Align {
        #[arg(long, required_unless_present = "sims_file")]
        vectors: Option<PathBuf>,
        /// JSON map concept_id -> similarity to the anchor, used instead of vectors.
        #[arg(long = "sims-file", conflicts_with = "vectors")]
        sims_file: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_ANCHOR)]
        anchor: String,
        /// A number, or a threshold JSON file (its pinned value wins over the computed one).
        #[arg(long)]
        threshold: String,
        /// Trust model JSON (defaults to the built-in five models).
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        radar: Option<PathBuf>,
    },
    /// Full study: baseline matrix, histogram, threshold, alignment, bundled as JSON.
    Report {
        #[arg(long)]
        vectors: PathBuf,
        /// Registry of the baseline concepts (defaults to the built-in 60).
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Registry recorded in the provenance hash (defaults to the built-in study registry).
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long = "data-root")]
        data_root: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_ANCHOR)]
        anchor: String,
        #[arg(long)]
        models: Option<PathBuf>,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        no_histogram: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long)]
        radar: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct HistogramArgs {
    /// Also write the histogram of off-diagonal similarities as CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    #[arg(long, default_value_t = similarity::DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Pin the operational threshold to this constant.
    #[arg(long)]
    pin: Option<f64>,
    /// Reproduction profile (e.g. gptj-6b) whose pinned threshold and shape apply.
    #[arg(long)]
    profile: Option<String>,
}

impl ThresholdArgs {
    fn profile(&self) -> Result<Option<ReproductionProfile>> {
        self.profile
            .as_deref()
            .map(|name| {
                ReproductionProfile::by_name(name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown profile {name:?}")))
            })
            .transpose()
    }

    fn policy(&self) -> Result<ThresholdPolicy> {
        if let Some(v) = self.pin {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "pinned threshold {v} outside [-1, 1]"
                )));
            }
            return Ok(ThresholdPolicy::Pinned(v));
        }
        Ok(self
            .profile()?
            .map_or(ThresholdPolicy::Computed, |p| p.policy()))
    }

    fn export(&self, values: &[f64]) -> Result<ThresholdExport> {
        let computed = similarity::percentile_threshold(values, self.percentile)?;
        let pinned = match self.policy()? {
            ThresholdPolicy::Computed => None,
            ThresholdPolicy::Pinned(v) => Some(v),
        };
        Ok(ThresholdExport::new(&computed, pinned))
    }
}

fn load_registry(path: Option<&Path>) -> Result<Registry> {
    match path {
        Some(p) => Registry::load(p),
        None => Ok(Registry::study()),
    }
}

fn load_models(path: Option<&Path>) -> Result<Vec<TrustModelSpec>> {
    match path {
        Some(p) => alignment::load_models(p),
        None => Ok(alignment::builtin_models()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn import_vectors(dir: &Path, ids: &[String]) -> Result<Vec<ConceptVector>> {
    ids.par_iter()
        .map(|id| vectors::import_concept_vector(dir, id))
        .collect()
}

fn histogram_if_requested(values: &[f64], args: &HistogramArgs) -> Result<()> {
    if let Some(path) = &args.histogram {
        report::export_histogram(&similarity::histogram(values, args.bins)?, path)?;
    }
    Ok(())
}

fn read_threshold(arg: &str) -> Result<f64> {
    let value = match arg.trim().parse::<f64>() {
        Ok(v) => v,
        Err(_) => {
            let path = Path::new(arg);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let t: ThresholdExport =
                serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
            t.operational()
        }
    };
    if !(-1.0..=1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "threshold {value} outside [-1, 1]"
        )));
    }
    Ok(value)
}

fn read_sims(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn summarize(report: &AlignmentReport, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "anchor: {}", report.anchor_concept_id)?;
    writeln!(
        out,
        "{:<5} {:<15} {:>8} {:>8}",
        "rank", "model", "average", "n_above"
    )?;
    for (i, name) in report.ranking_by_average.iter().enumerate() {
        let s = report.score(name).expect("ranked model has a score");
        writeln!(
            out,
            "{:<5} {:<15} {:>8.4} {:>8}",
            i + 1,
            name,
            s.average,
            s.n_above
        )?;
    }
    writeln!(out, "by count: {}", report.ranking_by_count.join(", "))?;
    for tie in &report.ties {
        writeln!(out, "tie ({:?}): {}", tie.measure, tie.models.join(", "))?;
    }
    for (id, sim) in report.negative_associations() {
        writeln!(out, "negative association: {id} {sim:.4}")?;
    }
    Ok(())
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<stdout>", e);
    match command {
        Command::Prompts {
            registry,
            context,
            out,
        } => {
            let reg = load_registry(registry.as_deref())?;
            let ctx = match context {
                Some(p) => DyadContext::load(&p)?,
                None => DyadContext::default(),
            };
            let mut text = String::new();
            for spec in reg.specs() {
                let pair = corpus::render_prompts(spec, &ctx)?;
                text.push_str(&serde_json::to_string(&pair).expect("prompt pair serializes"));
                text.push('\n');
            }
            match out {
                Some(out) => {
                    write_text(&out, &text)?;
                    writeln!(
                        stdout,
                        "wrote {} prompt pairs to {}",
                        reg.len(),
                        out.display()
                    )
                    .map_err(io_err)?;
                }
                None => write!(stdout, "{text}").map_err(io_err)?,
            }
        }
        Command::Synth {
            seed,
            layers,
            dim,
            per_class,
            noise,
            out,
            registry,
        } => {
            let reg = load_registry(registry.as_deref())?;
            let cfg = SynthConfig::seeded(seed, layers, dim, per_class, noise, reg.concept_ids());
            let ds = synth::generate(&cfg)?;
            ds.write(&out)?;
            write_text(&out.join("registry.json"), &reg.to_json())?;
            writeln!(
                stdout,
                "wrote {} concepts x {} statements per class to {}",
                reg.len(),
                per_class,
                out.display()
            )
            .map_err(io_err)?;
        }
        Command::Vectors {
            data,
            registry,
            out,
            skip_missing,
        } => {
            let reg = load_registry(registry.as_deref())?;
            let ids = reg.concept_ids();
            let built: Vec<Option<ConceptVector>> = ids
                .par_iter()
                .map(|id| {
                    if skip_missing && !data.join(id).is_dir() {
                        return Ok(None);
                    }
                    let (pos, neg) = load_statement_vectors(&data, id)?;
                    vectors::concept_vector(id, &pos, &neg).map(Some)
                })
                .collect::<Result<_>>()?;
            let mut written = 0;
            for cv in built.iter().flatten() {
                vectors::export_concept_vector(cv, &out)?;
                written += 1;
            }
            writeln!(
                stdout,
                "wrote {written} concept vectors to {}",
                out.display()
            )
            .map_err(io_err)?;
        }
        Command::Matrix {
            vectors: dir,
            out,
            registry,
            hist,
        } => {
            let ids = match registry {
                Some(p) => Registry::load(&p)?.concept_ids(),
                None => vectors::list_concept_vectors(&dir)?,
            };
            let cvs = import_vectors(&dir, &ids)?;
            let m = similarity::pairwise_matrix(&cvs)?;
            report::export_heatmap(&m, &out)?;
            histogram_if_requested(&similarity::off_diagonal_values(&m), &hist)?;
            writeln!(
                stdout,
                "wrote {}x{} matrix to {}",
                m.len(),
                m.len(),
                out.display()
            )
            .map_err(io_err)?;
        }
        Command::Threshold {
            matrix,
            threshold,
            out,
            hist,
        } => {
            let m = report::import_matrix_csv(&matrix)?;
            let values = similarity::off_diagonal_values(&m);
            let t = threshold.export(&values)?;
            histogram_if_requested(&values, &hist)?;
            if let Some(p) = out {
                report::export_threshold(&t, &p)?;
            }
            write!(stdout, "{}", report::threshold_json(&t)).map_err(io_err)?;
        }
        Command::Align {
            vectors: dir,
            sims_file,
            anchor,
            threshold,
            models,
            out,
            radar,
        } => {
            let models = load_models(models.as_deref())?;
            let threshold = read_threshold(&threshold)?;
            let report = match (sims_file, dir) {
                (Some(sims), _) => {
                    alignment::report_from_sims(&anchor, &read_sims(&sims)?, &models, threshold)?
                }
                (None, Some(dir)) => {
                    let mut ids: Vec<String> =
                        models.iter().flat_map(|m| m.members.clone()).collect();
                    ids.sort();
                    ids.dedup();
                    ids.retain(|id| *id != anchor);
                    let anchor_cv = vectors::import_concept_vector(&dir, &anchor)?;
                    let cvs = import_vectors(&dir, &ids)?;
                    alignment::build_report(&anchor_cv, &cvs, &models, threshold)?
                }
                (None, None) => unreachable!("clap requires --vectors or --sims-file"),
            };
            if let Some(p) = out {
                report::export_report(&report, &p)?;
            }
            if let Some(p) = radar {
                report::export_radar(&report, &p)?;
            }
            summarize(&report, stdout).map_err(io_err)?;
        }
        Command::Report {
            vectors: dir,
            baseline,
            registry,
            data_root,
            anchor,
            models,
            threshold,
            bins,
            no_histogram,
            out,
            heatmap,
            radar,
        } => {
            let baseline_ids = match baseline {
                Some(p) => Registry::load(&p)?.concept_ids(),
                None => corpus::builtin_baseline_concepts()
                    .iter()
                    .map(corpus::ConceptSpec::concept_id)
                    .collect(),
            };
            let reg = load_registry(registry.as_deref())?;
            let models = load_models(models.as_deref())?;
            let baseline_cvs = import_vectors(&dir, &baseline_ids)?;
            if let Some(profile) = threshold.profile()? {
                baseline_cvs.iter().try_for_each(|cv| profile.check(cv))?;
            }
            let m: SimilarityMatrix = similarity::pairwise_matrix(&baseline_cvs)?;
            let values = similarity::off_diagonal_values(&m);
            let hist = if no_histogram {
                None
            } else {
                Some(similarity::histogram(&values, bins)?)
            };
            let t = threshold.export(&values)?;
            let mut member_ids: Vec<String> =
                models.iter().flat_map(|m| m.members.clone()).collect();
            member_ids.sort();
            member_ids.dedup();
            member_ids.retain(|id| *id != anchor);
            let anchor_cv = vectors::import_concept_vector(&dir, &anchor)?;
            let member_cvs = import_vectors(&dir, &member_ids)?;
            let report =
                alignment::build_report(&anchor_cv, &member_cvs, &models, t.operational())?;
            let ctx = StudyContext {
                dataset_root: data_root.as_deref(),
                registry: Some(&reg),
            };
            report::export_study(&report, &m, hist.as_ref(), &t, &ctx, &out)?;
            if let Some(p) = heatmap {
                report::export_heatmap(&m, &p)?;
            }
            if let Some(p) = radar {
                report::export_radar(&report, &p)?;
            }
            summarize(&report, stdout).map_err(io_err)?;
        }
    }
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Run the CLI with explicit output streams; returns the process exit code.
pub fn run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(stderr, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let mut buf = Vec::new();
    let result = thread_pool().and_then(|pool| pool.install(|| execute(cli.command, &mut buf)));
    let _ = stdout.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
