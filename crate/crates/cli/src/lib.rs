//! Batch drivers behind the `nocskit` binary: dataset generation, per-instance
//! pose recovery, table evaluation and threshold sweeps.
//!
//! Every driver dispatches per-sample work to a bounded pool and aggregates in
//! sample order, so `--jobs` never changes outputs.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use nocskit::io::{
    curve_csv, evaluate, load_sample, read_json, save_sample, write_json, AnnotationRecord,
    EvalReport, Manifest, PredictionEntry, PredictionFile, SweepKind, Threshold,
    DEFAULT_THRESHOLDS, SCHEMA_VERSION,
};
use nocskit::pose::category_scale_prior;
use nocskit::synth::{generate_sample, plan, sub_seed};
use nocskit::{
    Category, GeneratorConfig, GroundTruthInstance, NocsObservation, RecoveryMethod,
    RecoveryOptions, ScalePriors, ScaleStrategy,
};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// Partial results were written but some samples or instances failed.
    pub const PARTIAL: u8 = 1;
    /// Command-line usage error (also clap's code).
    pub const USAGE: u8 = 2;
    /// Nothing usable was produced.
    pub const FATAL: u8 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "nocskit", version, about = "Category-level pose toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with exact ground truth.
    Generate(GenerateArgs),
    /// Recover metric pose and size for every annotated container instance.
    Recover(RecoverArgs),
    /// Average precision table at the standard and requested thresholds.
    Evaluate(EvaluateArgs),
    /// mAP as a function of one threshold.
    Sweep(SweepArgs),
    /// Category mean scales of a dataset, for `recover --method epnp-a`.
    Priors(PriorsArgs),
}

#[derive(Debug, Args)]
pub struct JobsArg {
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON generator configuration; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Umeyama,
    /// EPnP with category mean scales from `--priors`.
    EpnpA,
    /// EPnP with the annotated scale.
    EpnpG,
    /// EPnP with the Umeyama scale.
    EpnpU,
}

impl MethodArg {
    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Umeyama => "umeyama",
            MethodArg::EpnpA => "epnp-a",
            MethodArg::EpnpG => "epnp-g",
            MethodArg::EpnpU => "epnp-u",
        }
    }
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// JSON map from category to mean scale; required by epnp-a.
    #[arg(long, required_if_eq("method", "epnp-a"))]
    pub priors: Option<PathBuf>,
    /// Predictions file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds correspondence subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = nocskit::pose::DEFAULT_MAX_CORRESPONDENCES)]
    pub max_correspondences: usize,
    #[command(flatten)]
    pub jobs: JobsArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory holding the ground-truth annotations.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Extra columns after the six defaults, e.g. `iou:75,pose:20:15`.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<Threshold>,
    /// Skip the three default sweep curves.
    #[arg(long)]
    pub no_curves: bool,
    /// Directory for `report.json` and `report.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub axis: SweepKind,
    /// `start:stop:step` (inclusive) or a comma list, in percent, degrees or centimeters.
    #[arg(long)]
    pub grid: Option<String>,
    /// CSV file to write; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PriorsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one command and returns its exit code. Recoverable per-item failures
/// are reported on stderr and yield [`exit::PARTIAL`].
pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Recover(a) => cmd_recover(&a),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|(_, code)| code),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Priors(a) => cmd_priors(&a),
    }
}

fn pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<GeneratorConfig> {
    let config = match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display()))?,
        None => GeneratorConfig::default(),
    };
    config.validate().context("invalid generator config")?;
    Ok(config)
}

pub fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<u8> {
    let mut config = load_config(a.config.as_deref())?;
    if let Some(n) = a.samples {
        config.samples = n;
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let specs = plan(&config, a.seed)?;
    let results: Vec<_> = pool(a.jobs.jobs)?.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                generate_sample(&config, spec)
                    .and_then(|s| save_sample(&a.out, &s))
                    .map_err(|e| (spec.index, e))
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut failures = 0;
    for r in results {
        match r {
            Ok(entry) => samples.push(entry),
            Err((index, e)) => {
                eprintln!("sample {index}: {e}");
                failures += 1;
            }
        }
    }
    Manifest {
        schema_version: SCHEMA_VERSION,
        seed: a.seed,
        config,
        samples,
    }
    .save(&a.out)?;
    Ok(if failures == 0 {
        exit::OK
    } else {
        exit::PARTIAL
    })
}

/// Per-instance subsampling seed; independent of scheduling.
fn instance_seed(seed: u64, sample: usize, instance: u8) -> u64 {
    sub_seed(seed, ((sample as u64) << 8) | instance as u64)
}

fn recover_sample(
    root: &Path,
    entry: &nocskit::io::ManifestEntry,
    method: MethodArg,
    priors: Option<&ScalePriors>,
    seed: u64,
    max_correspondences: usize,
) -> nocskit::Result<Vec<PredictionEntry>> {
    let s = load_sample(root, entry)?;
    let k = s.annotation.intrinsics;
    Ok(s.annotation
        .instances
        .iter()
        .map(|inst| {
            let obs = NocsObservation {
                nocs: &s.nocs,
                mask: &s.mask,
                instance: inst.instance_id,
                category: inst.category,
                depth: Some(&s.depth),
                intrinsics: k,
            };
            let method = match method {
                MethodArg::Umeyama => RecoveryMethod::Umeyama,
                MethodArg::EpnpA => RecoveryMethod::Epnp(ScaleStrategy::AveragePrior(
                    priors.cloned().unwrap_or_default(),
                )),
                MethodArg::EpnpG => RecoveryMethod::Epnp(ScaleStrategy::GroundTruth(inst.scale)),
                MethodArg::EpnpU => RecoveryMethod::Epnp(ScaleStrategy::FromUmeyama),
            };
            let options = RecoveryOptions {
                max_correspondences,
                seed: instance_seed(seed, entry.index, inst.instance_id),
            };
            let result = nocskit::recover_pose_and_size(&obs, &method, &options);
            PredictionEntry {
                sample: entry.index,
                instance_id: inst.instance_id,
                category: inst.category,
                error: result.as_ref().err().map(ToString::to_string),
                estimate: result.ok(),
            }
        })
        .collect())
}

pub fn cmd_recover(a: &RecoverArgs) -> anyhow::Result<u8> {
    let priors: Option<ScalePriors> = match (&a.priors, a.method) {
        (Some(p), MethodArg::EpnpA) => {
            Some(read_json(p).with_context(|| format!("reading priors {}", p.display()))?)
        }
        (None, MethodArg::EpnpA) => bail!("--method epnp-a requires --priors"),
        _ => None,
    };
    if a.max_correspondences < nocskit::pose::MIN_PNP_CORRESPONDENCES {
        bail!(
            "--max-correspondences must be at least {}",
            nocskit::pose::MIN_PNP_CORRESPONDENCES
        );
    }
    let manifest = Manifest::load(&a.dataset)?;
    let per_sample: Vec<_> = pool(a.jobs.jobs)?.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|entry| {
                recover_sample(
                    &a.dataset,
                    entry,
                    a.method,
                    priors.as_ref(),
                    a.seed,
                    a.max_correspondences,
                )
                .map_err(|e| (entry.index, e))
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut sample_failures = 0;
    for r in per_sample {
        match r {
            Ok(mut e) => entries.append(&mut e),
            Err((index, e)) => {
                eprintln!("sample {index}: {e}");
                sample_failures += 1;
            }
        }
    }
    entries.sort_by_key(|e| (e.sample, e.instance_id));
    for e in &entries {
        if let Some(msg) = &e.error {
            eprintln!("sample {} instance {}: {msg}", e.sample, e.instance_id);
        }
    }
    let file = PredictionFile {
        schema_version: SCHEMA_VERSION,
        method: a.method.name().to_string(),
        entries,
    };
    write_json(&a.out, &file)?;
    Ok(if sample_failures == 0 && file.errors() == 0 {
        exit::OK
    } else {
        exit::PARTIAL
    })
}

/// Validated annotations of every sample in a dataset, in manifest order.
pub fn load_annotations(root: &Path) -> anyhow::Result<Vec<AnnotationRecord>> {
    let manifest = Manifest::load(root)?;
    manifest
        .samples
        .iter()
        .map(|entry| {
            let path = root.join(&entry.annotation);
            let record: AnnotationRecord = read_json(&path)?;
            record
                .validate()
                .with_context(|| format!("annotation {}", path.display()))?;
            if record.sample != entry.index {
                bail!(
                    "{} describes sample {}, manifest says {}",
                    path.display(),
                    record.sample,
                    entry.index
                );
            }
            Ok(record)
        })
        .collect()
}

pub fn load_ground_truth(root: &Path) -> anyhow::Result<Vec<GroundTruthInstance>> {
    let mut gts = Vec::new();
    for record in load_annotations(root)? {
        gts.extend(record.ground_truth()?);
    }
    Ok(gts)
}

fn load_pair(gt: &Path, pred: &Path) -> anyhow::Result<(Vec<GroundTruthInstance>, PredictionFile)> {
    let gts = load_ground_truth(gt)?;
    let preds = PredictionFile::load(pred)?;
    Ok((gts, preds))
}

/// Returns the report and the exit code.
pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<(EvalReport, u8)> {
    let (gts, preds) = load_pair(&a.gt, &a.pred)?;
    let dets = preds.detections(&gts)?;
    let mut thresholds = DEFAULT_THRESHOLDS.to_vec();
    for t in &a.thresholds {
        if !thresholds.contains(t) {
            thresholds.push(*t);
        }
    }
    let report = evaluate(&dets, &gts, &thresholds, preds.errors(), !a.no_curves)?;
    let csv = report.to_csv();
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report)?;
        fs::write(dir.join("report.csv"), &csv)?;
        for curve in &report.curves {
            fs::write(
                dir.join(format!("sweep_{}.csv", curve.axis)),
                curve_csv(curve),
            )?;
        }
    }
    print!("{csv}");
    Ok((report, exit::OK))
}

/// `start:stop:step` (inclusive, tolerant to rounding) or `a,b,c`.
pub fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let num = |p: &str| -> anyhow::Result<f64> {
        let v: f64 = p
            .trim()
            .parse()
            .with_context(|| format!("bad grid value {p:?}"))?;
        if !v.is_finite() {
            bail!("grid value {p:?} is not finite");
        }
        Ok(v)
    };
    let grid = match s.split(':').collect::<Vec<_>>().as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                bail!("grid {s:?} needs step > 0 and stop >= start");
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        }
        [_] => s.split(',').map(num).collect::<anyhow::Result<Vec<_>>>()?,
        _ => bail!("grid {s:?} is neither start:stop:step nor a comma list"),
    };
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        bail!("grid must be non-empty and strictly increasing");
    }
    Ok(grid)
}

pub fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<u8> {
    let (gts, preds) = load_pair(&a.gt, &a.pred)?;
    let dets = preds.detections(&gts)?;
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => a.axis.default_grid(),
    };
    let curve = a.axis.run(&dets, &gts, &grid)?;
    let csv = curve_csv(&curve);
    match &a.out {
        Some(p) => fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(exit::OK)
}

pub fn cmd_priors(a: &PriorsArgs) -> anyhow::Result<u8> {
    let mut samples: Vec<(Category, f64)> = Vec::new();
    for record in load_annotations(&a.dataset)? {
        samples.extend(record.instances.iter().map(|i| (i.category, i.scale)));
    }
    let mut present: Vec<Category> = samples.iter().map(|s| s.0).collect();
    present.sort();
    present.dedup();
    if present.is_empty() {
        bail!("dataset has no container instances");
    }
    let priors = category_scale_prior(&samples, &present)?;
    write_json(&a.out, &priors)?;
    Ok(exit::OK)
}
