//! `cperf`: compare two labeled perception datasets by contextualized
//! performance, validate manifests, and generate synthetic test datasets.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data errors,
//! 4 insufficient content overlap (no batches formed).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use cperf_core::cperf::Estimator;
use cperf_core::dataset::{load_dataset, load_manifest, validate_pairing, Dataset, Mode};
use cperf_core::error::Error as CoreError;
use cperf_core::metrics::MetricKind;
use cperf_core::report::{emit_batch_thumbnails, emit_report, parse_formats, ReportFormat};
use cperf_core::run::{run_comparison, BootstrapSettings, ComparisonConfig, Preset};
use cperf_core::similarity::ReferenceSide;
use cperf_core::synth::{generate_synthetic, SynthPattern, SynthSpec};

/// Environment variable setting the default worker count; the --jobs flag
/// overrides it.
const JOBS_ENV: &str = "CPERF_JOBS";

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NO_BATCHES: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cperf",
    version,
    about = "Contextualized performance comparison for labeled perception datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare two datasets and write reports.
    Run(Box<RunArgs>),
    /// Load one manifest and check its invariants.
    Validate(ValidateArgs),
    /// Generate a synthetic dataset tree.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Manifest of dataset A (the reference side by default).
    #[arg(long)]
    manifest_a: Option<PathBuf>,
    /// Manifest of dataset B.
    #[arg(long)]
    manifest_b: Option<PathBuf>,
    /// JSON config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter preset: city128, city256, or cones.
    #[arg(long)]
    preset: Option<Preset>,
    /// Expected dataset mode; the run aborts if the manifests disagree.
    #[arg(long)]
    mode: Option<Mode>,
    /// Square patch side length in pixels.
    #[arg(long)]
    patch_size: Option<usize>,
    /// Random patches sampled per image (segmentation mode).
    #[arg(long)]
    patches_per_image: Option<usize>,
    /// Label similarity threshold in (0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Minimum members per side for a batch to count.
    #[arg(long)]
    min_batch: Option<usize>,
    /// Detection window size as a multiple of the object extent.
    #[arg(long)]
    anchor_scale: Option<f64>,
    /// pixel_accuracy, mean_iou, detection_hit, or detection_iou.
    #[arg(long)]
    metric: Option<MetricKind>,
    /// mean_diff or wasserstein.
    #[arg(long)]
    estimator: Option<Estimator>,
    /// Which pool provides reference patches: a, b, or both.
    #[arg(long)]
    reference_side: Option<ReferenceSide>,
    /// Weigh batches by member count instead of equally.
    #[arg(long)]
    weight_by_size: bool,
    /// Seed for patch placement and bootstrap resampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the CPERF_JOBS environment variable.
    #[arg(long)]
    jobs: Option<usize>,
    /// Bootstrap resample count; enables the confidence interval.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Bootstrap confidence level.
    #[arg(long)]
    level: Option<f64>,
    /// Output directory for reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated report formats (json,csv,svg).
    #[arg(long)]
    emit: Option<String>,
    /// Contact sheets for up to this many batches (needs image paths in
    /// the manifests).
    #[arg(long)]
    thumbnails: Option<usize>,
}

/// JSON config file mirroring the run flags; any subset may be present.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest_a: Option<PathBuf>,
    manifest_b: Option<PathBuf>,
    preset: Option<Preset>,
    mode: Option<Mode>,
    patch_size: Option<usize>,
    patches_per_image: Option<usize>,
    threshold: Option<f64>,
    min_batch: Option<usize>,
    anchor_scale: Option<f64>,
    metric: Option<MetricKind>,
    estimator: Option<Estimator>,
    reference_side: Option<ReferenceSide>,
    weight_by_size: Option<bool>,
    seed: Option<u64>,
    jobs: Option<usize>,
    bootstrap: Option<usize>,
    level: Option<f64>,
    out: Option<PathBuf>,
    emit: Option<String>,
    thumbnails: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    images: usize,
    /// Square image side in pixels.
    #[arg(long)]
    size: usize,
    #[arg(long)]
    classes: u16,
    /// blocks, stripes, or scattered_boxes.
    #[arg(long)]
    pattern: SynthPattern,
    /// Fraction of predictions perturbed, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    corrupt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(*args),
        Command::Validate(args) => cmd_validate(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            if let Some(hint) = failure.hint {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(failure.code)
        }
    }
}

struct Failure {
    code: u8,
    message: String,
    hint: Option<String>,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
            hint: None,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidSpec(_) | CoreError::Config(_) => EXIT_CONFIG,
            CoreError::NoBatches | CoreError::TooFewBatches(_) => EXIT_NO_BATCHES,
            _ => EXIT_DATA,
        };
        let hint = match &e {
            CoreError::NoBatches => Some(
                "the datasets share too little content at this threshold; lower --threshold, \
                 raise --patches-per-image, or reduce --min-batch"
                    .to_string(),
            ),
            _ => None,
        };
        Failure {
            code,
            message: e.to_string(),
            hint,
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    // precedence: flag, then config file, then default
    let manifest_a = args
        .manifest_a
        .or(file.manifest_a)
        .ok_or_else(|| Failure::config("missing --manifest-a (flag or config file)"))?;
    let manifest_b = args
        .manifest_b
        .or(file.manifest_b)
        .ok_or_else(|| Failure::config("missing --manifest-b (flag or config file)"))?;
    let out_dir = args
        .out
        .or(file.out)
        .ok_or_else(|| Failure::config("missing --out (flag or config file)"))?;

    let jobs = resolve_jobs(args.jobs.or(file.jobs))?;
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot size the worker pool: {e}")))?;
    }

    let mut config = ComparisonConfig::default();
    if let Some(preset) = args.preset.or(file.preset) {
        preset.apply(&mut config.spec);
    }
    if let Some(v) = args.patch_size.or(file.patch_size) {
        config.spec.patch_size = v;
    }
    if let Some(v) = args.patches_per_image.or(file.patches_per_image) {
        config.spec.patches_per_image = v;
    }
    if let Some(v) = args.threshold.or(file.threshold) {
        config.spec.threshold = v;
    }
    if let Some(v) = args.min_batch.or(file.min_batch) {
        config.spec.min_batch_per_side = v;
    }
    if let Some(v) = args.anchor_scale.or(file.anchor_scale) {
        config.spec.anchor_scale = v;
    }
    if let Some(v) = args.seed.or(file.seed) {
        config.spec.seed = v;
    }
    config.metric = args.metric.or(file.metric);
    if let Some(v) = args.estimator.or(file.estimator) {
        config.estimator = v;
    }
    if let Some(v) = args.reference_side.or(file.reference_side) {
        config.reference_side = v;
    }
    config.weight_by_size = args.weight_by_size || file.weight_by_size.unwrap_or(false);
    let resamples = args.bootstrap.or(file.bootstrap);
    let level = args.level.or(file.level);
    if let Some(resamples) = resamples {
        config.bootstrap = Some(BootstrapSettings {
            resamples,
            level: level.unwrap_or(BootstrapSettings::default().level),
        });
    } else if level.is_some() {
        return Err(Failure::config("--level requires --bootstrap"));
    }

    let formats = match args.emit.or(file.emit) {
        Some(list) => parse_formats(&list).map_err(Failure::config)?,
        None => vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg],
    };
    let thumbnails = args.thumbnails.or(file.thumbnails).unwrap_or(0);

    let started = Instant::now();
    let (dataset_a, _) = load_described(&manifest_a)?;
    let (dataset_b, _) = load_described(&manifest_b)?;
    if let Some(expected) = args.mode.or(file.mode) {
        if dataset_a.mode() != expected {
            return Err(Failure::config(format!(
                "datasets are {} but --mode asked for {}",
                dataset_a.mode(),
                expected
            )));
        }
    }
    validate_pairing(&dataset_a, &dataset_b).map_err(Failure::from)?;

    let outcome = run_comparison(&dataset_a, &dataset_b, &config).map_err(Failure::from)?;
    let mut written = emit_report(&outcome, &out_dir, &formats).map_err(Failure::from)?;
    if thumbnails > 0 {
        let sheets = emit_batch_thumbnails(
            &dataset_a,
            &dataset_b,
            &outcome,
            &config.spec,
            &out_dir,
            thumbnails,
            8,
        )
        .map_err(Failure::from)?;
        written.extend(sheets);
    }
    write_run_meta(
        &out_dir,
        &manifest_a,
        &manifest_b,
        jobs,
        started.elapsed().as_millis(),
        &written,
    )?;

    let result = &outcome.result;
    println!("cperf difference: {}", result.cperf_difference);
    println!(
        "batches: {} formed, {} discarded",
        result.batches_formed, result.batches_discarded
    );
    if let Some(ci) = &result.bootstrap_ci {
        println!(
            "{:.0}% bootstrap interval: [{}, {}]",
            ci.level * 100.0,
            ci.low,
            ci.high
        );
    }
    for (class, cp) in &result.per_class {
        let name = outcome
            .stats
            .class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| format!("class {class}"));
        println!(
            "  {name}: {} over {} batches",
            cp.cperf_difference, cp.batches
        );
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Worker count: the flag wins, then the environment variable, then the
/// library default.
fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(JOBS_ENV) {
        Ok(text) => {
            let n: usize = text.parse().map_err(|_| {
                Failure::config(format!(
                    "{JOBS_ENV} must be a positive integer, got {text:?}"
                ))
            })?;
            if n == 0 {
                return Err(Failure::config(format!("{JOBS_ENV} must be at least 1")));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn load_described(path: &Path) -> Result<(Dataset, cperf_core::dataset::LoadReport), Failure> {
    let description = load_manifest(path).map_err(Failure::from)?;
    load_dataset(&description).map_err(Failure::from)
}

/// Volatile sidecar: timing and environment, kept out of the payload files
/// so those stay byte-deterministic.
fn write_run_meta(
    out_dir: &Path,
    manifest_a: &Path,
    manifest_b: &Path,
    jobs: Option<usize>,
    elapsed_ms: u128,
    written: &[PathBuf],
) -> Result<(), Failure> {
    let meta = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "manifest_a": manifest_a.display().to_string(),
        "manifest_b": manifest_b.display().to_string(),
        "jobs": jobs,
        "elapsed_ms": elapsed_ms as u64,
        "payload_files": written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let path = out_dir.join("run_meta.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&meta).expect("meta serializes"),
    )
    .map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("cannot write {}: {e}", path.display()),
        hint: None,
    })?;
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let (dataset, report) = load_described(&args.manifest)?;
    println!("dataset: {}", dataset.name);
    println!("mode: {}", dataset.mode());
    println!("samples: {}", dataset.samples.len());
    println!("classes: {}", dataset.legend.num_classes());
    if report.unmapped_pixels > 0 {
        println!(
            "unmapped pixels treated as ignore: {} across {} images",
            report.unmapped_pixels,
            report.unmapped_by_image.len()
        );
    }
    println!("ok");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        images: args.images,
        size: args.size,
        classes: args.classes,
        pattern: args.pattern,
        corrupt: args.corrupt,
        seed: args.seed,
    };
    let (dataset, manifest_path) = generate_synthetic(&spec, &args.out).map_err(Failure::from)?;
    println!("dataset: {}", dataset.name);
    println!("samples: {}", dataset.samples.len());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}
