//! The `tpsu` subcommands.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use tps_undistort::formats::{load_control_points, load_grid, save_control_points, save_grid};
use tps_undistort::losses::{residual_stats, LossComponents, ResidualReport};
use tps_undistort::solver::{undistort_solve, SolverConfig, UndistortInputs};
use tps_undistort::synth::{apply_distortion, calibrate_sigma, sample_distortion, DistortionSpec};
use tps_undistort::tps::TARGET_GRID_SIDE;
use tps_undistort::{ControlPointSet, Error as CoreError, SamplingGrid};

use crate::io::{read_image, read_labels, write_image, write_labels};
use crate::manifest::{DatasetSpec, Manifest, ManifestEntry};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent arguments (exit 2).
    Usage(String),
    /// Anything that went wrong while running (exit 1).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        match err {
            CoreError::MissingInput(_) | CoreError::DimensionMismatch { .. } | CoreError::NoLossEnabled => {
                CliError::Usage(err.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub type CliResult<T> = Result<T, CliError>;

/// `*.png` files directly inside `dir`, keyed and sorted by stem.
fn png_stems(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn grid_files(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "tpsg") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

#[derive(Args, Clone, Debug)]
pub struct GenDatasetArgs {
    /// Directory of clean input PNG images.
    pub input_dir: PathBuf,
    /// Dataset output directory.
    pub output_dir: PathBuf,
    /// Directory of label PNGs matched to images by stem [default: <input_dir>/labels].
    #[arg(long)]
    pub labels_dir: Option<PathBuf>,
    /// Per-axis control-point displacement standard deviation (px).
    #[arg(long, conflicts_with = "target_mean_px", required_unless_present = "target_mean_px")]
    pub sigma: Option<f64>,
    /// Calibrate sigma so the mean per-pixel displacement matches this (px).
    #[arg(long)]
    pub target_mean_px: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on the length of each control-point offset (px).
    #[arg(long)]
    pub max_displacement: Option<f64>,
    /// Monte-Carlo draws used by --target-mean-px calibration.
    #[arg(long, default_value_t = 100)]
    pub calibration_trials: usize,
}

struct Generated {
    entry: ManifestEntry,
    count: usize,
    sum: f64,
    sum_sq: f64,
}

/// Distorts every input image and writes the dataset layout and manifest.
pub fn gen_dataset(args: &GenDatasetArgs) -> CliResult<Manifest> {
    if let Some(s) = args.sigma {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(usage(format!("--sigma must be finite and >= 0, got {s}")));
        }
    }
    if let Some(m) = args.target_mean_px {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(usage(format!("--target-mean-px must be finite and >= 0, got {m}")));
        }
    }
    let inputs = png_stems(&args.input_dir)?;
    let labels_dir = args
        .labels_dir
        .clone()
        .unwrap_or_else(|| args.input_dir.join("labels"));
    let out = &args.output_dir;
    for sub in ["images", "labels", "grids", "cps"] {
        fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.join(sub).display()))?;
    }

    let sigma = match (args.sigma, args.target_mean_px) {
        (Some(s), _) => s,
        (None, Some(target)) => {
            let dims = inputs
                .iter()
                .find_map(|(_, p)| image::image_dimensions(p).ok())
                .ok_or_else(|| anyhow!("no readable images in {}", args.input_dir.display()))?;
            calibrate_sigma(target, (dims.0 as usize, dims.1 as usize), args.calibration_trials, args.seed)?
        }
        (None, None) => return Err(usage("one of --sigma or --target-mean-px is required")),
    };

    let results: Vec<Option<Generated>> = inputs
        .par_iter()
        .enumerate()
        .map(|(index, (stem, path))| {
            match generate_one(args, sigma, index as u64, stem, path, &labels_dir) {
                Ok(g) => g,
                Err(err) => {
                    eprintln!("warning: skipping {stem}: {err:#}");
                    None
                }
            }
        })
        .collect();
    let generated: Vec<Generated> = results.into_iter().flatten().collect();
    if generated.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "no images were generated from {}",
            args.input_dir.display()
        )));
    }

    let count: usize = generated.iter().map(|g| g.count).sum();
    let sum: f64 = generated.iter().map(|g| g.sum).sum();
    let sum_sq: f64 = generated.iter().map(|g| g.sum_sq).sum();
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let manifest = Manifest {
        root: out.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        spec: DatasetSpec {
            sigma_cp: sigma,
            seed: args.seed,
            max_displacement: args.max_displacement,
            target_mean_px: args.target_mean_px,
            calibration_trials: args.target_mean_px.map(|_| args.calibration_trials),
        },
        images: generated.len(),
        pixels: count,
        mean_displacement_px: mean,
        std_displacement_px: var.sqrt(),
        entries: generated.into_iter().map(|g| g.entry).collect(),
    };
    manifest.save()?;
    Ok(manifest)
}

fn generate_one(
    args: &GenDatasetArgs,
    sigma: f64,
    index: u64,
    stem: &str,
    path: &Path,
    labels_dir: &Path,
) -> anyhow::Result<Option<Generated>> {
    let image = read_image(path)?;
    let (width, height) = image.dims();
    let label_path = labels_dir.join(format!("{stem}.png"));
    let labels = if label_path.is_file() {
        let labels = read_labels(&label_path)?;
        if labels.dims() != image.dims() {
            eprintln!(
                "warning: skipping {stem}: labels are {}x{} but the image is {width}x{height}",
                labels.width(),
                labels.height()
            );
            return Ok(None);
        }
        Some(labels)
    } else {
        None
    };
    let seed = args.seed.wrapping_add(index);
    let spec = DistortionSpec {
        max_displacement: args.max_displacement,
        ..DistortionSpec::new(sigma, seed, width, height)
    };
    let sources = sample_distortion(&spec)?;
    let distorted = apply_distortion(&image, labels.as_ref(), &sources)?;

    let out = &args.output_dir;
    let rel_image = PathBuf::from("images").join(format!("{stem}.png"));
    let rel_labels = PathBuf::from("labels").join(format!("{stem}.png"));
    let rel_grid = PathBuf::from("grids").join(format!("{stem}.tpsg"));
    let rel_cps = PathBuf::from("cps").join(format!("{stem}.txt"));
    write_image(&out.join(&rel_image), &distorted.image)?;
    if let Some(l) = &distorted.labels {
        write_labels(&out.join(&rel_labels), l)?;
    }
    save_grid(out.join(&rel_grid), &distorted.grid)?;
    save_control_points(out.join(&rel_cps), &sources, (width, height))?;

    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (i, p) in distorted.grid.coords().iter().enumerate() {
        let d = (p[0] - (i % width) as f64).hypot(p[1] - (i / width) as f64);
        sum += d;
        sum_sq += d * d;
    }
    let count = distorted.grid.len();
    Ok(Some(Generated {
        entry: ManifestEntry {
            stem: stem.to_string(),
            width,
            height,
            seed,
            image: rel_image,
            labels: distorted.labels.is_some().then_some(rel_labels),
            grid: rel_grid,
            cps: rel_cps,
            mean_displacement_px: sum / count as f64,
        },
        count,
        sum,
        sum_sq,
    }))
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// MS-SSIM reconstruction loss against --reference.
    Recon,
    /// Grid loss against --truth-grid.
    Grid,
    /// Semantic cross-entropy between warped --labels and --reference-labels.
    Sem,
}

#[derive(Args, Clone, Debug)]
pub struct UndistortArgs {
    /// Distorted input PNG.
    pub distorted: PathBuf,
    /// Undistorted output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Clean reference image (needed by the recon loss).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Ground-truth grid file (needed by the grid loss; also enables residual reporting).
    #[arg(long)]
    pub truth_grid: Option<PathBuf>,
    /// Labels of the distorted image.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Labels of the clean reference (needed by the sem loss).
    #[arg(long)]
    pub reference_labels: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "recon")]
    pub loss: Vec<LossKind>,
    #[arg(long, default_value_t = 100.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.25)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Undistorted labels [default: <out stem>.labels.png when --labels is given].
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
    /// Estimated control points [default: <out stem>.txt].
    #[arg(long)]
    pub out_cps: Option<PathBuf>,
    /// Estimated grid [default: <out stem>.tpsg].
    #[arg(long)]
    pub out_grid: Option<PathBuf>,
    /// JSON solve report [default: <out stem>.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualSummary {
    pub mean_px: f64,
    pub std_px: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub width: usize,
    pub height: usize,
    pub losses: Vec<String>,
    pub iterations: usize,
    pub warmup_iterations: usize,
    pub converged: bool,
    pub step_px: f64,
    pub loss: f64,
    pub components: LossComponents,
    pub sources: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualSummary>,
    pub loss_history: Vec<f64>,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}{suffix}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Estimates the undistorting control points for one image and writes the results.
pub fn undistort(args: &UndistortArgs) -> CliResult<SolveReport> {
    let has = |k| args.loss.contains(&k);
    if args.loss.is_empty() {
        return Err(usage("--loss needs at least one of recon, grid, sem"));
    }
    if has(LossKind::Recon) && args.reference.is_none() {
        return Err(usage("--loss recon needs --reference"));
    }
    if has(LossKind::Grid) && args.truth_grid.is_none() {
        return Err(usage("--loss grid needs --truth-grid"));
    }
    if has(LossKind::Sem) && (args.labels.is_none() || args.reference_labels.is_none()) {
        return Err(usage("--loss sem needs --labels and --reference-labels"));
    }
    if !(args.lr > 0.0) || args.iters == 0 {
        return Err(usage("--lr must be positive and --iters at least 1"));
    }

    let distorted = read_image(&args.distorted)?;
    let reference = args.reference.as_deref().map(read_image).transpose()?;
    let truth = args.truth_grid.as_deref().map(load_grid).transpose()?;
    let labels = args.labels.as_deref().map(read_labels).transpose()?;
    let reference_labels = args.reference_labels.as_deref().map(read_labels).transpose()?;

    let cfg = SolverConfig {
        max_iters: args.iters,
        learning_rate: args.lr,
        use_reconstruction: has(LossKind::Recon),
        use_grid: has(LossKind::Grid),
        use_semantic: has(LossKind::Sem),
        lambda_grid: args.lambda1,
        lambda_semantic: args.lambda2,
        ..SolverConfig::default()
    };
    let inputs = UndistortInputs {
        distorted: &distorted,
        reference: reference.as_ref(),
        truth_grid: truth.as_ref(),
        distorted_labels: labels.as_ref(),
        reference_labels: reference_labels.as_ref(),
    };
    let result = undistort_solve(inputs, &cfg)?;

    let residual = match &truth {
        Some(t) => {
            let r = residual_stats(std::slice::from_ref(&result.grid), std::slice::from_ref(t))?;
            Some(ResidualSummary {
                mean_px: r.mean_px,
                std_px: r.std_px,
            })
        }
        None => None,
    };

    write_image(&args.out, &result.image)?;
    if let Some(l) = &result.labels {
        let path = args
            .out_labels
            .clone()
            .unwrap_or_else(|| sibling(&args.out, ".labels.png"));
        write_labels(&path, l)?;
    }
    let dims = distorted.dims();
    save_control_points(
        args.out_cps.clone().unwrap_or_else(|| sibling(&args.out, ".txt")),
        &result.sources,
        dims,
    )?;
    save_grid(
        args.out_grid.clone().unwrap_or_else(|| sibling(&args.out, ".tpsg")),
        &result.grid,
    )?;

    let report = SolveReport {
        width: dims.0,
        height: dims.1,
        losses: args
            .loss
            .iter()
            .map(|k| k.to_possible_value().expect("no skipped variants").get_name().to_string())
            .collect(),
        iterations: result.iterations,
        warmup_iterations: result.warmup_iterations,
        converged: result.converged,
        step_px: cfg.step_size(dims),
        loss: result.loss,
        components: result.components,
        sources: result.sources.points().to_vec(),
        residual,
        loss_history: result.loss_history,
    };
    write_json(
        &args.report.clone().unwrap_or_else(|| sibling(&args.out, ".json")),
        &report,
    )?;
    Ok(report)
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    /// Directory of estimated `.tpsg` grids.
    pub estimated_dir: PathBuf,
    /// Directory of ground-truth `.tpsg` grids with matching stems.
    pub truth_dir: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Pooled residual distortion norms between matching grid files.
pub fn eval(args: &EvalArgs) -> CliResult<ResidualReport> {
    let estimated = grid_files(&args.estimated_dir)?;
    let truth = grid_files(&args.truth_dir)?;
    let only_est: Vec<_> = estimated.keys().filter(|k| !truth.contains_key(*k)).collect();
    let only_truth: Vec<_> = truth.keys().filter(|k| !estimated.contains_key(*k)).collect();
    if !only_est.is_empty() || !only_truth.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "unmatched grid stems: only in estimates {only_est:?}, only in truth {only_truth:?}"
        )));
    }
    if estimated.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "no .tpsg grids in {}",
            args.estimated_dir.display()
        )));
    }
    let mut est_grids = Vec::with_capacity(estimated.len());
    let mut truth_grids = Vec::with_capacity(estimated.len());
    for (stem, path) in &estimated {
        est_grids.push(load_grid(path).with_context(|| format!("loading {}", path.display()))?);
        let tp = &truth[stem];
        truth_grids.push(load_grid(tp).with_context(|| format!("loading {}", tp.display()))?);
    }
    let mut report = residual_stats(&est_grids, &truth_grids)?;
    for (row, stem) in report.per_image.iter_mut().zip(estimated.keys()) {
        row.stem = Some(stem.clone());
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Args, Clone, Debug)]
pub struct DistortArgs {
    /// Clean input PNG.
    pub image: PathBuf,
    /// Source control-point file for this image size.
    #[arg(long)]
    pub cps: PathBuf,
    /// Distorted output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Label PNG to distort alongside the image.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Distorted labels [default: <out stem>.labels.png].
    #[arg(long)]
    pub out_labels: Option<PathBuf>,
    /// Ground-truth grid [default: <out stem>.tpsg].
    #[arg(long)]
    pub out_grid: Option<PathBuf>,
}

/// Applies the distortion described by a control-point file.
pub fn distort(args: &DistortArgs) -> CliResult<SamplingGrid> {
    let image = read_image(&args.image)?;
    let (cps, dims) = load_control_points(&args.cps)?;
    if dims != image.dims() {
        return Err(usage(format!(
            "control points are for {}x{} but the image is {}x{}",
            dims.0,
            dims.1,
            image.width(),
            image.height()
        )));
    }
    let expected = TARGET_GRID_SIDE * TARGET_GRID_SIDE;
    if cps.len() != expected {
        return Err(usage(format!("expected {expected} control points, found {}", cps.len())));
    }
    let labels = args.labels.as_deref().map(read_labels).transpose()?;
    let out = apply_distortion(&image, labels.as_ref(), &cps)?;
    write_image(&args.out, &out.image)?;
    if let Some(l) = &out.labels {
        let path = args
            .out_labels
            .clone()
            .unwrap_or_else(|| sibling(&args.out, ".labels.png"));
        write_labels(&path, l)?;
    }
    save_grid(
        args.out_grid.clone().unwrap_or_else(|| sibling(&args.out, ".tpsg")),
        &out.grid,
    )?;
    Ok(out.grid)
}

/// The identity control-point set for an image, handy for scripting.
pub fn identity_cps(width: usize, height: usize) -> ControlPointSet {
    ControlPointSet::make_target_grid(width, height)
}
