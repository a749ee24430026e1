use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use checkerlight_core::augment::seeded_masked_jitter;
use checkerlight_core::baselines::BaselineMethod;
use checkerlight_core::color::{
    apply_white_balance, gamma_encode, Illuminant, LinearImage, Mask, Rect,
};
use checkerlight_core::config::RunConfig;
use checkerlight_core::dataset::{load_gt_map, load_manifest, read_rgb, save_png16, save_png8, DatasetManifest};
use checkerlight_core::engine::{
    estimate_single, estimate_spatial, map_mae, placement_sweep, sample_overlay, PlacementPolicy,
};
use checkerlight_core::eval::{
    emit_report, per_image_csv, run_protocol, sweep_scatter_csv, BaselineEstimator, EngineEstimator,
    Estimator, ProtocolKind, Report, RunOptions,
};
use checkerlight_core::protocol::mock::{MockBackend, OracleConfig, OracleSource};
use checkerlight_core::protocol::server::{serve_http, serve_stdio};
use checkerlight_core::protocol::transcript::{RecordingBackend, ReplayBackend};
use checkerlight_core::protocol::{BackendPool, Endpoint, InpaintBackend};
use checkerlight_core::pyramid::{high_freq_extract, Plane, PyramidConfig, UpsampleMode};
use checkerlight_core::tensor::GoldenTensor;
use checkerlight_core::{Error, Result};

mod exit {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const BACKEND: u8 = 3;
    pub const ESTIMATION: u8 = 4;
}

#[derive(Parser)]
#[command(name = "checkerlight", version, about = "Illuminant estimation with a virtual color checker")]
struct Cli {
    /// Config file(s), layered in order over the defaults.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the light of one image.
    Estimate(EstimateArgs),
    /// Per-pixel light map from a grid of checkers.
    Spatial(SpatialArgs),
    /// Correct an image for a known light.
    Whitebalance(WhitebalanceArgs),
    /// Run a statistical baseline over a manifest.
    Baseline(BaselineArgs),
    /// Run an evaluation protocol and write reports.
    Evaluate(EvaluateArgs),
    /// Preview masked color jitter.
    Augment(AugmentArgs),
    /// Serve the mock backend over stdio or HTTP.
    ServeMock(ServeMockArgs),
    /// Apply high-frequency extraction to a tensor file.
    Pyramid(PyramidArgs),
    /// Print the effective configuration and its hash.
    Config,
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// mock, stdio:CMD, http://HOST:PORT or http:PORT.
    #[arg(long)]
    backend: Option<String>,
    /// Mock light: r,g,b | gray-world | split:r,g,b:r,g,b[:fraction].
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    record_transcript: Option<PathBuf>,
    #[arg(long)]
    replay_transcript: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long)]
    gamma: Option<f64>,
    /// Pyramid levels requested from the backend.
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long)]
    no_laplacian: bool,
    #[arg(long)]
    model_id: Option<String>,
    /// Record wall-clock timings (makes outputs run-dependent).
    #[arg(long)]
    timings: bool,
    /// Black level in code values subtracted from the input.
    #[arg(long)]
    dark_level: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    image: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Checker at CX,CY with width W.
    #[arg(long, value_name = "CX,CY,W")]
    placement: Option<String>,
    /// Checker covering this box.
    #[arg(long, value_name = "X0,Y0,X1,Y1")]
    bbox: Option<String>,
    /// Centered checker, width as a fraction of the shorter side.
    #[arg(long)]
    fraction: Option<f64>,
    /// Ground-truth light; prints the angular error.
    #[arg(long, value_name = "R,G,B")]
    gt: Option<String>,
    /// White-balanced output PNG.
    #[arg(long)]
    wb_out: Option<PathBuf>,
    /// Diagnostics JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Directory for composited, inpainted and overlay PNGs.
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    /// Repeat over an NxM grid of placements.
    #[arg(long, value_name = "NxM")]
    sweep: Option<String>,
    #[arg(long)]
    sweep_width: Option<usize>,
    /// Scatter CSV for the sweep (stdout when absent).
    #[arg(long)]
    sweep_out: Option<PathBuf>,
}

#[derive(Args)]
struct SpatialArgs {
    image: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_name = "RxC")]
    grid: Option<String>,
    /// Per-pixel map as a tensor file.
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Chromaticity visualization PNG.
    #[arg(long)]
    viz_out: Option<PathBuf>,
    /// Per-cell estimates as JSON.
    #[arg(long)]
    cells_out: Option<PathBuf>,
    /// Ground-truth map (.gten or RGB image); prints the MAE.
    #[arg(long)]
    gt_map: Option<PathBuf>,
}

#[derive(Args)]
struct WhitebalanceArgs {
    image: PathBuf,
    #[arg(long, value_name = "R,G,B")]
    illum: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// Keep the output linear instead of gamma encoding it.
    #[arg(long)]
    linear: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Per-image CSV (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Do not mask the annotated checker.
    #[arg(long)]
    keep_checker: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// cross, loo or 3fold.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Test manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Training manifest (cross protocol).
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    /// baseline:METHOD, backend:ENDPOINT or mock.
    #[arg(long, default_value = "baseline:gray_world")]
    estimator: String,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    image: PathBuf,
    /// Jitter region.
    #[arg(long, value_name = "X0,Y0,X1,Y1")]
    mask: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Output PNG; with --count > 1, `_N` is appended to the stem.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct ServeMockArgs {
    #[arg(long, default_value = "gray-world")]
    oracle: String,
    /// stdio or http:PORT (port 0 picks a free one).
    #[arg(long, default_value = "stdio")]
    transport: String,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Args)]
struct PyramidArgs {
    /// Input tensor file.
    input: PathBuf,
    #[arg(long, default_value_t = 2)]
    levels: u32,
    #[arg(long)]
    out: PathBuf,
    /// bilinear, bilinear_align_corners or nearest.
    #[arg(long, default_value = "bilinear")]
    upsample: String,
    /// Write a seeded random input of shape CxHxW to INPUT first.
    #[arg(long, value_name = "CxHxW")]
    generate: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("{what}: expected {N} comma-separated numbers, got `{s}`")))?;
    v.try_into()
        .map_err(|_| usage(format!("{what}: expected {N} comma-separated numbers, got `{s}`")))
}

fn parse_rect(s: &str, what: &str) -> Result<Rect> {
    let [x0, y0, x1, y1] = parse_floats::<4>(s, what)?;
    if [x0, y0, x1, y1].iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
        return Err(usage(format!("{what}: coordinates must be non-negative integers")));
    }
    Ok(Rect::new(x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("grid `{s}` should look like 4x4")))?;
    let p = |t: &str| t.parse::<usize>().map_err(|_| usage(format!("bad grid `{s}`")));
    Ok((p(a)?, p(b)?))
}

fn parse_illum(s: &str, what: &str) -> Result<Illuminant> {
    let [r, g, b] = parse_floats::<3>(s, what)?;
    Illuminant::new(r, g, b).map_err(|e| usage(format!("{what}: {e}")))
}

fn parse_oracle(s: &str) -> Result<OracleSource> {
    if s == "gray-world" || s == "gray_world" {
        return Ok(OracleSource::FromSceneGrayWorld);
    }
    if let Some(rest) = s.strip_prefix("split:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(usage("split oracle: split:R,G,B:R,G,B[:FRACTION]"));
        }
        let split = match parts.get(2) {
            Some(f) => f.parse().map_err(|_| usage(format!("bad split fraction `{f}`")))?,
            None => 0.5,
        };
        return Ok(OracleSource::HorizontalSplit {
            left: parse_illum(parts[0], "oracle")?,
            right: parse_illum(parts[1], "oracle")?,
            split,
        });
    }
    Ok(OracleSource::Fixed(parse_illum(s, "oracle")?))
}

fn load_linear(path: &Path, dark_level: Option<f64>) -> Result<LinearImage> {
    let d = read_rgb(path)?;
    let mut data = d.data;
    if let Some(dl) = dark_level {
        let off = dl / ((1u32 << d.bit_depth) - 1) as f64;
        data.iter_mut().for_each(|v| *v = (*v - off).max(0.0));
    }
    LinearImage::new(d.width, d.height, data)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn apply_backend_args(cfg: &mut RunConfig, a: &BackendArgs) -> Result<()> {
    if let Some(b) = &a.backend {
        cfg.backend.endpoint = b.clone();
    }
    if let Some(o) = &a.oracle {
        let mut oc = cfg
            .backend
            .oracle
            .clone()
            .unwrap_or_else(|| OracleConfig::with_source(OracleSource::FromSceneGrayWorld));
        oc.oracle = parse_oracle(o)?;
        cfg.backend.oracle = Some(oc);
    }
    if let Some(t) = a.timeout_ms {
        cfg.backend.timeout_ms = t;
    }
    if let Some(p) = &a.record_transcript {
        cfg.backend.record_transcript = Some(p.clone());
    }
    if let Some(p) = &a.replay_transcript {
        cfg.backend.replay_transcript = Some(p.clone());
    }
    Ok(())
}

fn apply_pipeline_args(cfg: &mut RunConfig, a: &PipelineArgs) {
    if let Some(g) = a.gamma {
        cfg.estimate.gamma = g;
    }
    if let Some(l) = a.levels {
        cfg.estimate.request.pyramid_levels = l;
    }
    if a.no_laplacian {
        cfg.estimate.request.ablation.laplacian = false;
    }
    if let Some(m) = &a.model_id {
        cfg.estimate.request.model_id = m.clone();
    }
    if a.timings {
        cfg.estimate.record_timings = true;
    }
}

/// Builds the configured backend, innermost first: endpoint (or replay),
/// then pool, then recording.
fn build_backend(cfg: &RunConfig) -> Result<Arc<dyn InpaintBackend>> {
    let b = &cfg.backend;
    let base: Arc<dyn InpaintBackend> = if let Some(path) = &b.replay_transcript {
        Arc::new(ReplayBackend::open(path)?)
    } else {
        match b.endpoint.parse::<Endpoint>()? {
            Endpoint::Mock(_) => {
                let oracle = b
                    .oracle
                    .clone()
                    .unwrap_or_else(|| OracleConfig::with_source(OracleSource::FromSceneGrayWorld));
                oracle.validate()?;
                Arc::new(MockBackend::new(oracle))
            }
            ep if b.pool_size > 1 => Arc::new(BackendPool::connect(&ep, b.pool_size, b.timeout())?),
            ep => Arc::from(ep.connect(b.timeout())?),
        }
    };
    Ok(match &b.record_transcript {
        Some(path) => Arc::new(RecordingBackend::create(base, path)?),
        None => base,
    })
}

fn cmd_estimate(mut cfg: RunConfig, a: EstimateArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend)?;
    apply_pipeline_args(&mut cfg, &a.pipeline);
    let chosen = [a.placement.is_some(), a.bbox.is_some(), a.fraction.is_some()];
    if chosen.iter().filter(|c| **c).count() > 1 {
        return Err(usage("use only one of --placement, --bbox, --fraction"));
    }
    let mut bbox = None;
    if let Some(p) = &a.placement {
        let [cx, cy, w] = parse_floats::<3>(p, "--placement")?;
        cfg.estimate.placement = PlacementPolicy::Explicit {
            center_x: cx,
            center_y: cy,
            checker_width: w as usize,
        };
    }
    if let Some(b) = &a.bbox {
        bbox = Some(parse_rect(b, "--bbox")?);
        cfg.estimate.placement = PlacementPolicy::DatasetBbox;
    }
    if let Some(f) = a.fraction {
        cfg.estimate.placement = PlacementPolicy::Centered { fraction: f };
    }
    if a.debug_dir.is_some() {
        cfg.estimate.emit_debug = true;
    }
    cfg.validate()?;
    let gt = a.gt.as_deref().map(|g| parse_illum(g, "--gt")).transpose()?;
    let img = load_linear(&a.image, a.pipeline.dark_level)?;
    let backend = build_backend(&cfg)?;
    let hash = cfg.hash();

    if let Some(grid) = &a.sweep {
        let (rows, cols) = parse_grid(grid)?;
        let width = match a.sweep_width {
            Some(w) => w,
            None => {
                cfg.estimate
                    .placement
                    .resolve(img.width(), img.height(), bbox)?
                    .checker_width
            }
        };
        let points = placement_sweep(&img, &cfg.estimate, rows, cols, width, backend.as_ref())?;
        let csv = sweep_scatter_csv(&points, gt, &hash);
        match &a.sweep_out {
            Some(p) => write_text(p, &csv)?,
            None => print!("{csv}"),
        }
        let mut spread: f64 = 0.0;
        for p in &points {
            for q in &points {
                spread = spread.max(p.illuminant.angle_to(&q.illuminant));
            }
        }
        eprintln!("sweep_spread_deg {spread:.6}");
        return Ok(());
    }

    let est = estimate_single(&img, &cfg.estimate, bbox, backend.as_ref())?;
    println!("illuminant {}", est.illuminant);
    if let Some(g) = gt {
        println!("angular_error_deg {:.6}", est.illuminant.angle_to(&g));
    }
    if let Some(p) = &a.diagnostics {
        let doc = json!({
            "config_hash": hash,
            "image": a.image.display().to_string(),
            "diagnostics": est.diagnostics,
        });
        write_text(p, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
    }
    if let Some(p) = &a.wb_out {
        let wb = apply_white_balance(&img, &est.illuminant)?;
        save_png16(&gamma_encode(&wb, cfg.estimate.gamma)?, p)?;
    }
    if let (Some(dir), Some(dbg)) = (&a.debug_dir, &est.debug) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_png16(&dbg.composited, &dir.join("composited.png"))?;
        save_png16(&dbg.inpainted, &dir.join("inpainted.png"))?;
        let overlay = sample_overlay(&dbg.inpainted, &cfg.estimate.layout, &est.diagnostics.placement)?;
        save_png16(&overlay, &dir.join("samples.png"))?;
    }
    Ok(())
}

fn cmd_spatial(mut cfg: RunConfig, a: SpatialArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend)?;
    apply_pipeline_args(&mut cfg, &a.pipeline);
    if let Some(g) = &a.grid {
        let (r, c) = parse_grid(g)?;
        cfg.spatial.grid_rows = r;
        cfg.spatial.grid_cols = c;
    }
    cfg.validate()?;
    let img = load_linear(&a.image, a.pipeline.dark_level)?;
    let backend = build_backend(&cfg)?;
    let s = estimate_spatial(&img, &cfg.estimate, &cfg.spatial, backend.as_ref())?;
    let valid = s.cells.iter().filter(|c| c.illuminant.is_some()).count();
    println!("cells_valid {valid}/{}", s.cells.len());
    if let Some(p) = &a.map_out {
        s.map.to_tensor().write(p)?;
    }
    if let Some(p) = &a.viz_out {
        save_png8(&s.map.visualize(), p)?;
    }
    if let Some(p) = &a.cells_out {
        let doc = json!({ "config_hash": cfg.hash(), "cells": s.cells });
        write_text(p, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
    }
    if let Some(p) = &a.gt_map {
        let gt = load_gt_map(p)?;
        println!("map_mae_deg {:.6}", map_mae(&s.map, &gt)?);
    }
    Ok(())
}

fn cmd_whitebalance(cfg: RunConfig, a: WhitebalanceArgs) -> Result<()> {
    let illum = parse_illum(&a.illum, "--illum")?;
    let img = load_linear(&a.image, None)?;
    let wb = apply_white_balance(&img, &illum)?;
    if a.linear {
        save_png16(&wb, &a.out)
    } else {
        save_png16(&gamma_encode(&wb, a.gamma.unwrap_or(cfg.estimate.gamma))?, &a.out)
    }
}

fn baseline_from(cfg: &mut RunConfig, method: Option<&str>, p: Option<f64>, sigma: Option<f64>) -> Result<()> {
    if let Some(m) = method {
        cfg.baseline.method = m.parse::<BaselineMethod>()?;
    }
    if p.is_some() {
        cfg.baseline.minkowski_p = p;
    }
    if sigma.is_some() {
        cfg.baseline.smoothing_sigma = sigma;
    }
    Ok(())
}

fn cmd_baseline(mut cfg: RunConfig, a: BaselineArgs) -> Result<()> {
    baseline_from(&mut cfg, a.method.as_deref(), a.p, a.sigma)?;
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let mut est = BaselineEstimator::new(cfg.baseline.resolve()?);
    est.mask_checker = !a.keep_checker;
    let res = run_protocol(
        ProtocolKind::CrossDataset,
        0,
        &est,
        None,
        &manifest,
        RunOptions {
            jobs: cfg.jobs,
            record_timings: false,
        },
    )?;
    let hash = checkerlight_core::eval::config_hash(&json!({ "run": cfg.to_value(), "estimator": est.config() }));
    let csv = per_image_csv(&res.rows, &hash);
    match &a.out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    let s = res.stats;
    eprintln!(
        "{}: n={} mean={:.4} median={:.4} trimean={:.4} best25={:.4} worst25={:.4}",
        est.name(),
        s.n,
        s.mean,
        s.median,
        s.trimean,
        s.best25_mean,
        s.worst25_mean
    );
    Ok(())
}

fn build_estimator(cfg: &mut RunConfig, choice: &str) -> Result<Box<dyn Estimator>> {
    if let Some(m) = choice.strip_prefix("baseline:") {
        baseline_from(cfg, Some(m), None, None)?;
        cfg.validate()?;
        return Ok(Box::new(BaselineEstimator::new(cfg.baseline.resolve()?)));
    }
    if let Some(ep) = choice.strip_prefix("backend:") {
        cfg.backend.endpoint = ep.to_owned();
    } else if choice == "mock" {
        cfg.backend.endpoint = "mock".to_owned();
    } else {
        return Err(usage(format!(
            "estimator `{choice}` should be baseline:METHOD, backend:ENDPOINT or mock"
        )));
    }
    if cfg.estimate.placement == PlacementPolicy::default() {
        cfg.estimate.placement = PlacementPolicy::DatasetBbox;
    }
    cfg.validate()?;
    Ok(Box::new(EngineEstimator {
        cfg: cfg.estimate.clone(),
        backend: build_backend(cfg)?,
    }))
}

fn cmd_evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    apply_backend_args(&mut cfg, &a.backend)?;
    apply_pipeline_args(&mut cfg, &a.pipeline);
    if let Some(p) = &a.protocol {
        cfg.protocol.kind = p.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.protocol.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    let est = build_estimator(&mut cfg, &a.estimator)?;
    let test = load_manifest(&a.manifest)?;
    let train: Option<DatasetManifest> = a.train_manifest.as_deref().map(load_manifest).transpose()?;
    if cfg.protocol.kind == ProtocolKind::CrossDataset && train.is_none() {
        log::warn!("cross-dataset protocol without --train-manifest: the estimator is treated as pre-trained");
    }
    let res = run_protocol(
        cfg.protocol.kind,
        cfg.protocol.seed,
        est.as_ref(),
        train.as_ref(),
        &test,
        RunOptions {
            jobs: cfg.jobs,
            record_timings: cfg.estimate.record_timings,
        },
    )?;
    let config = json!({ "run": cfg.to_value(), "estimator": est.config() });
    let report = Report::new(&res, config, train.as_ref(), &test)?;
    let files = emit_report(&res, &report, &a.out)?;
    let s = res.stats;
    println!(
        "{} {}: n={} mean={:.4} median={:.4} trimean={:.4} best25={:.4} worst25={:.4}",
        cfg.protocol.kind.name(),
        res.estimator,
        s.n,
        s.mean,
        s.median,
        s.trimean,
        s.best25_mean,
        s.worst25_mean
    );
    info!("wrote {}", files.report_json.display());
    Ok(())
}

fn cmd_augment(mut cfg: RunConfig, a: AugmentArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.jitter.rng_seed = s;
    }
    cfg.validate()?;
    let img = load_linear(&a.image, None)?;
    let display = gamma_encode(&img, a.gamma.unwrap_or(cfg.estimate.gamma))?;
    let rect = parse_rect(&a.mask, "--mask")?;
    let mask = Mask::from_rect(img.width(), img.height(), rect)?;
    let mut records = Vec::new();
    for i in 0..a.count {
        let (out, factors) = seeded_masked_jitter(&display, &mask, &cfg.jitter, i)?;
        let path = if a.count == 1 {
            a.out.clone()
        } else {
            let stem = a.out.file_stem().unwrap_or_default().to_string_lossy();
            a.out.with_file_name(format!("{stem}_{i}.png"))
        };
        save_png16(&out, &path)?;
        records.push(json!({ "index": i, "path": path.display().to_string(), "factors": factors }));
    }
    let doc = json!({ "seed": cfg.jitter.rng_seed, "config_hash": cfg.hash(), "samples": records });
    println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    Ok(())
}

fn cmd_serve_mock(a: ServeMockArgs) -> Result<()> {
    let oracle = OracleConfig {
        oracle: parse_oracle(&a.oracle)?,
        structure_noise_sigma: a.noise_sigma,
        noise_seed: a.noise_seed,
        ..OracleConfig::with_source(OracleSource::FromSceneGrayWorld)
    };
    oracle.validate()?;
    let mut mock = MockBackend::new(oracle);
    mock.through_wire = false;
    if a.transport == "stdio" {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        return serve_stdio(&mock, stdin.lock(), stdout.lock());
    }
    let port = a
        .transport
        .strip_prefix("http:")
        .ok_or_else(|| usage(format!("transport `{}` should be stdio or http:PORT", a.transport)))?;
    let port: u16 = port.parse().map_err(|_| usage(format!("bad port `{port}`")))?;
    let handle = serve_http(Arc::new(mock), &format!("127.0.0.1:{port}"), a.workers)?;
    println!("listening on {}", handle.url());
    std::io::stdout().flush().ok();
    handle.join();
    Ok(())
}

fn cmd_pyramid(a: PyramidArgs) -> Result<()> {
    let mode = match a.upsample.as_str() {
        "bilinear" => UpsampleMode::Bilinear,
        "bilinear_align_corners" => UpsampleMode::BilinearAlignCorners,
        "nearest" => UpsampleMode::Nearest,
        other => return Err(usage(format!("unknown upsample mode `{other}`"))),
    };
    if let Some(shape) = &a.generate {
        let dims: Vec<usize> = shape
            .split(['x', 'X'])
            .map(|t| t.parse().map_err(|_| usage(format!("bad shape `{shape}`"))))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else {
            return Err(usage(format!("shape `{shape}` should be CxHxW")));
        };
        let plane = Plane::random(c, h, w, a.seed)?;
        GoldenTensor::new(plane, 0).write(&a.input)?;
    }
    let input = GoldenTensor::read(&a.input)?;
    let cfg = PyramidConfig {
        levels: a.levels,
        upsample: mode,
    };
    let out: Plane = high_freq_extract(&input.plane, &cfg)?;
    GoldenTensor::new(out, a.levels).write(&a.out)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidInput(_) | Error::Config(_) => exit::USAGE,
        Error::Protocol(_) | Error::Transport(_) | Error::Timeout(_) | Error::Backend { .. } => exit::BACKEND,
        Error::EstimationFailed(_) | Error::Sampling(_) => exit::ESTIMATION,
        _ => exit::DATA,
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load_layered(&cli.config)?;
    match cli.cmd {
        Cmd::Estimate(a) => cmd_estimate(cfg, a),
        Cmd::Spatial(a) => cmd_spatial(cfg, a),
        Cmd::Whitebalance(a) => cmd_whitebalance(cfg, a),
        Cmd::Baseline(a) => cmd_baseline(cfg, a),
        Cmd::Evaluate(a) => cmd_evaluate(cfg, a),
        Cmd::Augment(a) => cmd_augment(cfg, a),
        Cmd::ServeMock(a) => cmd_serve_mock(a),
        Cmd::Pyramid(a) => cmd_pyramid(a),
        Cmd::Config => {
            println!("{}", serde_json::to_string_pretty(&cfg.to_value()).expect("json"));
            eprintln!("config_hash {}", cfg.hash());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(exit::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
