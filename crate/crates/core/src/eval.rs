//! Angular-error statistics, benchmark protocols and report files.
//!
//! Conventions: quartiles use linear interpolation between order statistics
//! (type 7); the best and worst 25% are the means of the ⌈n/4⌉ smallest and
//! largest errors. Report schemas are in `docs/reports.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{estimate_baseline_masked, BaselineConfig};
use crate::color::{angular_error, Illuminant, LinearImage};
use crate::dataset::{dilate_bbox, load_image_linear, DatasetManifest, ManifestEntry, DEFAULT_MASK_MARGIN};
use crate::engine::{estimate_single, EstimateConfig, SweepPoint};
use crate::error::{invalid, Error, Result};
use crate::protocol::InpaintBackend;

pub const QUANTILE_METHOD: &str = "type7_linear";
pub const TAIL_METHOD: &str = "mean_of_ceil_n_over_4";
pub const REPORT_VERSION: u32 = 1;

/// Share of missing images above which a run is aborted.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub best25_mean: f64,
    pub worst25_mean: f64,
}

/// Type-7 quantile of ascending `sorted`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_stats(errors: &[f64]) -> Result<AngularStats> {
    if errors.is_empty() {
        return Err(invalid("cannot summarize an empty error list"));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(invalid("angular errors must be finite and non-negative"));
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let q1 = quantile_type7(&s, 0.25);
    let median = quantile_type7(&s, 0.5);
    let q3 = quantile_type7(&s, 0.75);
    let k = n.div_ceil(4);
    Ok(AngularStats {
        n,
        mean: s.iter().sum::<f64>() / n as f64,
        median,
        trimean: (q1 + 2.0 * median + q3) / 4.0,
        best25_mean: s[..k].iter().sum::<f64>() / k as f64,
        worst25_mean: s[n - k..].iter().sum::<f64>() / k as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// Train on one manifest, test on another.
    CrossDataset,
    /// One round per camera, testing on that camera's images.
    LeaveOneOutCamera,
    /// Seeded shuffle into three disjoint folds.
    ThreeFold,
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::CrossDataset => "cross_dataset",
            ProtocolKind::LeaveOneOutCamera => "leave_one_out_camera",
            ProtocolKind::ThreeFold => "three_fold",
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" | "cross_dataset" | "cross-dataset" => Ok(ProtocolKind::CrossDataset),
            "loo" | "leave_one_out_camera" | "leave-one-out-camera" => Ok(ProtocolKind::LeaveOneOutCamera),
            "3fold" | "three_fold" | "three-fold" => Ok(ProtocolKind::ThreeFold),
            _ => Err(invalid(format!("unknown protocol `{s}` (cross, loo or 3fold)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    #[serde(default)]
    pub seed: u64,
    /// Training manifest for the cross-dataset protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: PathBuf,
}

/// One train/test round. Ids are image ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Splits `n` sorted ids into three near-equal folds after a seeded shuffle.
pub fn three_fold_splits(ids: &[String], seed: u64) -> Vec<Split> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let n = sorted.len();
    let bounds: Vec<usize> = (0..=3).map(|k| k * n / 3).collect();
    (0..3)
        .map(|k| {
            let mut test = sorted[bounds[k]..bounds[k + 1]].to_vec();
            let mut train: Vec<String> = sorted[..bounds[k]]
                .iter()
                .chain(&sorted[bounds[k + 1]..])
                .cloned()
                .collect();
            test.sort();
            train.sort();
            Split {
                name: format!("fold{}", k + 1),
                train,
                test,
            }
        })
        .collect()
}

/// One round per camera (cameras in sorted order).
pub fn leave_one_out_splits(items: &[(String, String)]) -> Vec<Split> {
    let mut by_cam: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (id, cam) in items {
        by_cam.entry(cam).or_default().push(id.clone());
    }
    by_cam
        .iter()
        .map(|(cam, ids)| {
            let mut test = ids.clone();
            test.sort();
            let mut train: Vec<String> = items
                .iter()
                .filter(|(_, c)| c != cam)
                .map(|(id, _)| id.clone())
                .collect();
            train.sort();
            Split {
                name: format!("camera={cam}"),
                train,
                test,
            }
        })
        .collect()
}

pub fn make_splits(kind: ProtocolKind, seed: u64, train: Option<&DatasetManifest>, test: &DatasetManifest) -> Vec<Split> {
    let ids: Vec<String> = test.entries.iter().map(|e| e.image_id()).collect();
    match kind {
        ProtocolKind::CrossDataset => {
            let mut train_ids: Vec<String> = train
                .map(|m| m.entries.iter().map(|e| e.image_id()).collect())
                .unwrap_or_default();
            train_ids.sort();
            let mut test_ids = ids;
            test_ids.sort();
            vec![Split {
                name: format!(
                    "{}->{}",
                    train.map(|m| m.name.as_str()).unwrap_or("none"),
                    test.name
                ),
                train: train_ids,
                test: test_ids,
            }]
        }
        ProtocolKind::LeaveOneOutCamera => leave_one_out_splits(
            &test
                .entries
                .iter()
                .map(|e| (e.image_id(), e.camera_id.clone()))
                .collect::<Vec<_>>(),
        ),
        ProtocolKind::ThreeFold => three_fold_splits(&ids, seed),
    }
}

/// Anything mapping an image to a light estimate.
pub trait Estimator: Send + Sync {
    fn name(&self) -> String;
    fn estimate(&self, img: &LinearImage, entry: &ManifestEntry) -> Result<Illuminant>;
    /// Settings echoed into reports.
    fn config(&self) -> serde_json::Value;
}

/// A statistical baseline, with the physical checker masked out.
pub struct BaselineEstimator {
    pub cfg: BaselineConfig,
    pub mask_checker: bool,
}

impl BaselineEstimator {
    pub fn new(cfg: BaselineConfig) -> Self {
        Self { cfg, mask_checker: true }
    }
}

impl Estimator for BaselineEstimator {
    fn name(&self) -> String {
        format!("baseline:{}", self.cfg.method.name())
    }

    fn estimate(&self, img: &LinearImage, entry: &ManifestEntry) -> Result<Illuminant> {
        let mask = match (self.mask_checker, entry.bbox()) {
            (true, Some(b)) => {
                let r = dilate_bbox(b, img.width(), img.height(), DEFAULT_MASK_MARGIN)?;
                Some(crate::color::Mask::from_rect(img.width(), img.height(), r)?)
            }
            _ => None,
        };
        estimate_baseline_masked(img, &self.cfg, mask.as_ref())
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({ "baseline": self.cfg, "mask_checker": self.mask_checker })
    }
}

/// The checker pipeline against a backend.
pub struct EngineEstimator<B> {
    pub cfg: EstimateConfig,
    pub backend: B,
}

impl<B: InpaintBackend> Estimator for EngineEstimator<B> {
    fn name(&self) -> String {
        format!("engine:{}", self.backend.name())
    }

    fn estimate(&self, img: &LinearImage, entry: &ManifestEntry) -> Result<Illuminant> {
        estimate_single(img, &self.cfg, entry.bbox(), &self.backend).map(|e| e.illuminant)
    }

    fn config(&self) -> serde_json::Value {
        serde_json::json!({ "engine": self.cfg, "backend": self.backend.name() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub camera: String,
    pub gt_rgb: [f64; 3],
    pub est_rgb: [f64; 3],
    pub error_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub stats: Option<AngularStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolResult {
    pub kind: ProtocolKind,
    pub seed: u64,
    pub estimator: String,
    /// Sorted by image id.
    pub rows: Vec<ImageResult>,
    pub stats: AngularStats,
    pub splits: Vec<SplitResult>,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub record_timings: bool,
}


fn evaluate_entry(
    est: &dyn Estimator,
    manifest: &DatasetManifest,
    e: &ManifestEntry,
    timings: bool,
) -> Result<ImageResult> {
    let id = e.image_id();
    let t = Instant::now();
    let img = load_image_linear(manifest, e).map_err(|err| err.context(format!("image {id}")))?;
    let illum = est
        .estimate(&img, e)
        .map_err(|err| err.context(format!("image {id}")))?;
    let elapsed = t.elapsed().as_secs_f64() * 1e3;
    Ok(ImageResult {
        image_id: id,
        camera: e.camera_id.clone(),
        gt_rgb: e.gt()?.rgb(),
        est_rgb: illum.rgb(),
        error_deg: angular_error(illum.rgb(), e.gt_illuminant)?,
        elapsed_ms: timings.then_some(elapsed),
    })
}

/// Runs a protocol: every test image is estimated once, errors are
/// aggregated overall and per split.
pub fn run_protocol(
    kind: ProtocolKind,
    seed: u64,
    est: &dyn Estimator,
    train: Option<&DatasetManifest>,
    test: &DatasetManifest,
    opts: RunOptions,
) -> Result<ProtocolResult> {
    if test.entries.is_empty() {
        return Err(Error::Dataset(format!("manifest `{}` has no entries", test.name)));
    }
    let mut present = Vec::new();
    let mut missing = Vec::new();
    for e in test.sorted_entries() {
        if test.image_path(e).is_file() {
            present.push(e);
        } else {
            warn!("missing image {} ({})", e.image_id(), test.image_path(e).display());
            missing.push(e.image_id());
        }
    }
    let frac = missing.len() as f64 / test.entries.len() as f64;
    if frac > MAX_MISSING_FRACTION {
        return Err(Error::Dataset(format!(
            "{} of {} images are missing ({:.1}% > {:.0}%): {}",
            missing.len(),
            test.entries.len(),
            100.0 * frac,
            100.0 * MAX_MISSING_FRACTION,
            missing.join(", ")
        )));
    }

    let work = || -> Result<Vec<ImageResult>> {
        present
            .par_iter()
            .map(|e| evaluate_entry(est, test, e, opts.record_timings))
            .collect()
    };
    let rows = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    if rows.is_empty() {
        return Err(Error::Dataset("no images could be evaluated".into()));
    }
    let stats = compute_stats(&rows.iter().map(|r| r.error_deg).collect::<Vec<_>>())?;
    let by_id: BTreeMap<&str, f64> = rows.iter().map(|r| (r.image_id.as_str(), r.error_deg)).collect();
    let splits = make_splits(kind, seed, train, test)
        .into_iter()
        .map(|s| {
            let errs: Vec<f64> = s.test.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
            Ok(SplitResult {
                name: s.name,
                n_train: s.train.len(),
                n_test: errs.len(),
                stats: if errs.is_empty() { None } else { Some(compute_stats(&errs)?) },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult {
        kind,
        seed,
        estimator: est.name(),
        rows,
        stats,
        splits,
        missing,
    })
}

/// Git-style blob hash: SHA-256 of `"blob <len>\0" + content`.
pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the compact JSON form (object keys sorted).
pub fn config_hash(config: &serde_json::Value) -> String {
    hex(&Sha256::digest(serde_json::to_vec(config).expect("json")))
}

/// Content hash over the manifest and every image it lists, in id order.
pub fn inputs_hash(manifests: &[&DatasetManifest]) -> Result<String> {
    let mut h = Sha256::new();
    for m in manifests {
        h.update(git_blob_sha256(m.to_json().as_bytes()));
        for e in m.sorted_entries() {
            let path = m.image_path(e);
            if let Ok(bytes) = std::fs::read(&path) {
                h.update(e.image_id().as_bytes());
                h.update(git_blob_sha256(&bytes));
            }
        }
    }
    Ok(hex(&h.finalize()))
}

fn rgb_field(v: [f64; 3]) -> String {
    format!("{:.9} {:.9} {:.9}", v[0], v[1], v[2])
}

/// CSV text whose first line is a `#` comment carrying the config hash.
fn csv_with_hash(config_hash: &str, header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(format!("# config_hash={config_hash}\n").into_bytes());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Per-image results, sorted by image id.
pub fn per_image_csv(rows: &[ImageResult], config_hash: &str) -> String {
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.image_id.clone(),
                r.camera.clone(),
                rgb_field(r.gt_rgb),
                rgb_field(r.est_rgb),
                format!("{:.9}", r.error_deg),
                r.elapsed_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
            ]
        })
        .collect();
    csv_with_hash(
        config_hash,
        &["image_id", "camera", "gt_rgb", "est_rgb", "error_deg", "elapsed_ms"],
        body,
    )
}

pub fn stats_csv(result: &ProtocolResult, config_hash: &str) -> String {
    let line = |scope: &str, st: &AngularStats| {
        let mut v = vec![scope.to_owned(), st.n.to_string()];
        v.extend(
            [st.mean, st.median, st.trimean, st.best25_mean, st.worst25_mean].map(|x| format!("{x:.6}")),
        );
        v
    };
    let mut body = vec![line("all", &result.stats)];
    for sp in &result.splits {
        if let Some(st) = &sp.stats {
            body.push(line(&sp.name, st));
        }
    }
    csv_with_hash(
        config_hash,
        &["scope", "n", "mean", "median", "trimean", "best25_mean", "worst25_mean"],
        body,
    )
}

/// Placement-sweep scatter data: estimated and true rg-chromaticity per
/// checker position.
pub fn sweep_scatter_csv(points: &[SweepPoint], gt: Option<Illuminant>, config_hash: &str) -> String {
    let body = points
        .iter()
        .map(|p| {
            let (er, eg) = p.illuminant.rg_chromaticity();
            let (gr, gg, err) = match gt {
                Some(g) => {
                    let (r, gg) = g.rg_chromaticity();
                    (
                        format!("{r:.9}"),
                        format!("{gg:.9}"),
                        format!("{:.9}", p.illuminant.angle_to(&g)),
                    )
                }
                None => Default::default(),
            };
            vec![
                p.row.to_string(),
                p.col.to_string(),
                format!("{:.1}", p.placement.center.0),
                format!("{:.1}", p.placement.center.1),
                p.placement.checker_width.to_string(),
                format!("{er:.9}"),
                format!("{eg:.9}"),
                gr,
                gg,
                err,
            ]
        })
        .collect();
    csv_with_hash(
        config_hash,
        &[
            "row", "col", "center_x", "center_y", "checker_width", "est_r", "est_g", "gt_r", "gt_g", "error_deg",
        ],
        body,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub quantile: String,
    pub tails: String,
    pub angular_error: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            quantile: QUANTILE_METHOD.to_owned(),
            tails: TAIL_METHOD.to_owned(),
            angular_error: "atan2(|a x b|, a . b), degrees".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: u32,
    pub protocol: ProtocolKind,
    pub seed: u64,
    pub estimator: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs_hash: String,
    pub test_manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<String>,
    pub stats: AngularStats,
    pub splits: Vec<SplitResult>,
    pub missing: Vec<String>,
    pub conventions: Conventions,
}

impl Report {
    pub fn new(
        result: &ProtocolResult,
        config: serde_json::Value,
        train: Option<&DatasetManifest>,
        test: &DatasetManifest,
    ) -> Result<Self> {
        let mut manifests = vec![test];
        manifests.extend(train);
        Ok(Self {
            report_version: REPORT_VERSION,
            protocol: result.kind,
            seed: result.seed,
            estimator: result.estimator.clone(),
            config_hash: config_hash(&config),
            config,
            inputs_hash: inputs_hash(&manifests)?,
            test_manifest: test.name.clone(),
            train_manifest: train.map(|m| m.name.clone()),
            stats: result.stats,
            splits: result.splits.clone(),
            missing: result.missing.clone(),
            conventions: Conventions::default(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub report_json: PathBuf,
    pub per_image_csv: PathBuf,
    pub stats_csv: PathBuf,
}

/// Writes `report.json`, `per_image.csv` and `stats.csv` into `dir`.
pub fn emit_report(result: &ProtocolResult, report: &Report, dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ReportFiles {
        report_json: dir.join("report.json"),
        per_image_csv: dir.join("per_image.csv"),
        stats_csv: dir.join("stats.csv"),
    };
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| Error::io(p, e));
    write(&files.report_json, report.to_json())?;
    write(&files.per_image_csv, per_image_csv(&result.rows, &report.config_hash))?;
    write(&files.stats_csv, stats_csv(result, &report.config_hash))?;
    Ok(files)
}
