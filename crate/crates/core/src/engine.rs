//! The estimation pipeline: paste a neutral checker into the display-domain
//! image, let a backend harmonize it with the scene, and read the light back
//! from the checker's gray patches. Also the spatially varying variant that
//! repeats this per grid cell and interpolates a per-pixel map.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checker::{
    composite_checker, estimate_from_patches_detailed, patch_center, sample_patches, CheckerLayout,
    CheckerPlacement, DiscardReason, PatchSample, COLS, DEFAULT_WIDTH_FRACTION, ROWS,
};
use crate::color::{angular_error, gamma_decode, gamma_encode, Illuminant, LinearImage, Rect, SrgbImage};
use crate::error::{invalid, Error, Result};
use crate::protocol::{
    locality_report, BackendInfo, BackendRequest, InpaintBackend, LocalityReport, RequestConfig,
};
use crate::pyramid::Plane;
use crate::tensor::GoldenTensor;

/// How the virtual checker is positioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlacementPolicy {
    Explicit {
        center_x: f64,
        center_y: f64,
        checker_width: usize,
    },
    /// Cover the annotated physical checker; centered when no box is known.
    DatasetBbox,
    /// `fraction × min(width, height)` wide, at the image center.
    Centered { fraction: f64 },
}

impl Default for PlacementPolicy {
    fn default() -> Self {
        PlacementPolicy::Centered {
            fraction: DEFAULT_WIDTH_FRACTION,
        }
    }
}

impl PlacementPolicy {
    pub fn resolve(&self, width: usize, height: usize, bbox: Option<Rect>) -> Result<CheckerPlacement> {
        let p = match self {
            PlacementPolicy::Explicit {
                center_x,
                center_y,
                checker_width,
            } => CheckerPlacement::new(*center_x, *center_y, *checker_width),
            PlacementPolicy::DatasetBbox => match bbox {
                Some(b) => CheckerPlacement::from_bbox(b),
                None => CheckerPlacement::centered(width, height, DEFAULT_WIDTH_FRACTION),
            },
            PlacementPolicy::Centered { fraction } => {
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(invalid(format!("checker fraction {fraction} must be in (0, 1]")));
                }
                CheckerPlacement::centered(width, height, *fraction)
            }
        };
        p.rect(width, height)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub gamma: f64,
    pub layout: CheckerLayout,
    pub placement: PlacementPolicy,
    /// Forwarded to the backend: levels, prompt, model id, ablation switches.
    pub request: RequestConfig,
    /// Keep the composited and inpainted images and ask the backend for its
    /// debug artifacts.
    pub emit_debug: bool,
    /// Wall-clock timings in diagnostics. Off by default so that diagnostics
    /// are reproducible byte for byte.
    pub record_timings: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            gamma: crate::color::DEFAULT_GAMMA,
            layout: CheckerLayout::default(),
            placement: PlacementPolicy::default(),
            request: RequestConfig::default(),
            emit_debug: false,
            record_timings: false,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid(format!("gamma {} must be positive", self.gamma)));
        }
        self.layout.validate()?;
        crate::pyramid::PyramidConfig::with_levels(self.request.pyramid_levels).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub composite_ms: f64,
    pub backend_ms: f64,
    pub readback_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub request_id: String,
    pub illuminant: Illuminant,
    pub placement: CheckerPlacement,
    pub checker_rect: Rect,
    pub samples: Vec<PatchSample>,
    pub used_patches: Vec<usize>,
    pub discarded_patches: Vec<(usize, DiscardReason)>,
    pub backend: BackendInfo,
    pub locality: LocalityReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_debug: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebugImages {
    pub composited: SrgbImage,
    pub inpainted: SrgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub illuminant: Illuminant,
    pub diagnostics: Diagnostics,
    pub debug: Option<DebugImages>,
}

/// Content-addressed id, so identical inputs give identical requests.
fn request_id(img: &SrgbImage, placement: &CheckerPlacement, cfg: &RequestConfig) -> String {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    for v in img.data() {
        h.update(v.to_le_bytes());
    }
    h.update(serde_json::to_vec(placement).expect("json"));
    h.update(serde_json::to_vec(cfg).expect("json"));
    let d = h.finalize();
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Estimates the illuminant with the checker at `placement`.
pub fn estimate_at(
    img: &LinearImage,
    cfg: &EstimateConfig,
    placement: &CheckerPlacement,
    backend: &dyn InpaintBackend,
) -> Result<Estimate> {
    cfg.validate()?;
    let t0 = Instant::now();
    let display = gamma_encode(img, cfg.gamma)?;
    let (composited, mask) = composite_checker(&display, &cfg.layout, placement)?;
    let checker_rect = placement.rect(img.width(), img.height())?;
    let composite_ms = ms_since(t0);

    let t1 = Instant::now();
    let mut req = BackendRequest::new(
        request_id(&display, placement, &cfg.request),
        composited,
        mask,
        cfg.request.clone(),
    )?;
    req.debug_artifacts = cfg.emit_debug;
    let resp = backend
        .inpaint(&req)
        .map_err(|e| e.context(format!("backend {} on request {}", backend.name(), req.request_id)))?;
    let backend_ms = ms_since(t1);
    let locality = locality_report(&req, &resp);
    if locality.violated {
        warn!(
            "backend {} changed pixels outside the mask (mean abs diff {:.5})",
            backend.name(),
            locality.mean_abs_diff
        );
    }

    let t2 = Instant::now();
    let linear = gamma_decode(&resp.image, cfg.gamma)?;
    let samples = sample_patches(&linear, &cfg.layout, placement)?;
    let detail = estimate_from_patches_detailed(&samples, &cfg.layout)?;
    let readback_ms = ms_since(t2);

    let timings = cfg.record_timings.then(|| Timings {
        composite_ms,
        backend_ms,
        readback_ms,
        total_ms: ms_since(t0),
    });
    let debug = cfg.emit_debug.then(|| DebugImages {
        composited: req.image.clone(),
        inpainted: resp.image.clone(),
    });
    Ok(Estimate {
        illuminant: detail.illuminant,
        diagnostics: Diagnostics {
            request_id: req.request_id,
            illuminant: detail.illuminant,
            placement: *placement,
            checker_rect,
            samples,
            used_patches: detail.used,
            discarded_patches: detail.discarded,
            backend: resp.backend_info,
            locality,
            timings,
            backend_debug: resp.debug_artifacts,
        },
        debug,
    })
}

/// Estimates the illuminant with the checker placed per `cfg.placement`;
/// `bbox` is the annotated physical checker, if any.
pub fn estimate_single(
    img: &LinearImage,
    cfg: &EstimateConfig,
    bbox: Option<Rect>,
    backend: &dyn InpaintBackend,
) -> Result<Estimate> {
    let placement = cfg.placement.resolve(img.width(), img.height(), bbox)?;
    estimate_at(img, cfg, &placement, backend)
}

/// Draws the sampling window of every patch in magenta, for inspection.
pub fn sample_overlay(img: &SrgbImage, layout: &CheckerLayout, placement: &CheckerPlacement) -> Result<SrgbImage> {
    let rect = placement.rect(img.width(), img.height())?;
    let (cw, ch) = (
        rect.width() as f64 / COLS as f64,
        rect.height() as f64 / ROWS as f64,
    );
    let (hw, hh) = (cw * layout.sample_margin / 2.0, ch * layout.sample_margin / 2.0);
    let mut out = img.clone();
    for idx in 0..ROWS * COLS {
        let (cx, cy) = patch_center(&rect, idx);
        let x0 = (cx - hw).floor().max(0.0) as usize;
        let x1 = ((cx + hw).ceil() as usize).min(img.width() - 1);
        let y0 = (cy - hh).floor().max(0.0) as usize;
        let y1 = ((cy + hh).ceil() as usize).min(img.height() - 1);
        for x in x0..=x1 {
            out.put(x, y0, [1.0, 0.0, 1.0]);
            out.put(x, y1, [1.0, 0.0, 1.0]);
        }
        for y in y0..=y1 {
            out.put(x0, y, [1.0, 0.0, 1.0]);
            out.put(x1, y, [1.0, 0.0, 1.0]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub row: usize,
    pub col: usize,
    pub placement: CheckerPlacement,
    pub illuminant: Illuminant,
}

/// Placements on a `rows × cols` grid spanning the image, each fully inside.
pub fn sweep_placements(
    width: usize,
    height: usize,
    rows: usize,
    cols: usize,
    checker_width: usize,
) -> Result<Vec<(usize, usize, CheckerPlacement)>> {
    if rows == 0 || cols == 0 {
        return Err(invalid("sweep grid must be at least 1x1"));
    }
    let probe = CheckerPlacement::new(0.0, 0.0, checker_width);
    let (cw, ch) = (checker_width as f64, probe.checker_height() as f64);
    if cw > width as f64 || ch > height as f64 {
        return Err(Error::Placement(format!(
            "checker {checker_width} px wide does not fit a {width}x{height} image"
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let cx = cw / 2.0 + (width as f64 - cw) * (c as f64 + 0.5) / cols as f64;
            let cy = ch / 2.0 + (height as f64 - ch) * (r as f64 + 0.5) / rows as f64;
            let p = CheckerPlacement::new(cx.floor(), cy.floor(), checker_width);
            p.rect(width, height)?;
            out.push((r, c, p));
        }
    }
    Ok(out)
}

/// Repeats the estimate over a grid of placements.
pub fn placement_sweep(
    img: &LinearImage,
    cfg: &EstimateConfig,
    rows: usize,
    cols: usize,
    checker_width: usize,
    backend: &dyn InpaintBackend,
) -> Result<Vec<SweepPoint>> {
    sweep_placements(img.width(), img.height(), rows, cols, checker_width)?
        .into_par_iter()
        .map(|(row, col, placement)| {
            let e = estimate_at(img, cfg, &placement, backend)?;
            Ok(SweepPoint {
                row,
                col,
                placement,
                illuminant: e.illuminant,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapInterpolation {
    /// Bilinear between cell centers, clamped beyond the outermost centers.
    #[default]
    Bilinear,
    /// Each pixel takes its cell's estimate.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Checker width as a fraction of the smaller cell side.
    pub cell_checker_fraction: f64,
    pub interpolation: MapInterpolation,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            grid_rows: 4,
            grid_cols: 4,
            cell_checker_fraction: 0.8,
            interpolation: MapInterpolation::Bilinear,
        }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(invalid("spatial grid must be at least 1x1"));
        }
        if !(self.cell_checker_fraction > 0.0 && self.cell_checker_fraction <= 1.0) {
            return Err(invalid("cell_checker_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Per-pixel unit illuminants, row-major `H × W × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminantMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl IlluminantMap {
    /// Normalizes every pixel; zero or negative pixels are rejected.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(invalid(format!(
                "map of {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let mut data = data;
        for px in data.chunks_exact_mut(3) {
            let u = Illuminant::new(px[0], px[1], px[2])?.rgb();
            px.copy_from_slice(&u);
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, illum: Illuminant) -> Self {
        let data = illum.rgb().repeat(width * height);
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major `3 × H × W` tensor (stored as `f32` on disk).
    pub fn to_tensor(&self) -> GoldenTensor {
        let plane = Plane::from_fn(3, self.height, self.width, |c, y, x| self.get(x, y)[c])
            .expect("map dims are nonzero");
        GoldenTensor::new(plane, 0)
    }

    pub fn from_tensor(t: &GoldenTensor) -> Result<Self> {
        let (c, h, w) = t.plane.shape();
        if c != 3 {
            return Err(invalid(format!("illuminant map tensor needs 3 channels, has {c}")));
        }
        Self::from_fn(w, h, |x, y| [0, 1, 2].map(|c| t.plane.get(c, y, x)))
    }

    /// Display image of the map's chromaticity: each pixel scaled so its
    /// largest component is 1.
    pub fn visualize(&self) -> SrgbImage {
        SrgbImage::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            let m = p[0].max(p[1]).max(p[2]);
            p.map(|v| v / m)
        })
        .expect("map dims are nonzero")
    }
}

/// Mean per-pixel angular error in degrees.
pub fn map_mae(pred: &IlluminantMap, gt: &IlluminantMap) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(invalid(format!(
            "map dimensions differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut sum = 0.0;
    for (a, b) in pred.data.chunks_exact(3).zip(gt.data.chunks_exact(3)) {
        sum += angular_error([a[0], a[1], a[2]], [b[0], b[1], b[2]])?;
    }
    Ok(sum / (pred.width * pred.height) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub row: usize,
    pub col: usize,
    pub rect: Rect,
    /// `None` when the cell's estimate failed; the map then borrows from the
    /// nearest valid cell.
    pub illuminant: Option<Illuminant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SpatialEstimate {
    pub map: IlluminantMap,
    pub cells: Vec<CellEstimate>,
}

/// Half-open bounds of cell `i` of `n` along an axis of `len` pixels.
fn cell_bounds(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

/// Grid-cell estimates interpolated into a per-pixel map. Cells are
/// inpainted independently with the rest of the image intact.
pub fn estimate_spatial(
    img: &LinearImage,
    cfg: &EstimateConfig,
    sp: &SpatialConfig,
    backend: &dyn InpaintBackend,
) -> Result<SpatialEstimate> {
    sp.validate()?;
    let (w, h) = img.dims();
    let (rows, cols) = (sp.grid_rows, sp.grid_cols);
    if w < cols * COLS || h < rows * ROWS {
        return Err(Error::Placement(format!(
            "{w}x{h} image is too small for a {rows}x{cols} grid"
        )));
    }
    let cells: Vec<(usize, usize, Rect)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (x0, x1) = cell_bounds(c, cols, w);
            let (y0, y1) = cell_bounds(r, rows, h);
            (r, c, Rect::new(x0, y0, x1, y1))
        })
        .collect();
    let results: Vec<CellEstimate> = cells
        .par_iter()
        .map(|&(row, col, rect)| {
            let (cx, cy) = rect.center();
            // Largest 6:4 checker inside the cell, scaled by the fraction.
            let by_w = rect.width() as f64;
            let by_h = rect.height() as f64 * COLS as f64 / ROWS as f64;
            let cw = (sp.cell_checker_fraction * by_w.min(by_h)).floor() as usize;
            let placement = CheckerPlacement::new(cx.floor(), cy.floor(), cw);
            match estimate_at(img, cfg, &placement, backend) {
                Ok(e) => CellEstimate {
                    row,
                    col,
                    rect,
                    illuminant: Some(e.illuminant),
                    error: None,
                },
                Err(e) => {
                    warn!("cell ({row}, {col}) failed: {e}");
                    CellEstimate {
                        row,
                        col,
                        rect,
                        illuminant: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let valid = results.iter().filter(|c| c.illuminant.is_some()).count();
    let needed = 4.min(rows * cols);
    if valid < needed {
        let first = results.iter().find_map(|c| c.error.clone()).unwrap_or_default();
        return Err(Error::EstimationFailed(format!(
            "only {valid} of {} grid cells produced an estimate (need {needed}); first failure: {first}",
            rows * cols
        )));
    }
    let filled = fill_invalid_cells(&results);
    let map = interpolate_cells(w, h, rows, cols, &filled, sp.interpolation)?;
    Ok(SpatialEstimate { map, cells: results })
}

/// Replaces failed cells with the nearest valid one (grid distance, ties to
/// the lower index).
fn fill_invalid_cells(cells: &[CellEstimate]) -> Vec<[f64; 3]> {
    cells
        .iter()
        .map(|c| match c.illuminant {
            Some(i) => i.rgb(),
            None => {
                let nearest = cells
                    .iter()
                    .filter_map(|o| o.illuminant.map(|i| (o, i)))
                    .min_by_key(|(o, _)| {
                        let dr = o.row.abs_diff(c.row);
                        let dc = o.col.abs_diff(c.col);
                        dr * dr + dc * dc
                    })
                    .expect("at least one valid cell");
                nearest.1.rgb()
            }
        })
        .collect()
}

/// Interpolation weights along one axis: index pair and weight of the
/// second, for each pixel center.
fn axis_weights(len: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = cell_bounds(i, n, len);
            (a + b) as f64 / 2.0
        })
        .collect();
    (0..len)
        .map(|p| {
            let x = p as f64 + 0.5;
            if n == 1 || x <= centers[0] {
                return (0, 0, 0.0);
            }
            if x >= centers[n - 1] {
                return (n - 1, n - 1, 0.0);
            }
            let j = centers.partition_point(|&c| c <= x) - 1;
            let t = (x - centers[j]) / (centers[j + 1] - centers[j]);
            (j, j + 1, t)
        })
        .collect()
}

fn interpolate_cells(
    w: usize,
    h: usize,
    rows: usize,
    cols: usize,
    cells: &[[f64; 3]],
    mode: MapInterpolation,
) -> Result<IlluminantMap> {
    let at = |r: usize, c: usize| cells[r * cols + c];
    match mode {
        MapInterpolation::Nearest => IlluminantMap::from_fn(w, h, |x, y| {
            let c = (x * cols / w).min(cols - 1);
            let r = (y * rows / h).min(rows - 1);
            at(r, c)
        }),
        MapInterpolation::Bilinear => {
            let wx = axis_weights(w, cols);
            let wy = axis_weights(h, rows);
            IlluminantMap::from_fn(w, h, |x, y| {
                let (c0, c1, tx) = wx[x];
                let (r0, r1, ty) = wy[y];
                std::array::from_fn(|k| {
                    let top = at(r0, c0)[k] * (1.0 - tx) + at(r0, c1)[k] * tx;
                    let bot = at(r1, c0)[k] * (1.0 - tx) + at(r1, c1)[k] * tx;
                    top * (1.0 - ty) + bot * ty
                })
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::mock::{MockBackend, OracleConfig, OracleSource};

    fn scene(w: usize, h: usize) -> LinearImage {
        LinearImage::from_fn(w, h, |x, y| {
            let t = (x + y) as f64 / (w + h) as f64;
            [0.2 + 0.3 * t, 0.25 + 0.2 * t, 0.3 - 0.1 * t]
        })
        .unwrap()
    }

    fn mock(illum: Illuminant) -> MockBackend {
        MockBackend::new(OracleConfig::fixed(illum))
    }

    #[test]
    fn neutral_oracle_gives_neutral() {
        let img = LinearImage::filled(96, 64, [0.18; 3]).unwrap();
        let e = estimate_single(&img, &EstimateConfig::default(), None, &mock(Illuminant::neutral())).unwrap();
        assert!(e.illuminant.angle_to(&Illuminant::neutral()) < 0.05);
        assert!(e.diagnostics.timings.is_none());
        assert!(!e.diagnostics.locality.violated);
    }

    #[test]
    fn oracle_round_trip() {
        let l = Illuminant::new(0.7, 1.0, 0.45).unwrap();
        let e = estimate_single(&scene(128, 96), &EstimateConfig::default(), None, &mock(l)).unwrap();
        assert!(e.illuminant.angle_to(&l) < 0.1, "{}", e.illuminant.angle_to(&l));
        assert_eq!(e.diagnostics.samples.len(), 24);
    }

    #[test]
    fn request_ids_are_content_addressed() {
        let b = mock(Illuminant::neutral());
        let cfg = EstimateConfig::default();
        let a = estimate_single(&scene(64, 48), &cfg, None, &b).unwrap();
        let again = estimate_single(&scene(64, 48), &cfg, None, &b).unwrap();
        assert_eq!(a.diagnostics, again.diagnostics);
        let other = estimate_single(&scene(64, 48).scaled(0.5).unwrap(), &cfg, None, &b).unwrap();
        assert_ne!(a.diagnostics.request_id, other.diagnostics.request_id);
    }

    #[test]
    fn placement_policies() {
        let p = PlacementPolicy::DatasetBbox.resolve(100, 80, None).unwrap();
        assert_eq!(p, CheckerPlacement::centered(100, 80, DEFAULT_WIDTH_FRACTION));
        let b = Rect::new(10, 10, 40, 30);
        assert_eq!(
            PlacementPolicy::DatasetBbox.resolve(100, 80, Some(b)).unwrap(),
            CheckerPlacement::from_bbox(b)
        );
        let bad = PlacementPolicy::Explicit {
            center_x: 2.0,
            center_y: 2.0,
            checker_width: 30,
        };
        assert!(matches!(bad.resolve(100, 80, None), Err(Error::Placement(_))));
    }

    #[test]
    fn sweep_positions_fit_and_differ() {
        let ps = sweep_placements(200, 150, 3, 3, 48).unwrap();
        assert_eq!(ps.len(), 9);
        for (_, _, p) in &ps {
            p.rect(200, 150).unwrap();
        }
        assert_ne!(ps[0].2.center, ps[8].2.center);
        assert!(sweep_placements(40, 40, 3, 3, 48).is_err());
    }

    #[test]
    fn one_by_one_grid_broadcasts() {
        let l = Illuminant::new(0.9, 1.0, 0.6).unwrap();
        let sp = SpatialConfig {
            grid_rows: 1,
            grid_cols: 1,
            ..Default::default()
        };
        let s = estimate_spatial(&scene(64, 48), &EstimateConfig::default(), &sp, &mock(l)).unwrap();
        let first = s.map.get(0, 0);
        assert!(s.map.data().chunks_exact(3).all(|p| p == first));
        assert!(angular_error(first, l.rgb()).unwrap() < 0.1);
    }

    #[test]
    fn axis_weights_clamp_and_interpolate() {
        // 8 px, 2 cells: centers at 2 and 6.
        let w = axis_weights(8, 2);
        assert_eq!(w[0], (0, 0, 0.0));
        assert_eq!(w[1], (0, 0, 0.0));
        assert_eq!(w[2], (0, 1, 0.125));
        assert_eq!(w[5], (0, 1, 0.875));
        assert_eq!(w[6], (1, 1, 0.0));
    }

    #[test]
    fn invalid_cells_borrow_nearest() {
        let l = Illuminant::neutral();
        let mk = |row, col, ok: bool| CellEstimate {
            row,
            col,
            rect: Rect::new(0, 0, 1, 1),
            illuminant: ok.then_some(l),
            error: None,
        };
        let other = Illuminant::new(1.0, 0.5, 0.5).unwrap();
        let mut cells = vec![mk(0, 0, true), mk(0, 1, false), mk(1, 0, true), mk(1, 1, true)];
        cells[3].illuminant = Some(other);
        let filled = fill_invalid_cells(&cells);
        assert_eq!(filled[1], l.rgb());
    }

    #[test]
    fn split_oracle_map_edges() {
        let (l1, l2) = (
            Illuminant::new(1.0, 0.8, 0.5).unwrap(),
            Illuminant::new(0.5, 0.8, 1.0).unwrap(),
        );
        let b = MockBackend::new(OracleConfig::with_source(OracleSource::HorizontalSplit {
            left: l1,
            right: l2,
            split: 0.5,
        }));
        let s = estimate_spatial(&scene(160, 120), &EstimateConfig::default(), &SpatialConfig::default(), &b)
            .unwrap();
        assert!(angular_error(s.map.get(0, 60), l1.rgb()).unwrap() < 0.3);
        assert!(angular_error(s.map.get(159, 60), l2.rgb()).unwrap() < 0.3);
        let row: Vec<f64> = (0..160)
            .map(|x| angular_error(s.map.get(x, 60), l1.rgb()).unwrap())
            .collect();
        assert!(row.windows(2).all(|p| p[1] >= p[0] - 1e-9));
    }

    #[test]
    fn map_mae_of_identical_and_orthogonal() {
        let a = IlluminantMap::constant(3, 2, Illuminant::neutral());
        assert_eq!(map_mae(&a, &a).unwrap(), 0.0);
        let x = IlluminantMap::from_fn(3, 2, |_, _| [1.0, 1e-300, 1e-300]).unwrap();
        let y = IlluminantMap::from_fn(3, 2, |_, _| [1e-300, 1.0, 1e-300]).unwrap();
        assert!((map_mae(&x, &y).unwrap() - 90.0).abs() < 1e-9);
        assert!(map_mae(&a, &IlluminantMap::constant(2, 2, Illuminant::neutral())).is_err());
    }
}
