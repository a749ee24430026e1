//! Virtual color checker: geometry, rendering, compositing, patch sampling
//! and illuminant extraction from the achromatic row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::{Illuminant, LinearImage, Mask, Rect, SrgbImage};
use crate::error::{invalid, Error, Result};

pub const ROWS: usize = 4;
pub const COLS: usize = 6;
pub const PATCH_COUNT: usize = ROWS * COLS;

/// Built-in template, version 1.
pub const TEMPLATE_V1: &str = include_str!("../data/checker_template_v1.txt");
const TEMPLATE_HEADER: &str = "checker-template";

pub const DEFAULT_BORDER_RATIO: f64 = 0.08;
pub const DEFAULT_SAMPLE_MARGIN: f64 = 0.5;
/// Linear-domain level at or above which a patch channel counts as clipped.
pub const DEFAULT_CLIP_THRESHOLD: f64 = 0.98;
/// Linear-domain level at or below which a patch channel is noise dominated.
pub const DEFAULT_NOISE_FLOOR: f64 = 0.02;
/// Checker width as a fraction of the smaller image side when no box is given.
pub const DEFAULT_WIDTH_FRACTION: f64 = 0.32;

/// Parses a template file into 24 sRGB triples in `[0, 1]`.
///
/// The first non-comment line must read `checker-template <version>`; the
/// following 24 lines hold one `R G B` triple each on an 8-bit scale.
pub fn parse_template(text: &str) -> Result<(u32, Vec<[f64; 3]>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let version = match lines.next() {
        Some((_, l)) if l.starts_with(TEMPLATE_HEADER) => l[TEMPLATE_HEADER.len()..]
            .trim()
            .parse::<u32>()
            .map_err(|_| invalid(format!("bad template header `{l}`")))?,
        _ => return Err(invalid("template must start with `checker-template <version>`")),
    };
    let mut colors = Vec::with_capacity(PATCH_COUNT);
    for (lineno, line) in lines {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| invalid(format!("template line {lineno}: not numeric")))?;
        if vals.len() != 3 || vals.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(invalid(format!(
                "template line {lineno}: expected three values in 0..=255"
            )));
        }
        colors.push([vals[0] / 255.0, vals[1] / 255.0, vals[2] / 255.0]);
    }
    if colors.len() != PATCH_COUNT {
        return Err(invalid(format!(
            "template has {} patches, expected {PATCH_COUNT}",
            colors.len()
        )));
    }
    Ok((version, colors))
}

/// Patch grid of the checker and the parameters used to read it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerLayout {
    pub template_version: u32,
    /// Template colors in the display domain, row-major.
    pub patch_colors: Vec<[f64; 3]>,
    /// Patches read for the illuminant, in order.
    pub achromatic_indices: Vec<usize>,
    /// Fraction of each patch cell painted as separator, split between both sides.
    pub border_ratio: f64,
    /// Central fraction of each cell (per axis) used for sampling.
    pub sample_margin: f64,
    pub clip_threshold: f64,
    pub noise_floor: f64,
}

impl Default for CheckerLayout {
    fn default() -> Self {
        Self::from_template_text(TEMPLATE_V1).expect("built-in template is valid")
    }
}

impl CheckerLayout {
    pub fn from_template_text(text: &str) -> Result<Self> {
        let (template_version, patch_colors) = parse_template(text)?;
        let mut layout = Self {
            template_version,
            patch_colors,
            achromatic_indices: (18..24).collect(),
            border_ratio: DEFAULT_BORDER_RATIO,
            sample_margin: DEFAULT_SAMPLE_MARGIN,
            clip_threshold: DEFAULT_CLIP_THRESHOLD,
            noise_floor: DEFAULT_NOISE_FLOOR,
        };
        for &i in &layout.achromatic_indices {
            let c = layout.patch_colors[i];
            let gray = (c[0] + c[1] + c[2]) / 3.0;
            layout.patch_colors[i] = [gray; 3];
        }
        Ok(layout)
    }

    pub fn from_template_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_template_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_colors.len() != PATCH_COUNT {
            return Err(invalid(format!("layout needs {PATCH_COUNT} patch colors")));
        }
        if self
            .patch_colors
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(invalid("patch colors must lie in [0, 1]"));
        }
        if self.achromatic_indices.is_empty()
            || self.achromatic_indices.iter().any(|&i| i >= PATCH_COUNT)
        {
            return Err(invalid("achromatic indices must be a nonempty subset of 0..24"));
        }
        for &i in &self.achromatic_indices {
            let c = self.patch_colors[i];
            if c[0] != c[1] || c[1] != c[2] {
                return Err(invalid(format!("achromatic patch {i} is not neutral")));
            }
        }
        if !(self.sample_margin > 0.0 && self.sample_margin <= 1.0) {
            return Err(invalid("sample_margin must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.border_ratio) {
            return Err(invalid("border_ratio must lie in [0, 1)"));
        }
        if !(self.noise_floor < self.clip_threshold) {
            return Err(invalid("noise_floor must be below clip_threshold"));
        }
        Ok(())
    }
}

/// Axis-aligned checker position. Height follows from the 6:4 aspect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerPlacement {
    pub center: (f64, f64),
    pub checker_width: usize,
}

impl CheckerPlacement {
    pub fn new(cx: f64, cy: f64, checker_width: usize) -> Self {
        Self {
            center: (cx, cy),
            checker_width,
        }
    }

    pub fn checker_height(&self) -> usize {
        ((self.checker_width * ROWS) as f64 / COLS as f64).round() as usize
    }

    /// Checker of `fraction × min(width, height)` centered in the image.
    pub fn centered(width: usize, height: usize, fraction: f64) -> Self {
        let w = (fraction * width.min(height) as f64).round().max(1.0) as usize;
        Self::new(width as f64 / 2.0, height as f64 / 2.0, w)
    }

    /// Checker filling the width of `bbox`, centered on it.
    pub fn from_bbox(bbox: Rect) -> Self {
        let (cx, cy) = bbox.center();
        Self::new(cx, cy, bbox.width())
    }

    /// The covered pixel rectangle, checked against the image size.
    pub fn rect(&self, width: usize, height: usize) -> Result<Rect> {
        let (w, h) = (self.checker_width, self.checker_height());
        if w < COLS || h < ROWS {
            return Err(Error::Placement(format!(
                "checker {w}x{h} is smaller than one pixel per patch"
            )));
        }
        let x0 = (self.center.0 - w as f64 / 2.0).round();
        let y0 = (self.center.1 - h as f64 / 2.0).round();
        if !(x0.is_finite() && y0.is_finite()) || x0 < 0.0 || y0 < 0.0 {
            return Err(Error::Placement(format!(
                "checker at {:?} extends past the top-left image edge",
                self.center
            )));
        }
        let rect = Rect::new(x0 as usize, y0 as usize, x0 as usize + w, y0 as usize + h);
        if !rect.fits_in(width, height) {
            return Err(Error::Placement(format!(
                "checker {rect:?} does not fit in a {width}x{height} image"
            )));
        }
        Ok(rect)
    }
}

/// Locates a pixel inside the checker: patch index plus the pixel center's
/// fractional position within its cell.
#[inline]
fn locate(rect: &Rect, x: usize, y: usize) -> (usize, f64, f64) {
    let u = (x - rect.x0) as f64 + 0.5;
    let v = (y - rect.y0) as f64 + 0.5;
    let u = u / rect.width() as f64 * COLS as f64;
    let v = v / rect.height() as f64 * ROWS as f64;
    let col = (u.floor() as usize).min(COLS - 1);
    let row = (v.floor() as usize).min(ROWS - 1);
    (row * COLS + col, u - col as f64, v - row as f64)
}

/// Center of patch `index` in image coordinates.
pub fn patch_center(rect: &Rect, index: usize) -> (f64, f64) {
    let (row, col) = (index / COLS, index % COLS);
    (
        rect.x0 as f64 + (col as f64 + 0.5) / COLS as f64 * rect.width() as f64,
        rect.y0 as f64 + (row as f64 + 0.5) / ROWS as f64 * rect.height() as f64,
    )
}

/// Rasterizes the template over the placement rectangle. Returns the
/// rect-sized checker and a full-image mask covering the rectangle.
pub fn render_neutral_checker(
    layout: &CheckerLayout,
    placement: &CheckerPlacement,
    image_dims: (usize, usize),
) -> Result<(SrgbImage, Mask, Rect)> {
    layout.validate()?;
    let rect = placement.rect(image_dims.0, image_dims.1)?;
    let half = layout.border_ratio / 2.0;
    let raster = SrgbImage::from_fn(rect.width(), rect.height(), |x, y| {
        let (idx, fu, fv) = locate(&rect, x + rect.x0, y + rect.y0);
        if fu < half || fu > 1.0 - half || fv < half || fv > 1.0 - half {
            [0.0; 3]
        } else {
            layout.patch_colors[idx]
        }
    })?;
    let mask = Mask::from_rect(image_dims.0, image_dims.1, rect)?;
    Ok((raster, mask, rect))
}

/// Pastes the rendered checker into `img`. Pixels outside the checker
/// rectangle are left untouched.
pub fn composite_checker(
    img: &SrgbImage,
    layout: &CheckerLayout,
    placement: &CheckerPlacement,
) -> Result<(SrgbImage, Mask)> {
    let (raster, mask, rect) = render_neutral_checker(layout, placement, img.dims())?;
    let mut out = img.clone();
    for y in 0..rect.height() {
        for x in 0..rect.width() {
            out.put(rect.x0 + x, rect.y0 + y, raster.pixel(x, y));
        }
    }
    Ok((out, mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub patch_index: usize,
    pub mean_rgb: [f64; 3],
    pub median_rgb: [f64; 3],
    pub pixel_count: usize,
}

/// Mean accumulated relative to the first value, exact on constant input.
fn shifted_mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Gathers the central `sample_margin` of every patch cell and reports its
/// per-channel mean and median.
pub fn sample_patches(
    img: &LinearImage,
    layout: &CheckerLayout,
    placement: &CheckerPlacement,
) -> Result<Vec<PatchSample>> {
    layout.validate()?;
    let rect = placement.rect(img.width(), img.height())?;
    let half = layout.sample_margin / 2.0;
    let mut buckets: Vec<[Vec<f64>; 3]> = vec![Default::default(); PATCH_COUNT];
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let (idx, fu, fv) = locate(&rect, x, y);
            if (fu - 0.5).abs() <= half && (fv - 0.5).abs() <= half {
                let p = img.pixel(x, y);
                for c in 0..3 {
                    buckets[idx][c].push(p[c]);
                }
            }
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(patch_index, mut chans)| {
            let n = chans[0].len();
            if n == 0 {
                return Err(Error::Sampling(format!(
                    "patch {patch_index} has no pixels inside its sampling window; \
                     checker of width {} is too small",
                    placement.checker_width
                )));
            }
            let mean_rgb = [0, 1, 2].map(|c| shifted_mean(&chans[c]));
            let median_rgb = [0, 1, 2].map(|c| median(&mut chans[c]));
            Ok(PatchSample {
                patch_index,
                mean_rgb,
                median_rgb,
                pixel_count: n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    Clipped,
    BelowNoiseFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEstimate {
    pub illuminant: Illuminant,
    pub used: Vec<usize>,
    pub discarded: Vec<(usize, DiscardReason)>,
}

/// Averages the unit chromaticities of the usable achromatic patches.
pub fn estimate_illuminant_from_patches(
    samples: &[PatchSample],
    layout: &CheckerLayout,
) -> Result<Illuminant> {
    estimate_from_patches_detailed(samples, layout).map(|e| e.illuminant)
}

pub fn estimate_from_patches_detailed(
    samples: &[PatchSample],
    layout: &CheckerLayout,
) -> Result<PatchEstimate> {
    let mut sum = [0.0; 3];
    let mut used = Vec::new();
    let mut discarded = Vec::new();
    for &idx in &layout.achromatic_indices {
        let s = samples
            .iter()
            .find(|s| s.patch_index == idx)
            .ok_or_else(|| invalid(format!("no sample for achromatic patch {idx}")))?;
        let m = s.median_rgb;
        if m.iter().any(|&v| v >= layout.clip_threshold) {
            discarded.push((idx, DiscardReason::Clipped));
            continue;
        }
        if m.iter().any(|&v| v <= layout.noise_floor) {
            discarded.push((idx, DiscardReason::BelowNoiseFloor));
            continue;
        }
        let n = crate::color::norm3(m);
        for c in 0..3 {
            sum[c] += m[c] / n;
        }
        used.push(idx);
    }
    if used.is_empty() {
        return Err(Error::EstimationFailed(format!(
            "all {} achromatic patches were clipped or below the noise floor",
            layout.achromatic_indices.len()
        )));
    }
    Ok(PatchEstimate {
        illuminant: Illuminant::new(sum[0], sum[1], sum[2])?,
        used,
        discarded,
    })
}
