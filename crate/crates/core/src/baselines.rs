//! Classical statistical illuminant estimators.
//!
//! All of them are instances of one family: the Minkowski-`p` mean of the
//! (optionally Gaussian-smoothed, optionally differentiated) per-channel
//! signal over the unsaturated pixels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::color::{Illuminant, LinearImage, Mask};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    GrayWorld,
    WhitePatch,
    ShadesOfGray,
    GrayEdge1,
    GrayEdge2,
    GeneralGrayWorld,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 6] = [
        BaselineMethod::GrayWorld,
        BaselineMethod::WhitePatch,
        BaselineMethod::ShadesOfGray,
        BaselineMethod::GrayEdge1,
        BaselineMethod::GrayEdge2,
        BaselineMethod::GeneralGrayWorld,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::GrayWorld => "gray_world",
            BaselineMethod::WhitePatch => "white_patch",
            BaselineMethod::ShadesOfGray => "shades_of_gray",
            BaselineMethod::GrayEdge1 => "gray_edge_1",
            BaselineMethod::GrayEdge2 => "gray_edge_2",
            BaselineMethod::GeneralGrayWorld => "general_gray_world",
        }
    }

    fn derivative_order(&self) -> usize {
        match self {
            BaselineMethod::GrayEdge1 => 1,
            BaselineMethod::GrayEdge2 => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| invalid(format!("unknown baseline method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Minkowski norm; ignored by gray world (1) and white patch (∞).
    /// JSON `null` stands for ∞.
    #[serde(deserialize_with = "de_norm")]
    pub minkowski_p: f64,
    /// Gaussian scale in pixels; 0 disables smoothing.
    pub smoothing_sigma: f64,
    /// Pixels with any channel at or above this linear level are excluded.
    pub saturation_threshold: f64,
}

pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.95;

fn de_norm<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl BaselineConfig {
    /// Literature defaults for each method.
    pub fn for_method(method: BaselineMethod) -> Self {
        let (p, sigma) = match method {
            BaselineMethod::GrayWorld => (1.0, 0.0),
            BaselineMethod::WhitePatch => (f64::INFINITY, 0.0),
            BaselineMethod::ShadesOfGray => (6.0, 0.0),
            BaselineMethod::GrayEdge1 | BaselineMethod::GrayEdge2 => (6.0, 1.0),
            BaselineMethod::GeneralGrayWorld => (6.0, 2.0),
        };
        Self {
            method,
            minkowski_p: p,
            smoothing_sigma: sigma,
            saturation_threshold: DEFAULT_SATURATION_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.minkowski_p >= 1.0) {
            return Err(invalid(format!("minkowski_p {} must be >= 1", self.minkowski_p)));
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(invalid(format!("smoothing_sigma {} must be >= 0", self.smoothing_sigma)));
        }
        if !(self.saturation_threshold > 0.0) {
            return Err(invalid("saturation_threshold must be positive"));
        }
        Ok(())
    }

    fn effective_p(&self) -> f64 {
        match self.method {
            BaselineMethod::GrayWorld => 1.0,
            BaselineMethod::WhitePatch => f64::INFINITY,
            _ => self.minkowski_p,
        }
    }

    fn effective_sigma(&self) -> f64 {
        match self.method {
            BaselineMethod::GrayWorld | BaselineMethod::WhitePatch | BaselineMethod::ShadesOfGray => 0.0,
            _ => self.smoothing_sigma,
        }
    }
}

/// 1-D kernel of the given derivative order, centered at index `radius`.
fn gaussian_kernel(sigma: f64, order: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return match order {
            0 => vec![1.0],
            1 => vec![-0.5, 0.0, 0.5],
            _ => vec![1.0, -2.0, 1.0],
        };
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let xs: Vec<f64> = (-radius..=radius).map(|x| x as f64).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    match order {
        0 => {
            let s: f64 = g.iter().sum();
            g.iter().map(|v| v / s).collect()
        }
        1 => {
            let k: Vec<f64> = xs.iter().zip(&g).map(|(x, g)| -x * g).collect();
            // exact on linear ramps: sum(k[j] * (j - r)) = 1 under correlation
            let s: f64 = xs.iter().zip(&k).map(|(x, k)| x * k).sum();
            k.iter().map(|v| v / s).collect()
        }
        _ => {
            let k: Vec<f64> = xs
                .iter()
                .zip(&g)
                .map(|(x, g)| (x * x / sigma.powi(4) - 1.0 / (sigma * sigma)) * g)
                .collect();
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            let k: Vec<f64> = k.iter().map(|v| v - mean).collect();
            // exact on quadratics: sum(k[j] * x^2 / 2) = 1
            let s: f64 = xs.iter().zip(&k).map(|(x, k)| 0.5 * x * x * k).sum();
            k.iter().map(|v| v / s).collect()
        }
    }
}

/// Correlates each row (`horizontal`) or column with `kernel`, replicating
/// borders. `src` is a single channel of size `w × h`.
fn correlate(src: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let off = j as isize - r;
                let (sx, sy) = if horizontal {
                    ((x as isize + off).clamp(0, w as isize - 1) as usize, y)
                } else {
                    (x, (y as isize + off).clamp(0, h as isize - 1) as usize)
                };
                acc += k * src[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Separable Gaussian derivative `∂^(ox+oy) / ∂x^ox ∂y^oy` of one channel.
fn gauss_deriv(src: &[f64], w: usize, h: usize, sigma: f64, ox: usize, oy: usize) -> Vec<f64> {
    let tmp = correlate(src, w, h, &gaussian_kernel(sigma, ox), true);
    correlate(&tmp, w, h, &gaussian_kernel(sigma, oy), false)
}

fn channel(img: &LinearImage, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Minkowski-`p` mean of the selected values, computed relative to their
/// maximum so large `p` neither overflows nor underflows.
fn minkowski(values: impl Iterator<Item = f64>, p: f64) -> f64 {
    let v: Vec<f64> = values.map(f64::abs).collect();
    if p == 1.0 {
        return if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    }
    let max = v.iter().copied().fold(0.0, f64::max);
    if v.is_empty() || max == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return max;
    }
    let mean = v.iter().map(|x| (x / max).powf(p)).sum::<f64>() / v.len() as f64;
    max * mean.powf(1.0 / p)
}

/// Estimate with the physical checker (or anything else) excluded.
pub fn estimate_baseline_masked(
    img: &LinearImage,
    cfg: &BaselineConfig,
    exclude: Option<&Mask>,
) -> Result<Illuminant> {
    cfg.validate()?;
    if let Some(m) = exclude {
        if m.dims() != img.dims() {
            return Err(invalid("exclusion mask dimensions differ from the image"));
        }
    }
    let (w, h) = img.dims();
    let keep: Vec<bool> = img
        .pixels()
        .enumerate()
        .map(|(i, p)| {
            p.iter().all(|&v| v < cfg.saturation_threshold)
                && exclude.is_none_or(|m| m.data()[i] == 0)
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::EstimationFailed(format!(
            "{}: every pixel is saturated or excluded",
            cfg.method
        )));
    }
    let p = cfg.effective_p();
    let sigma = cfg.effective_sigma();
    let order = cfg.method.derivative_order();
    let mut est = [0.0; 3];
    for (c, e) in est.iter_mut().enumerate() {
        let ch = channel(img, c);
        let signal: Vec<f64> = match order {
            0 if sigma == 0.0 => ch,
            0 => gauss_deriv(&ch, w, h, sigma, 0, 0),
            1 => {
                let dx = gauss_deriv(&ch, w, h, sigma, 1, 0);
                let dy = gauss_deriv(&ch, w, h, sigma, 0, 1);
                dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).collect()
            }
            _ => {
                let dxx = gauss_deriv(&ch, w, h, sigma, 2, 0);
                let dyy = gauss_deriv(&ch, w, h, sigma, 0, 2);
                let dxy = gauss_deriv(&ch, w, h, sigma, 1, 1);
                (0..w * h)
                    .map(|i| (dxx[i] * dxx[i] + dyy[i] * dyy[i] + 4.0 * dxy[i] * dxy[i]).sqrt())
                    .collect()
            }
        };
        *e = minkowski(
            signal.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v),
            p,
        );
    }
    // Kernel rounding leaves ~1e-17 relative residue on flat input.
    let scale = img.data().iter().copied().fold(0.0, f64::max);
    if order > 0 && est.iter().any(|&v| v <= 1e-12 * scale) {
        return Err(Error::EstimationFailed(format!(
            "{}: image has zero derivative energy in at least one channel",
            cfg.method
        )));
    }
    Illuminant::new(est[0], est[1], est[2]).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::EstimationFailed(format!("{}: {msg}", cfg.method)),
        other => other,
    })
}

pub fn estimate_baseline(img: &LinearImage, cfg: &BaselineConfig) -> Result<Illuminant> {
    estimate_baseline_masked(img, cfg, None)
}
