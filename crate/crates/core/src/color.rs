//! Image containers, illuminant vectors and the basic color operations:
//! gamma transfer, angular error and von Kries white balance.
//!
//! Pixels are stored row-major with interleaved RGB channels.

use std::fmt;
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Gamma used to move between the linear raw domain and the display domain.
pub const DEFAULT_GAMMA: f64 = 2.2;

/// Marker for the value domain of an [`Image`].
pub trait Domain: Copy + Send + Sync + fmt::Debug + 'static {
    const NAME: &'static str;
    fn check(v: f64) -> bool;
}

/// Linear raw domain: finite and non-negative, highlights may exceed 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear;

/// Gamma-encoded display domain, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Srgb;

impl Domain for Linear {
    const NAME: &'static str = "linear";
    fn check(v: f64) -> bool {
        v.is_finite() && v >= 0.0
    }
}

impl Domain for Srgb {
    const NAME: &'static str = "srgb";
    fn check(v: f64) -> bool {
        (0.0..=1.0).contains(&v)
    }
}

/// An H×W×3 floating-point image tagged with its value domain.
#[derive(Clone, PartialEq)]
pub struct Image<D: Domain> {
    width: usize,
    height: usize,
    data: Vec<f64>,
    _domain: PhantomData<D>,
}

pub type LinearImage = Image<Linear>;
pub type SrgbImage = Image<Srgb>;

impl<D: Domain> fmt::Debug for Image<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("domain", &D::NAME)
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl<D: Domain> Image<D> {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(invalid(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| !D::check(v)) {
            return Err(invalid(format!(
                "value {} at index {} outside the {} domain",
                data[i],
                i,
                D::NAME
            )));
        }
        Ok(Self::from_raw(width, height, data))
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
            _domain: PhantomData,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Overwrites one pixel. Values outside the domain are rejected.
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(invalid(format!("pixel ({x}, {y}) out of bounds")));
        }
        if !rgb.iter().all(|&v| D::check(v)) {
            return Err(invalid(format!("{rgb:?} outside the {} domain", D::NAME)));
        }
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
        Ok(())
    }

    #[inline]
    pub(crate) fn put(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Copies out the pixels of `rect`.
    pub fn crop(&self, rect: Rect) -> Result<Self> {
        if !rect.fits_in(self.width, self.height) || rect.is_empty() {
            return Err(invalid(format!("crop {rect:?} outside image")));
        }
        let mut data = Vec::with_capacity(rect.area() * 3);
        for y in rect.y0..rect.y1 {
            let start = (y * self.width + rect.x0) * 3;
            data.extend_from_slice(&self.data[start..start + rect.width() * 3]);
        }
        Ok(Self::from_raw(rect.width(), rect.height(), data))
    }
}

impl LinearImage {
    /// Multiplies every value by `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(invalid(format!("scale factor {k} must be positive")));
        }
        Ok(Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| v * k).collect(),
        ))
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x0 <= self.x1 && self.y0 <= self.y1 && self.x1 <= width && self.y1 <= height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }
}

/// Binary per-pixel mask.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("set", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid(format!(
                "{width}x{height} mask needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    /// Mask with exactly the pixels of `rect` set.
    pub fn from_rect(width: usize, height: usize, rect: Rect) -> Result<Self> {
        if !rect.fits_in(width, height) {
            return Err(invalid(format!(
                "rect {rect:?} outside {width}x{height} mask"
            )));
        }
        let mut mask = Self::empty(width, height);
        for y in rect.y0..rect.y1 {
            mask.data[y * width + rect.x0..y * width + rect.x1].fill(1);
        }
        Ok(mask)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Tight bounding box of the set pixels.
    pub fn bbox(&self) -> Option<Rect> {
        let mut r: Option<Rect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let b = r.get_or_insert(Rect::new(x, y, x + 1, y + 1));
                    b.x0 = b.x0.min(x);
                    b.y0 = b.y0.min(y);
                    b.x1 = b.x1.max(x + 1);
                    b.y1 = b.y1.max(y + 1);
                }
            }
        }
        r
    }

    pub fn crop(&self, rect: Rect) -> Result<Self> {
        if !rect.fits_in(self.width, self.height) || rect.is_empty() {
            return Err(invalid(format!("crop {rect:?} outside mask")));
        }
        let mut data = Vec::with_capacity(rect.area());
        for y in rect.y0..rect.y1 {
            data.extend_from_slice(&self.data[y * self.width + rect.x0..y * self.width + rect.x1]);
        }
        Ok(Self {
            width: rect.width(),
            height: rect.height(),
            data,
        })
    }

    /// Union with another mask of equal size.
    pub fn union(&self, other: &Mask) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(invalid("mask union needs equal dimensions"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a | b)
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

/// Unit-norm RGB chromaticity of a light source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Illuminant {
    r: f64,
    g: f64,
    b: f64,
}

impl Illuminant {
    /// The achromatic light `(1, 1, 1) / √3`.
    pub fn neutral() -> Self {
        let c = 1.0 / 3f64.sqrt();
        Self { r: c, g: c, b: c }
    }

    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        normalize_illuminant([r, g, b])
    }

    pub fn rgb(&self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Components divided by green, the von Kries gains used for correction.
    pub fn green_anchored(&self) -> [f64; 3] {
        [self.r / self.g, 1.0, self.b / self.g]
    }

    /// Angle to `other` in degrees.
    pub fn angle_to(&self, other: &Illuminant) -> f64 {
        angle_deg(self.rgb(), other.rgb())
    }

    /// `r/(r+g+b)` and `g/(r+g+b)`.
    pub fn rg_chromaticity(&self) -> (f64, f64) {
        let s = self.r + self.g + self.b;
        (self.r / s, self.g / s)
    }
}

impl TryFrom<[f64; 3]> for Illuminant {
    type Error = crate::Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        normalize_illuminant(v)
    }
}

impl From<Illuminant> for [f64; 3] {
    fn from(i: Illuminant) -> Self {
        i.rgb()
    }
}

impl fmt::Display for Illuminant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} {:.6} {:.6}", self.r, self.g, self.b)
    }
}

/// Scales a strictly positive triple to unit Euclidean norm.
pub fn normalize_illuminant(v: [f64; 3]) -> Result<Illuminant> {
    if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(invalid(format!("illuminant {v:?} has a negative or non-finite component")));
    }
    let norm = norm3(v);
    if norm == 0.0 {
        return Err(invalid("illuminant is the zero vector"));
    }
    let [r, g, b] = v.map(|c| c / norm);
    if r <= 0.0 || g <= 0.0 || b <= 0.0 {
        return Err(invalid(format!(
            "illuminant {v:?} must have strictly positive components"
        )));
    }
    Ok(Illuminant { r, g, b })
}

#[inline]
pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `atan2(|a × b|, a · b)`: the same angle as the arccos of the cosine, but
/// well conditioned for nearly parallel vectors.
fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    norm3(cross).atan2(dot).to_degrees()
}

/// Angle in degrees between two RGB vectors. Scale-invariant in both.
pub fn angular_error(est: [f64; 3], gt: [f64; 3]) -> Result<f64> {
    for v in [est, gt] {
        if v.iter().any(|c| !c.is_finite()) || norm3(v) == 0.0 {
            return Err(invalid(format!("angular error needs nonzero finite vectors, got {v:?}")));
        }
    }
    Ok(angle_deg(est, gt))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("gamma {gamma} must be positive")))
    }
}

/// `v ↦ clamp(v, 0, 1)^(1/gamma)`.
pub fn gamma_encode(img: &LinearImage, gamma: f64) -> Result<SrgbImage> {
    check_gamma(gamma)?;
    let inv = 1.0 / gamma;
    let data = img
        .data
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(invalid("non-finite pixel"));
            }
            Ok(v.clamp(0.0, 1.0).powf(inv))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SrgbImage::from_raw(img.width, img.height, data))
}

/// `v ↦ v^gamma`.
pub fn gamma_decode(img: &SrgbImage, gamma: f64) -> Result<LinearImage> {
    check_gamma(gamma)?;
    let data = img
        .data
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(invalid("non-finite pixel"));
            }
            Ok(v.powf(gamma))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearImage::from_raw(img.width, img.height, data))
}

/// Von Kries correction anchored on green: each channel is divided by
/// `illum_c / illum_g`.
pub fn apply_white_balance(img: &LinearImage, illum: &Illuminant) -> Result<LinearImage> {
    if illum.rgb().iter().any(|&c| !(c > 0.0)) {
        return Err(invalid(format!("illuminant {illum} must be strictly positive")));
    }
    let gains = illum.green_anchored();
    let data = img
        .data
        .chunks_exact(3)
        .flat_map(|p| [p[0] / gains[0], p[1] / gains[1], p[2] / gains[2]])
        .collect();
    Ok(LinearImage::from_raw(img.width, img.height, data))
}
