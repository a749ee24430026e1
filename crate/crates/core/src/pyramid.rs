//! High-frequency extraction through a Laplacian pyramid.
//!
//! Each level blurs the current plane with a 3×3 binomial kernel, keeps the
//! residual `curr - blur`, and average-pools the blurred plane for the next
//! level. Residuals of deeper levels are upsampled straight back to the input
//! resolution and summed, so the output has the input's shape and carries
//! almost none of its low-frequency (DC) content.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Separable taps of the 3×3 binomial kernel, `[1, 2, 1] / 4` per axis.
pub const BLUR_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

pub const MIN_LEVELS: u32 = 1;
pub const MAX_LEVELS: u32 = 6;

/// A channel-major `C × H × W` stack of floating-point planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(invalid(format!("empty plane {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(invalid(format!(
                "plane {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("plane contains non-finite values"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Seeded uniform values in `[-1, 1)`, for fixtures and benchmarks.
    pub fn random(channels: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(channels, height, width, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Extracts a single channel as a one-channel plane.
    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    /// Stacks equally-sized planes along the channel axis.
    pub fn stack(planes: &[Plane]) -> Result<Plane> {
        let first = planes.first().ok_or_else(|| invalid("nothing to stack"))?;
        if planes
            .iter()
            .any(|p| p.height != first.height || p.width != first.width)
        {
            return Err(invalid("stacked planes must share height and width"));
        }
        let data: Vec<f64> = planes.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Plane {
            channels: planes.iter().map(|p| p.channels).sum(),
            height: first.height,
            width: first.width,
            data,
        })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Applies `f` to every channel independently, in parallel.
    fn map_channels(
        &self,
        out_h: usize,
        out_w: usize,
        f: impl Fn(&[f64], &mut [f64]) + Sync,
    ) -> Plane {
        let mut out = Plane::zeros(self.channels, out_h, out_w);
        let n_in = self.height * self.width;
        out.data
            .par_chunks_mut(out_h * out_w)
            .zip(self.data.par_chunks(n_in))
            .for_each(|(dst, src)| f(src, dst));
        out
    }
}

/// Interpolation used when bringing a coarse band back to full resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Bilinear with half-pixel centers and edge clamping.
    #[default]
    Bilinear,
    /// Bilinear mapping the corner samples of source and target onto each other.
    BilinearAlignCorners,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PyramidConfig {
    pub levels: u32,
    pub upsample: UpsampleMode,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            upsample: UpsampleMode::Bilinear,
        }
    }
}

impl PyramidConfig {
    pub fn with_levels(levels: u32) -> Self {
        Self {
            levels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_LEVELS..=MAX_LEVELS).contains(&self.levels) {
            return Err(invalid(format!(
                "pyramid levels {} outside {MIN_LEVELS}..={MAX_LEVELS}",
                self.levels
            )));
        }
        Ok(())
    }
}

fn blur_channel(src: &[f64], dst: &mut [f64], h: usize, w: usize) {
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let l = row[x.saturating_sub(1)];
            let r = row[(x + 1).min(w - 1)];
            tmp[y * w + x] = BLUR_TAPS[0] * l + BLUR_TAPS[1] * row[x] + BLUR_TAPS[2] * r;
        }
    }
    for y in 0..h {
        let up = y.saturating_sub(1);
        let down = (y + 1).min(h - 1);
        for x in 0..w {
            dst[y * w + x] = BLUR_TAPS[0] * tmp[up * w + x]
                + BLUR_TAPS[1] * tmp[y * w + x]
                + BLUR_TAPS[2] * tmp[down * w + x];
        }
    }
}

/// 3×3 binomial blur with replicated borders.
pub fn gaussian_blur3(p: &Plane) -> Plane {
    let (h, w) = (p.height, p.width);
    p.map_channels(h, w, |src, dst| blur_channel(src, dst, h, w))
}

fn pool_channel(src: &[f64], dst: &mut [f64], h: usize, w: usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    for oy in 0..oh {
        let y0 = 2 * oy;
        let y1 = (y0 + 1).min(h - 1);
        for ox in 0..ow {
            let x0 = 2 * ox;
            let x1 = (x0 + 1).min(w - 1);
            dst[oy * ow + ox] =
                0.25 * (src[y0 * w + x0] + src[y0 * w + x1] + src[y1 * w + x0] + src[y1 * w + x1]);
        }
    }
}

/// 2×2 average pooling. An odd trailing row or column is replicated first.
pub fn downsample_avg2(p: &Plane) -> Result<Plane> {
    let (h, w) = (p.height, p.width);
    if h < 2 || w < 2 {
        return Err(invalid(format!("cannot pool a {h}x{w} plane")));
    }
    Ok(p.map_channels(h.div_ceil(2), w.div_ceil(2), |src, dst| {
        pool_channel(src, dst, h, w)
    }))
}

/// Source coordinate and blend weight for one target coordinate.
fn sample_axis(dst: usize, n_in: usize, n_out: usize, mode: UpsampleMode) -> (usize, usize, f64) {
    let pos = match mode {
        UpsampleMode::Bilinear | UpsampleMode::Nearest => {
            (dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5
        }
        UpsampleMode::BilinearAlignCorners => {
            if n_out == 1 {
                0.0
            } else {
                dst as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            }
        }
    };
    let pos = pos.clamp(0.0, (n_in - 1) as f64);
    if mode == UpsampleMode::Nearest {
        let i = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize;
        let i = i.min(n_in - 1);
        return (i, i, 0.0);
    }
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, pos - i0 as f64)
}

/// Resamples every channel to `target_h × target_w`, which must not be
/// smaller than the source.
pub fn upsample(p: &Plane, target_h: usize, target_w: usize, mode: UpsampleMode) -> Result<Plane> {
    let (h, w) = (p.height, p.width);
    if target_h < h || target_w < w {
        return Err(invalid(format!(
            "upsample target {target_h}x{target_w} smaller than source {h}x{w}"
        )));
    }
    let ys: Vec<_> = (0..target_h).map(|y| sample_axis(y, h, target_h, mode)).collect();
    let xs: Vec<_> = (0..target_w).map(|x| sample_axis(x, w, target_w, mode)).collect();
    Ok(p.map_channels(target_h, target_w, |src, dst| {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * target_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }))
}

/// Bilinear upsampling back to the pre-pooling size.
pub fn upsample2(p: &Plane, target_h: usize, target_w: usize) -> Result<Plane> {
    upsample(p, target_h, target_w, UpsampleMode::Bilinear)
}

/// Sum of per-level residuals `curr - blur(curr)`, each brought back to the
/// input resolution.
pub fn high_freq_extract(p: &Plane, cfg: &PyramidConfig) -> Result<Plane> {
    cfg.validate()?;
    let min_side = 1usize << cfg.levels;
    if p.height < min_side || p.width < min_side {
        return Err(invalid(format!(
            "{}x{} plane too small for {} pyramid levels (needs {min_side})",
            p.height, p.width, cfg.levels
        )));
    }
    let (h, w) = (p.height, p.width);
    let mut acc = Plane::zeros(p.channels, h, w);
    let mut curr = p.clone();
    for level in 0..cfg.levels {
        let blurred = gaussian_blur3(&curr);
        let mut high = curr;
        high.data
            .iter_mut()
            .zip(&blurred.data)
            .for_each(|(v, b)| *v -= b);
        let band = if level == 0 {
            high
        } else {
            upsample(&high, h, w, cfg.upsample)?
        };
        acc.data.iter_mut().zip(&band.data).for_each(|(a, b)| *a += b);
        if level + 1 == cfg.levels {
            break;
        }
        curr = downsample_avg2(&blurred)?;
    }
    Ok(acc)
}
