//! Training-time augmentation: masked color jitter, raw-domain RGB rescale
//! and mask-preserving random crops.
//!
//! Every random draw goes through a caller-owned [`ChaCha8Rng`] and is
//! returned as a record so a sample can be replayed exactly.

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{LinearImage, Mask, Rect, SrgbImage};
use crate::error::{invalid, Result};

/// Rec. 709 luma weights.
pub const LUMA_709: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub low: f64,
    pub high: f64,
}

impl FactorRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.low > 0.0 && self.low <= self.high && self.high.is_finite()) {
            return Err(invalid(format!(
                "{name} range [{}, {}] needs 0 < low <= high",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..self.high)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterStage {
    Brightness,
    Contrast,
    Saturation,
}

/// Whether the three jitter stages run in the fixed order or are shuffled
/// per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    #[default]
    Fixed,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    pub brightness_range: FactorRange,
    pub contrast_range: FactorRange,
    pub saturation_range: FactorRange,
    pub order: StageOrder,
    pub rng_seed: u64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            brightness_range: FactorRange::new(0.8, 2.0),
            contrast_range: FactorRange::new(0.8, 1.4),
            saturation_range: FactorRange::new(0.8, 1.4),
            order: StageOrder::Fixed,
            rng_seed: 0,
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        self.brightness_range.validate("brightness")?;
        self.contrast_range.validate("contrast")?;
        self.saturation_range.validate("saturation")
    }
}

/// The factors and order one jitter application used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub order: Vec<JitterStage>,
}

impl JitterFactors {
    pub fn identity() -> Self {
        Self {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            order: FIXED_ORDER.to_vec(),
        }
    }

    pub fn sample(cfg: &JitterConfig, rng: &mut ChaCha8Rng) -> Self {
        let brightness = cfg.brightness_range.sample(rng);
        let contrast = cfg.contrast_range.sample(rng);
        let saturation = cfg.saturation_range.sample(rng);
        let mut order = FIXED_ORDER.to_vec();
        if cfg.order == StageOrder::Shuffled {
            order.shuffle(rng);
        }
        Self {
            brightness,
            contrast,
            saturation,
            order,
        }
    }
}

const FIXED_ORDER: [JitterStage; 3] = [
    JitterStage::Brightness,
    JitterStage::Contrast,
    JitterStage::Saturation,
];

#[inline]
fn luma(p: &[f64]) -> f64 {
    LUMA_709[0] * p[0] + LUMA_709[1] * p[1] + LUMA_709[2] * p[2]
}

/// Applies explicit factors inside the mask; the complement is copied
/// bitwise. Values are clamped to `[0, 1]` after every stage.
pub fn apply_masked_jitter(img: &SrgbImage, mask: &Mask, f: &JitterFactors) -> Result<SrgbImage> {
    if img.dims() != mask.dims() {
        return Err(invalid("jitter mask dimensions differ from the image"));
    }
    let idx: Vec<usize> = mask
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m != 0).then_some(i))
        .collect();
    if idx.is_empty() {
        return Ok(img.clone());
    }
    // Work on a compact copy of the masked pixels only.
    let mut px: Vec<[f64; 3]> = idx
        .iter()
        .map(|&i| {
            let d = &img.data()[3 * i..3 * i + 3];
            [d[0], d[1], d[2]]
        })
        .collect();
    for stage in &f.order {
        match stage {
            JitterStage::Brightness => {
                for p in &mut px {
                    *p = p.map(|v| (v * f.brightness).clamp(0.0, 1.0));
                }
            }
            JitterStage::Contrast => {
                let mean = px.iter().map(|p| luma(p)).sum::<f64>() / px.len() as f64;
                for p in &mut px {
                    *p = p.map(|v| ((v - mean) * f.contrast + mean).clamp(0.0, 1.0));
                }
            }
            JitterStage::Saturation => {
                for p in &mut px {
                    let l = luma(p);
                    *p = p.map(|v| (l + (v - l) * f.saturation).clamp(0.0, 1.0));
                }
            }
        }
    }
    let mut data = img.data().to_vec();
    for (&i, p) in idx.iter().zip(&px) {
        data[3 * i..3 * i + 3].copy_from_slice(p);
    }
    Ok(SrgbImage::from_raw(img.width(), img.height(), data))
}

/// `(1 - M)·I + M·T(I)` with factors drawn from `cfg`.
pub fn masked_color_jitter(
    img: &SrgbImage,
    mask: &Mask,
    cfg: &JitterConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SrgbImage, JitterFactors)> {
    cfg.validate()?;
    let factors = JitterFactors::sample(cfg, rng);
    Ok((apply_masked_jitter(img, mask, &factors)?, factors))
}

/// Masked jitter for sample `index` of a run seeded with `cfg.rng_seed`;
/// each index gets its own reproducible stream.
pub fn seeded_masked_jitter(
    img: &SrgbImage,
    mask: &Mask,
    cfg: &JitterConfig,
    index: u64,
) -> Result<(SrgbImage, JitterFactors)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    rng.set_stream(index);
    masked_color_jitter(img, mask, cfg, &mut rng)
}

/// Per-channel multiplication in the linear domain.
pub fn global_rgb_rescale(img: &LinearImage, factors: [f64; 3]) -> Result<LinearImage> {
    if factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(invalid(format!("rescale factors {factors:?} must be positive")));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|p| [p[0] * factors[0], p[1] * factors[1], p[2] * factors[2]])
        .collect();
    Ok(LinearImage::from_raw(img.width(), img.height(), data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub p_crop: f64,
    /// Crop side as a fraction of the original side, per axis.
    pub crop_scale_range: FactorRange,
    pub p_color: f64,
    pub rgb_rescale_range: FactorRange,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_crop: 0.5,
            crop_scale_range: FactorRange::new(0.6, 1.0),
            p_color: 0.5,
            rgb_rescale_range: FactorRange::new(0.6, 1.4),
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_crop", self.p_crop), ("p_color", self.p_color)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} = {p} is not a probability")));
            }
        }
        self.crop_scale_range.validate("crop_scale")?;
        if self.crop_scale_range.high > 1.0 {
            return Err(invalid("crop scale cannot exceed 1"));
        }
        self.rgb_rescale_range.validate("rgb_rescale")
    }

    pub fn sample_rgb_factors(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        [(); 3].map(|_| self.rgb_rescale_range.sample(rng))
    }
}

/// Crop of the image and mask. `None` when no crop was applied.
pub fn random_crop<T: Croppable>(
    img: &T,
    mask: &Mask,
    policy: &AugmentPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(T, Mask, Option<Rect>)> {
    policy.validate()?;
    if img.dims() != mask.dims() {
        return Err(invalid("crop mask dimensions differ from the image"));
    }
    let skip = || Ok((img.clone(), mask.clone(), None));
    if rng.random::<f64>() >= policy.p_crop {
        return skip();
    }
    let (w, h) = img.dims();
    let scale = policy.crop_scale_range.sample(rng);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let bbox = mask.bbox().unwrap_or(Rect::new(0, 0, 0, 0));
    if bbox.width() > cw || bbox.height() > ch {
        debug!(
            "skipping crop: {cw}x{ch} window cannot hold mask box {}x{}",
            bbox.width(),
            bbox.height()
        );
        return skip();
    }
    // Offsets keeping the mask box inside the window.
    let x_lo = bbox.x1.saturating_sub(cw);
    let x_hi = if mask.count() == 0 { w - cw } else { bbox.x0.min(w - cw) };
    let y_lo = bbox.y1.saturating_sub(ch);
    let y_hi = if mask.count() == 0 { h - ch } else { bbox.y0.min(h - ch) };
    let x0 = rng.random_range(x_lo..=x_hi);
    let y0 = rng.random_range(y_lo..=y_hi);
    let rect = Rect::new(x0, y0, x0 + cw, y0 + ch);
    Ok((img.crop_to(rect)?, mask.crop(rect)?, Some(rect)))
}

/// Images that [`random_crop`] can cut.
pub trait Croppable: Clone {
    fn dims(&self) -> (usize, usize);
    fn crop_to(&self, rect: Rect) -> Result<Self>;
}

impl<D: crate::color::Domain> Croppable for crate::color::Image<D> {
    fn dims(&self) -> (usize, usize) {
        crate::color::Image::dims(self)
    }
    fn crop_to(&self, rect: Rect) -> Result<Self> {
        self.crop(rect)
    }
}

/// One line of the augmentation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub sample_id: String,
    pub seed: u64,
    pub crop: Option<Rect>,
    pub rgb_factors: Option<[f64; 3]>,
    pub jitter: Option<JitterFactors>,
}

/// Full augmentation of one training sample: crop, raw-domain rescale,
/// gamma encoding, then masked jitter.
pub fn augment_sample(
    sample_id: &str,
    img: &LinearImage,
    mask: &Mask,
    policy: &AugmentPolicy,
    jitter: &JitterConfig,
    gamma: f64,
    seed: u64,
) -> Result<(SrgbImage, Mask, AugmentRecord)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (img, mask, crop) = random_crop(img, mask, policy, &mut rng)?;
    let rgb_factors = policy.sample_rgb_factors(&mut rng);
    let img = global_rgb_rescale(&img, rgb_factors)?;
    let srgb = crate::color::gamma_encode(&img, gamma)?;
    let (out, jitter_factors) = if rng.random::<f64>() < policy.p_color {
        let (o, f) = masked_color_jitter(&srgb, &mask, jitter, &mut rng)?;
        (o, Some(f))
    } else {
        (srgb, None)
    };
    let record = AugmentRecord {
        sample_id: sample_id.to_owned(),
        seed,
        crop,
        rgb_factors: Some(rgb_factors),
        jitter: jitter_factors,
    };
    Ok((out, mask, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gradient(w: usize, h: usize) -> SrgbImage {
        SrgbImage::from_fn(w, h, |x, y| {
            [x as f64 / w as f64, y as f64 / h as f64, 0.5]
        })
        .unwrap()
    }

    #[test]
    fn empty_mask_is_identity() {
        let img = gradient(16, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (out, _) = masked_color_jitter(&img, &Mask::empty(16, 12), &JitterConfig::default(), &mut rng).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn identity_factors() {
        let img = gradient(16, 12);
        let mask = Mask::from_rect(16, 12, Rect::new(2, 2, 10, 9)).unwrap();
        let out = apply_masked_jitter(&img, &mask, &JitterFactors::identity()).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn brightness_doubles_and_clamps() {
        let img = SrgbImage::new(2, 1, vec![0.3, 0.3, 0.3, 0.7, 0.7, 0.7]).unwrap();
        let mask = Mask::new(2, 1, vec![1, 1]).unwrap();
        let f = JitterFactors {
            brightness: 2.0,
            ..JitterFactors::identity()
        };
        let out = apply_masked_jitter(&img, &mask, &f).unwrap();
        assert!((out.pixel(0, 0)[0] - 0.6).abs() < 1e-12);
        assert_eq!(out.pixel(1, 0)[0], 1.0);
    }

    #[test]
    fn saturation_zero_gives_luma_gray() {
        let img = SrgbImage::new(1, 1, vec![0.2, 0.6, 0.4]).unwrap();
        let mask = Mask::new(1, 1, vec![1]).unwrap();
        let f = JitterFactors {
            saturation: 0.0,
            ..JitterFactors::identity()
        };
        let out = apply_masked_jitter(&img, &mask, &f).unwrap();
        let l = 0.2126 * 0.2 + 0.7152 * 0.6 + 0.0722 * 0.4;
        for v in out.pixel(0, 0) {
            assert!((v - l).abs() < 1e-12);
        }
    }

    #[test]
    fn contrast_pivots_on_masked_mean_luma() {
        let img = SrgbImage::new(2, 1, vec![0.2, 0.2, 0.2, 0.6, 0.6, 0.6]).unwrap();
        let mask = Mask::new(2, 1, vec![1, 1]).unwrap();
        let f = JitterFactors {
            contrast: 0.5,
            ..JitterFactors::identity()
        };
        let out = apply_masked_jitter(&img, &mask, &f).unwrap();
        assert!((out.pixel(0, 0)[0] - 0.3).abs() < 1e-12);
        assert!((out.pixel(1, 0)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rgb_rescale_cases() {
        let img = LinearImage::new(1, 1, vec![1.0, 0.5, 0.5]).unwrap();
        let out = global_rgb_rescale(&img, [0.6, 1.0, 1.0]).unwrap();
        assert_eq!(out.pixel(0, 0), [0.6, 0.5, 0.5]);
        assert_eq!(global_rgb_rescale(&img, [1.0; 3]).unwrap(), img);
        assert!(global_rgb_rescale(&img, [0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn crop_scale_one_is_identity() {
        let img = gradient(20, 10);
        let mask = Mask::from_rect(20, 10, Rect::new(4, 2, 9, 6)).unwrap();
        let policy = AugmentPolicy {
            p_crop: 1.0,
            crop_scale_range: FactorRange::new(1.0, 1.0),
            ..AugmentPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, m, rect) = random_crop(&img, &mask, &policy, &mut rng).unwrap();
        assert_eq!(rect, Some(Rect::new(0, 0, 20, 10)));
        assert_eq!(out, img);
        assert_eq!(m, mask);
    }

    #[test]
    fn crop_skips_when_mask_does_not_fit() {
        let img = gradient(20, 20);
        let mask = Mask::from_rect(20, 20, Rect::new(0, 0, 18, 18)).unwrap();
        let policy = AugmentPolicy {
            p_crop: 1.0,
            crop_scale_range: FactorRange::new(0.5, 0.5),
            ..AugmentPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (out, _, rect) = random_crop(&img, &mask, &policy, &mut rng).unwrap();
        assert!(rect.is_none());
        assert_eq!(out, img);
    }

    #[test]
    fn config_validation() {
        let mut cfg = JitterConfig::default();
        cfg.brightness_range = FactorRange::new(2.0, 1.0);
        assert!(cfg.validate().is_err());
        let p = AugmentPolicy {
            p_color: 1.5,
            ..AugmentPolicy::default()
        };
        assert!(p.validate().is_err());
    }
}
