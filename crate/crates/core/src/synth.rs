//! Deterministic synthetic scenes for tests, benchmarks and demos.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{Illuminant, LinearImage};
use crate::dataset::{save_png16, DatasetManifest, ManifestEntry};
use crate::error::Result;

/// Blocky colored texture with values in `[lo, hi]`, 8×8 blocks plus
/// per-pixel grain.
pub fn textured_scene(width: usize, height: usize, lo: f64, hi: f64, seed: u64) -> LinearImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = width.div_ceil(8);
    let bh = height.div_ceil(8);
    let blocks: Vec<[f64; 3]> = (0..bw * bh)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.15..0.85)))
        .collect();
    LinearImage::from_fn(width, height, |x, y| {
        let b = blocks[(y / 8) * bw + x / 8];
        b.map(|v| {
            let t = (0.85 * v + 0.15 * rng.random::<f64>()).clamp(0.0, 1.0);
            lo + (hi - lo) * t
        })
    })
    .expect("finite scene")
}

/// Scene whose per-channel surface mean is exactly gray (0.4), lit by
/// `illum` scaled so its largest component is 1. Pixels come in
/// complementary pairs `r`, `0.8 - r`.
pub fn gray_mean_scene(width: usize, height: usize, illum: &Illuminant, seed: u64) -> LinearImage {
    assert!((width * height) & 1 == 0, "gray_mean_scene needs an even pixel count");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = peak_one(illum);
    let half = width * height / 2;
    let refl: Vec<[f64; 3]> = (0..half)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.05..0.75)))
        .collect();
    LinearImage::from_fn(width, height, |x, y| {
        let i = y * width + x;
        let r = if i < half { refl[i] } else { refl[i - half].map(|v| 0.8 - v) };
        [r[0] * l[0], r[1] * l[1], r[2] * l[2]]
    })
    .expect("finite scene")
}

/// Gray reflectance ramp over a constant colored tint, lit by `illum`.
/// Every spatial derivative is proportional to the light while the
/// pixel mean is biased by the tint.
pub fn tinted_ramp_scene(width: usize, height: usize, illum: &Illuminant, tint: [f64; 3]) -> LinearImage {
    let l = peak_one(illum);
    LinearImage::from_fn(width, height, |x, y| {
        let a = 0.1 + 0.25 * (1.0 + (x as f64 / 5.0).sin() * (y as f64 / 7.0).cos());
        std::array::from_fn(|c| (a + tint[c]) * l[c])
    })
    .expect("finite scene")
}

/// Uniformly random light with every normalized component in `[lo, hi]`
/// before normalization.
pub fn random_illuminant(rng: &mut impl Rng, lo: f64, hi: f64) -> Illuminant {
    let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(lo..hi));
    Illuminant::new(v[0], v[1], v[2]).expect("positive light")
}

/// `n` lights from [`random_illuminant`] with a seeded generator.
pub fn random_illuminants(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<Illuminant> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_illuminant(&mut rng, lo, hi)).collect()
}

/// Writes `n` gray-mean scenes as 16-bit PNGs under `dir`, spread
/// round-robin over `cameras`, and returns the manifest (also saved as
/// `dir/manifest.json`). Each entry has a checker box in its top-left
/// corner.
pub fn write_dataset(dir: &Path, name: &str, n: usize, cameras: &[&str], seed: u64) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (64, 48);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let gt = random_illuminant(&mut rng, 0.3, 1.0);
        let img = gray_mean_scene(w, h, &gt, seed.wrapping_mul(1000).wrapping_add(i as u64));
        let file = format!("img_{i:04}.png");
        save_png16(&img, &dir.join(&file))?;
        let mut e = ManifestEntry::new(&file, cameras[i % cameras.len()], gt.rgb());
        e.checker_bbox = Some([2, 2, 20, 14]);
        e.bit_depth = Some(16);
        entries.push(e);
    }
    let mut m = DatasetManifest::new(name, entries);
    m.base_dir = dir.to_path_buf();
    m.save(&dir.join("manifest.json"))?;
    Ok(m)
}

fn peak_one(illum: &Illuminant) -> [f64; 3] {
    let rgb = illum.rgb();
    let m = rgb.iter().cloned().fold(0.0, f64::max);
    rgb.map(|v| v / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_mean_is_exact() {
        let l = Illuminant::new(0.8, 0.5, 0.3).unwrap();
        let img = gray_mean_scene(10, 6, &l, 1);
        let mut sum = [0.0; 3];
        for p in img.pixels() {
            for c in 0..3 {
                sum[c] += p[c];
            }
        }
        let est = Illuminant::new(sum[0], sum[1], sum[2]).unwrap();
        assert!(est.angle_to(&l) < 1e-9);
    }

    #[test]
    fn scenes_are_deterministic() {
        assert_eq!(textured_scene(17, 9, 0.1, 0.5, 3), textured_scene(17, 9, 0.1, 0.5, 3));
        assert_ne!(textured_scene(17, 9, 0.1, 0.5, 3), textured_scene(17, 9, 0.1, 0.5, 4));
    }
}
