use checkerlight_core::augment::{apply_masked_jitter, seeded_masked_jitter, JitterConfig, JitterFactors};
use checkerlight_core::color::{gamma_encode, Mask, Rect, SrgbImage};
use checkerlight_core::synth::textured_scene;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene() -> SrgbImage {
    gamma_encode(&textured_scene(48, 40, 0.02, 0.98, 9), 2.2).unwrap()
}

#[test]
fn complement_is_bitwise_unchanged() {
    let img = scene();
    for trial in 0..100u64 {
        let x0 = (trial as usize * 7) % 30;
        let y0 = (trial as usize * 5) % 25;
        let mask = Mask::from_rect(48, 40, Rect::new(x0, y0, x0 + 12, y0 + 9)).unwrap();
        let cfg = JitterConfig {
            rng_seed: trial,
            ..JitterConfig::default()
        };
        let (out, _) = seeded_masked_jitter(&img, &mask, &cfg, trial).unwrap();
        for y in 0..40 {
            for x in 0..48 {
                if !mask.get(x, y) {
                    let (a, b) = (out.pixel(x, y), img.pixel(x, y));
                    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
        }
    }
}

#[test]
fn identity_factors_are_identity() {
    let img = scene();
    let mask = Mask::from_rect(48, 40, Rect::new(5, 5, 30, 30)).unwrap();
    let out = apply_masked_jitter(&img, &mask, &JitterFactors::identity()).unwrap();
    let worst = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6);
}

#[test]
fn same_seed_same_output() {
    let img = scene();
    let mask = Mask::from_rect(48, 40, Rect::new(10, 10, 20, 20)).unwrap();
    let cfg = JitterConfig::default();
    assert_eq!(
        seeded_masked_jitter(&img, &mask, &cfg, 3).unwrap(),
        seeded_masked_jitter(&img, &mask, &cfg, 3).unwrap()
    );
}

/// One-sample Kolmogorov-Smirnov statistic against U(lo, hi).
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn factors_are_uniform_over_ranges() {
    let cfg = JitterConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let draws: Vec<JitterFactors> = (0..10_000).map(|_| JitterFactors::sample(&cfg, &mut rng)).collect();
    // Critical value for p = 0.01 is 1.628 / sqrt(n).
    let crit = 1.628 / (draws.len() as f64).sqrt();
    let checks = [
        (draws.iter().map(|f| f.brightness).collect::<Vec<_>>(), cfg.brightness_range),
        (draws.iter().map(|f| f.contrast).collect(), cfg.contrast_range),
        (draws.iter().map(|f| f.saturation).collect(), cfg.saturation_range),
    ];
    for (xs, r) in checks {
        let d = ks_uniform(xs, r.low, r.high);
        assert!(d < crit, "D = {d}, critical {crit}");
    }
}
