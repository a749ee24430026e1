use checkerlight_core::baselines::{estimate_baseline, BaselineConfig, BaselineMethod};
use checkerlight_core::color::{Illuminant, LinearImage};
use checkerlight_core::synth::{gray_mean_scene, random_illuminant, textured_scene, tinted_ramp_scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(m: BaselineMethod) -> BaselineConfig {
    BaselineConfig::for_method(m)
}

#[test]
fn gray_world_is_the_naive_mean() {
    let img = textured_scene(40, 30, 0.05, 0.9, 2);
    let mut s = [0.0f64; 3];
    for y in 0..30 {
        for x in 0..40 {
            let p = img.pixel(x, y);
            for c in 0..3 {
                s[c] += p[c];
            }
        }
    }
    let n = (40 * 30) as f64;
    let naive = Illuminant::new(s[0] / n, s[1] / n, s[2] / n).unwrap();
    assert_eq!(estimate_baseline(&img, &cfg(BaselineMethod::GrayWorld)).unwrap(), naive);
}

#[test]
fn shades_of_gray_p1_is_gray_world() {
    let img = textured_scene(33, 21, 0.05, 0.9, 8);
    let mut sog = cfg(BaselineMethod::ShadesOfGray);
    sog.minkowski_p = 1.0;
    assert_eq!(
        estimate_baseline(&img, &sog).unwrap(),
        estimate_baseline(&img, &cfg(BaselineMethod::GrayWorld)).unwrap()
    );
}

#[test]
fn large_p_approaches_white_patch() {
    for seed in 0..5 {
        let img = textured_scene(64, 48, 0.05, 0.9, seed);
        let mut sog = cfg(BaselineMethod::ShadesOfGray);
        sog.minkowski_p = 100.0;
        let a = estimate_baseline(&img, &sog).unwrap();
        let b = estimate_baseline(&img, &cfg(BaselineMethod::WhitePatch)).unwrap();
        assert!(a.angle_to(&b) <= 0.5, "{}", a.angle_to(&b));
    }
}

#[test]
fn gray_mean_scenes_recover_the_light() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..20 {
        let l = random_illuminant(&mut rng, 0.3, 1.0);
        let img = gray_mean_scene(40, 30, &l, seed);
        let e = estimate_baseline(&img, &cfg(BaselineMethod::GrayWorld)).unwrap();
        assert!(e.angle_to(&l) <= 0.1);
    }
}

#[test]
fn gray_edge_sees_through_the_tint() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let l = random_illuminant(&mut rng, 0.3, 1.0);
        let img = tinted_ramp_scene(64, 48, &l, [0.3, 0.05, 0.1]);
        for m in [BaselineMethod::GrayEdge1, BaselineMethod::GrayEdge2] {
            let e = estimate_baseline(&img, &cfg(m)).unwrap();
            assert!(e.angle_to(&l) <= 0.1, "{m:?}: {}", e.angle_to(&l));
        }
        let gw = estimate_baseline(&img, &cfg(BaselineMethod::GrayWorld)).unwrap();
        assert!(gw.angle_to(&l) > 1.0, "tint should bias gray world");
    }
}

#[test]
fn every_method_is_exposure_invariant() {
    let img = textured_scene(48, 36, 0.05, 0.45, 12);
    for m in BaselineMethod::ALL {
        let base = estimate_baseline(&img, &cfg(m)).unwrap();
        for k in [0.25, 0.5, 2.0] {
            let scaled: LinearImage = img.scaled(k).unwrap();
            let e = estimate_baseline(&scaled, &cfg(m)).unwrap();
            assert!(base.angle_to(&e) < 1e-6, "{m:?} k={k}");
        }
    }
}
