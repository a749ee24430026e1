use checkerlight_core::color::{
    angular_error, apply_white_balance, gamma_decode, gamma_encode, normalize_illuminant, Illuminant, LinearImage,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gamma_round_trip_ten_thousand_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vals: Vec<f64> = (0..10_001).map(|_| rng.random::<f64>()).chain([1.0]).collect();
    let img = LinearImage::new(vals.len() / 3, 1, vals.clone()).unwrap();
    for gamma in [1.0, 2.2, 2.4] {
        let back = gamma_decode(&gamma_encode(&img, gamma).unwrap(), gamma).unwrap();
        let worst = back.data().iter().zip(&vals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "gamma {gamma}: {worst}");
    }
}

#[test]
fn worked_angles() {
    assert!(angular_error([1.0, 1.0, 1.0], [2.0, 2.0, 2.0]).unwrap().abs() < 1e-9);
    assert!((angular_error([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap() - 90.0).abs() < 1e-9);
    assert!((angular_error([1.0, 1.0, 0.0], [0.0, 1.0, 1.0]).unwrap() - 60.0).abs() < 1e-9);
    assert!(angular_error([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).is_err());
}

#[test]
fn normalization_examples() {
    let a = normalize_illuminant([3.0, 4.0, 0.0001]).unwrap().rgb();
    assert!((a[0] - 0.6).abs() < 1e-6 && (a[1] - 0.8).abs() < 1e-6);
    let n = normalize_illuminant([1.0, 1.0, 1.0]).unwrap().rgb();
    assert!(n.iter().all(|v| (v - 1.0 / 3f64.sqrt()).abs() < 1e-12));
    assert!(normalize_illuminant([1.0, -1.0, 1.0]).is_err());
}

#[test]
fn white_balance_neutralizes_the_light() {
    let l = Illuminant::new(0.7, 0.5, 0.2).unwrap();
    let img = LinearImage::filled(2, 2, l.rgb()).unwrap();
    let wb = apply_white_balance(&img, &l).unwrap();
    for p in wb.pixels() {
        assert!((p[0] - p[1]).abs() < 1e-6 && (p[2] - p[1]).abs() < 1e-6);
    }
}

fn positive3() -> impl Strategy<Value = [f64; 3]> {
    [0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0]
}

proptest! {
    #[test]
    fn angular_error_is_symmetric_and_scale_free(a in positive3(), b in positive3(), k in 0.01f64..100.0) {
        let ab = angular_error(a, b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - angular_error(b, a).unwrap()).abs() < 1e-9);
        prop_assert!((ab - angular_error(a.map(|v| v * k), b).unwrap()).abs() < 1e-9);
        prop_assert!((ab - angular_error(a, b.map(|v| v / k)).unwrap()).abs() < 1e-9);
        prop_assert!(angular_error(a, a.map(|v| v * k)).unwrap() < 1e-9);
    }

    #[test]
    fn normalized_lights_are_unit(a in positive3()) {
        let n = normalize_illuminant(a).unwrap().rgb();
        prop_assert!((n.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }
}
