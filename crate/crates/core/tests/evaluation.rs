use checkerlight_core::baselines::{BaselineConfig, BaselineMethod};
use checkerlight_core::dataset::{load_image_linear, load_manifest, read_rgb, DatasetManifest};
use checkerlight_core::eval::{emit_report, run_protocol, BaselineEstimator, ProtocolKind, Report, RunOptions};
use checkerlight_core::synth::write_dataset;
use checkerlight_core::Error;
use serde_json::json;

const CAMERAS: [&str; 3] = ["canon", "nikon", "sony"];

fn gray_world() -> BaselineEstimator {
    BaselineEstimator::new(BaselineConfig::for_method(BaselineMethod::GrayWorld))
}

fn run_once(m: &DatasetManifest, kind: ProtocolKind, seed: u64, out: &std::path::Path) -> Vec<Vec<u8>> {
    let est = gray_world();
    let res = run_protocol(kind, seed, &est, None, m, RunOptions::default()).unwrap();
    let report = Report::new(&res, json!({"estimator": "gray_world"}), None, m).unwrap();
    let files = emit_report(&res, &report, out).unwrap();
    [files.report_json, files.per_image_csv, files.stats_csv]
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), "synthetic", 12, &CAMERAS, 1).unwrap();
    for kind in [ProtocolKind::ThreeFold, ProtocolKind::LeaveOneOutCamera, ProtocolKind::CrossDataset] {
        let a = run_once(&m, kind, 7, &dir.path().join("a"));
        let b = run_once(&m, kind, 7, &dir.path().join("b"));
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn manifest_order_does_not_matter() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), "synthetic", 9, &CAMERAS, 2).unwrap();
    let mut rev = m.clone();
    rev.entries.reverse();
    let a = run_once(&m, ProtocolKind::ThreeFold, 3, &dir.path().join("a"));
    let b = run_once(&rev, ProtocolKind::ThreeFold, 3, &dir.path().join("b"));
    assert_eq!(a[1], b[1]);
    assert_eq!(a[2], b[2]);
}

#[test]
fn splits_cover_the_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), "synthetic", 12, &CAMERAS, 3).unwrap();
    let est = gray_world();
    let loo = run_protocol(ProtocolKind::LeaveOneOutCamera, 0, &est, None, &m, RunOptions::default()).unwrap();
    let names: Vec<_> = loo.splits.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["camera=canon", "camera=nikon", "camera=sony"]);
    assert!(loo.splits.iter().all(|s| s.n_test == 4 && s.n_train == 8));
    let tf = run_protocol(ProtocolKind::ThreeFold, 0, &est, None, &m, RunOptions::default()).unwrap();
    assert_eq!(tf.splits.iter().map(|s| s.n_test).sum::<usize>(), 12);
    // Gray-mean scenes are nearly ideal for gray world.
    assert!(tf.stats.mean < 1.0, "{}", tf.stats.mean);
}

#[test]
fn too_many_missing_images_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(dir.path(), "synthetic", 20, &CAMERAS, 4).unwrap();
    std::fs::remove_file(dir.path().join("img_0003.png")).unwrap();
    let res = run_protocol(ProtocolKind::ThreeFold, 0, &gray_world(), None, &m, RunOptions::default()).unwrap();
    assert_eq!(res.missing, ["img_0003"]);
    std::fs::remove_file(dir.path().join("img_0004.png")).unwrap();
    let err = run_protocol(ProtocolKind::ThreeFold, 0, &gray_world(), None, &m, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
}

#[test]
fn sixteen_bit_ingest_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), "synthetic", 2, &CAMERAS, 5).unwrap();
    let m = load_manifest(&dir.path().join("manifest.json")).unwrap();
    m.validate(true).unwrap();
    let e = &m.entries[0];
    let img = load_image_linear(&m, e).unwrap();
    let raw = read_rgb(&m.image_path(e)).unwrap();
    assert_eq!(raw.bit_depth, 16);
    for (a, b) in img.data().iter().zip(&raw.data) {
        assert!((a - b).abs() <= 1.0 / 65535.0);
        assert!(((a * 65535.0).round() - a * 65535.0).abs() < 1e-6);
    }
}
