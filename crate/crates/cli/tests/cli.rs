use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use checkerlight_core::color::Illuminant;
use checkerlight_core::dataset::save_png16;
use checkerlight_core::synth::{textured_scene, write_dataset};
use checkerlight_core::tensor::GoldenTensor;

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_checkerlight"))
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn cli")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scene(dir: &Path) -> String {
    let p = dir.join("scene.png");
    save_png16(&textured_scene(160, 120, 0.05, 0.8, 1), &p).unwrap();
    p.to_str().unwrap().to_owned()
}

fn parse_illuminant(out: &str) -> Illuminant {
    let line = out.lines().find(|l| l.starts_with("illuminant ")).expect("illuminant line");
    let v: Vec<f64> = line.split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect();
    Illuminant::new(v[0], v[1], v[2]).unwrap()
}

#[test]
fn estimate_with_fixed_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let diag = dir.path().join("diag.json");
    let wb = dir.path().join("wb.png");
    let o = run(&[
        "estimate",
        &img,
        "--oracle",
        "0.6,0.5,0.3",
        "--gt",
        "0.6,0.5,0.3",
        "--diagnostics",
        diag.to_str().unwrap(),
        "--wb-out",
        wb.to_str().unwrap(),
        "--debug-dir",
        dir.path().join("dbg").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = parse_illuminant(&stdout(&o));
    assert!(est.angle_to(&Illuminant::new(0.6, 0.5, 0.3).unwrap()) < 0.1);
    let d: serde_json::Value = serde_json::from_slice(&std::fs::read(diag).unwrap()).unwrap();
    assert!(d["config_hash"].is_string());
    assert!(d["diagnostics"]["timings"].is_null());
    assert!(wb.is_file());
    for f in ["composited.png", "inpainted.png", "samples.png"] {
        assert!(dir.path().join("dbg").join(f).is_file(), "{f}");
    }
}

#[test]
fn sweep_writes_scatter_csv() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let csv = dir.path().join("sweep.csv");
    let o = run(&["estimate", &img, "--sweep", "3x3", "--sweep-width", "40", "--sweep-out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert_eq!(text.lines().count(), 1 + 1 + 9);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    assert_eq!(run(&["estimate"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", &img, "--oracle", "1,2"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "/nonexistent.png"]).status.code(), Some(2));
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"spatail": {}}"#).unwrap();
    assert_eq!(run(&["--config", bad_cfg.to_str().unwrap(), "estimate", &img]).status.code(), Some(1));
    let o = run(&["estimate", &img, "--backend", "stdio:sh -c exit", "--timeout-ms", "5000"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn stdio_mock_subprocess_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let backend = format!("stdio:{} serve-mock --oracle 0.3,0.5,0.8", bin().display());
    let o = run(&["estimate", &img, "--backend", &backend]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = parse_illuminant(&stdout(&o));
    assert!(est.angle_to(&Illuminant::new(0.3, 0.5, 0.8).unwrap()) < 0.1);
}

#[test]
fn http_mock_server_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let mut server = Command::new(bin())
        .args(["serve-mock", "--oracle", "0.8,0.5,0.3", "--transport", "http:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("listening line").to_owned();
    let o = run(&["estimate", &img, "--backend", &url]);
    server.kill().ok();
    server.wait().ok();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = parse_illuminant(&stdout(&o));
    assert!(est.angle_to(&Illuminant::new(0.8, 0.5, 0.3).unwrap()) < 0.1);
}

#[test]
fn transcript_replay_matches_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let t = dir.path().join("t.jsonl");
    let (da, db) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let live = run(&[
        "estimate",
        &img,
        "--oracle",
        "0.5,0.5,0.4",
        "--record-transcript",
        t.to_str().unwrap(),
        "--diagnostics",
        da.to_str().unwrap(),
    ]);
    assert!(live.status.success());
    let replay = run(&[
        "estimate",
        &img,
        "--oracle",
        "0.5,0.5,0.4",
        "--replay-transcript",
        t.to_str().unwrap(),
        "--diagnostics",
        db.to_str().unwrap(),
    ]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    assert_eq!(stdout(&live), stdout(&replay));
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("config_hash");
        v
    };
    assert_eq!(strip(&da), strip(&db));
}

#[test]
fn spatial_writes_map_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let map = dir.path().join("map.gten");
    let o = run(&[
        "spatial",
        &img,
        "--oracle",
        "split:0.9,0.6,0.3:0.3,0.6,0.9",
        "--grid",
        "2x4",
        "--map-out",
        map.to_str().unwrap(),
        "--viz-out",
        dir.path().join("viz.png").to_str().unwrap(),
        "--cells-out",
        dir.path().join("cells.json").to_str().unwrap(),
        "--gt-map",
        map.to_str().unwrap(),
    ]);
    // The map file is written before it is read back as ground truth.
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("cells_valid 8/8"), "{out}");
    // The stored map is f32, so the self-comparison is only near zero.
    let mae: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("map_mae_deg "))
        .expect("mae line")
        .parse()
        .unwrap();
    assert!(mae < 1e-3, "{mae}");
    let t = GoldenTensor::read(&map).unwrap();
    assert_eq!(t.plane.shape(), (3, 120, 160));
}

#[test]
fn whitebalance_and_augment() {
    let dir = tempfile::tempdir().unwrap();
    let img = scene(dir.path());
    let wb = dir.path().join("wb.png");
    assert!(run(&["whitebalance", &img, "--illum", "0.6,0.5,0.3", "--out", wb.to_str().unwrap()])
        .status
        .success());
    let aug = dir.path().join("aug.png");
    let o = run(&["augment", &img, "--mask", "10,10,60,50", "--count", "3", "--seed", "4", "--out", aug.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["samples"].as_array().unwrap().len(), 3);
    for i in 0..3 {
        assert!(dir.path().join(format!("aug_{i}.png")).is_file());
    }
}

#[test]
fn baseline_and_evaluate_over_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&dir.path().join("d"), "tiny", 9, &["x", "y", "z"], 3).unwrap();
    let manifest = dir.path().join("d/manifest.json");
    let o = run(&["baseline", "--manifest", manifest.to_str().unwrap(), "--method", "shades_of_gray", "--p", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    assert!(csv.starts_with("# config_hash="));
    assert_eq!(csv.lines().count(), 2 + 9);

    let out = dir.path().join("report");
    let o = run(&[
        "evaluate",
        "--protocol",
        "loo",
        "--manifest",
        manifest.to_str().unwrap(),
        "--estimator",
        "baseline:gray_edge_1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["splits"].as_array().unwrap().len(), 3);
    assert_eq!(report["conventions"]["quantile"], "type7_linear");
}

#[test]
fn pyramid_generates_and_extracts() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in.gten"), dir.path().join("out.gten"));
    let o = run(&[
        "pyramid",
        input.to_str().unwrap(),
        "--generate",
        "4x16x16",
        "--levels",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = GoldenTensor::read(&out).unwrap();
    assert_eq!(t.plane.shape(), (4, 16, 16));
    assert_eq!(t.levels, 2);
}
