use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use checkerlight_core::color::{gamma_encode, Illuminant, Mask, Rect, SrgbImage};
use checkerlight_core::engine::{estimate_single, EstimateConfig};
use checkerlight_core::protocol::{decode_rgb16_png, encode_rgb16_png};
use checkerlight_core::protocol::mock::{MockBackend, OracleConfig};
use checkerlight_core::protocol::server::serve_http;
use checkerlight_core::protocol::transcript::{RecordingBackend, ReplayBackend};
use checkerlight_core::protocol::{
    check_response, decode_request, decode_response, encode_request, BackendRequest, Endpoint, InpaintBackend,
    RequestConfig,
};
use checkerlight_core::synth::textured_scene;
use checkerlight_core::{Error, ProtocolError};
use serde_json::Value;

fn request(id: &str) -> BackendRequest {
    let img = gamma_encode(&textured_scene(40, 32, 0.05, 0.9, 1), 2.2).unwrap();
    let mask = Mask::from_rect(40, 32, Rect::new(10, 8, 30, 24)).unwrap();
    BackendRequest::new(id, img, mask, RequestConfig::default()).unwrap()
}

fn fixed_mock() -> MockBackend {
    MockBackend::new(OracleConfig::fixed(Illuminant::new(0.6, 0.5, 0.3).unwrap()))
}

#[test]
fn png_round_trip_within_one_code() {
    let img = gamma_encode(&textured_scene(37, 23, 0.0, 1.0, 5), 2.2).unwrap();
    let back = decode_rgb16_png(&encode_rgb16_png(&img).unwrap()).unwrap();
    let worst = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 65535.0);
}

#[test]
fn envelope_round_trip() {
    let req = request("abc");
    let back = decode_request(&encode_request(&req).unwrap()).unwrap();
    assert_eq!(back.request_id, "abc");
    assert_eq!(back.mask, req.mask);
    assert_eq!(back.config, req.config);
}

fn mutate(req: &BackendRequest, f: impl FnOnce(&mut Value)) -> Vec<u8> {
    let mut v: Value = serde_json::from_slice(&encode_request(req).unwrap()).unwrap();
    f(&mut v);
    serde_json::to_vec(&v).unwrap()
}

#[test]
fn damaged_envelopes_give_typed_errors() {
    let req = request("r1");
    let bytes = encode_request(&req).unwrap();
    let protocol = |r: checkerlight_core::Result<BackendRequest>| match r {
        Err(Error::Protocol(p)) => p,
        other => panic!("expected a protocol error, got {other:?}"),
    };

    assert!(matches!(protocol(decode_request(&bytes[..bytes.len() / 2])), ProtocolError::Json { .. }));
    assert!(matches!(
        protocol(decode_request(&mutate(&req, |v| v["protocol_version"] = 2.into()))),
        ProtocolError::VersionMismatch { expected: 1, found: 2 }
    ));
    assert!(matches!(
        protocol(decode_request(&mutate(&req, |v| v["image"]["png_base64"] = "@@@".into()))),
        ProtocolError::Base64 { .. }
    ));
    let truncated_png = mutate(&req, |v| {
        let b64 = v["image"]["png_base64"].as_str().unwrap().to_owned();
        let raw = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
        v["image"]["png_base64"] = base64::engine::general_purpose::STANDARD.encode(&raw[..raw.len() / 2]).into();
    });
    assert!(matches!(protocol(decode_request(&truncated_png)), ProtocolError::Png { .. }));
    assert!(matches!(
        protocol(decode_request(&mutate(&req, |v| v["image"]["width"] = 41.into()))),
        ProtocolError::Dimensions(_)
    ));
    let small_mask = Mask::from_rect(20, 16, Rect::new(0, 0, 4, 4)).unwrap();
    assert!(BackendRequest::new("x", req.image.clone(), small_mask, RequestConfig::default()).is_err());

    let mut resp = fixed_mock().inpaint(&req).unwrap();
    resp.request_id = "other".into();
    assert!(matches!(
        check_response(&req, &resp),
        Err(Error::Protocol(ProtocolError::RequestIdMismatch { .. }))
    ));
    assert!(decode_response(b"{\"protocol_version\":1}").is_err());
}

#[test]
fn mock_is_deterministic() {
    let mock = fixed_mock();
    let a = mock.inpaint(&request("same")).unwrap();
    let b = mock.inpaint(&request("same")).unwrap();
    assert_eq!(a.image, b.image);
    let mut noisy = OracleConfig::fixed(Illuminant::neutral());
    noisy.structure_noise_sigma = 0.01;
    let m = MockBackend::new(noisy);
    assert_eq!(m.inpaint(&request("n")).unwrap().image, m.inpaint(&request("n")).unwrap().image);
}

#[test]
fn http_transport_matches_in_process() {
    let server = serve_http(Arc::new(fixed_mock()), "127.0.0.1:0", 2).unwrap();
    let ep: Endpoint = server.url().parse().unwrap();
    let remote = ep.connect(Duration::from_secs(10)).unwrap();
    let req = request("h1");
    let over_http = remote.inpaint(&req).unwrap();
    let local = fixed_mock().inpaint(&req).unwrap();
    assert_eq!(over_http.image, local.image);

    let bad = mutate(&req, |v| v["protocol_version"] = 9.into());
    let resp = ureq::post(format!("{}/inpaint", server.url()))
        .config()
        .http_status_as_error(false)
        .build()
        .send(&bad[..])
        .unwrap();
    assert_eq!(resp.status(), 400);
    server.shutdown();
}

#[test]
fn killed_subprocess_is_a_transport_error() {
    let ep = Endpoint::Subprocess {
        program: "sh".into(),
        args: vec!["-c".into(), "sleep 0.2; kill -9 $$".into()],
    };
    let backend = ep.connect(Duration::from_secs(30)).unwrap();
    let t = Instant::now();
    let err = backend.inpaint(&request("k")).unwrap_err();
    assert!(matches!(err.root(), Error::Transport(_)), "{err}");
    assert!(t.elapsed() < Duration::from_secs(10));
}

#[test]
fn silent_subprocess_times_out() {
    let ep = Endpoint::Subprocess {
        program: "sh".into(),
        args: vec!["-c".into(), "cat > /dev/null".into()],
    };
    let backend = ep.connect(Duration::from_millis(300)).unwrap();
    let t = Instant::now();
    let err = backend.inpaint(&request("t")).unwrap_err();
    assert!(matches!(err.root(), Error::Timeout(_)), "{err}");
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn replayed_transcript_gives_identical_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let img = textured_scene(96, 72, 0.05, 0.8, 3);
    let cfg = EstimateConfig::default();
    let live = {
        let rec = RecordingBackend::create(fixed_mock(), &path).unwrap();
        estimate_single(&img, &cfg, None, &rec).unwrap()
    };
    let replay = ReplayBackend::open(&path).unwrap();
    assert_eq!(replay.len(), 1);
    let again = estimate_single(&img, &cfg, None, &replay).unwrap();
    assert_eq!(
        serde_json::to_string(&live.diagnostics).unwrap(),
        serde_json::to_string(&again.diagnostics).unwrap()
    );
    // A different image is not in the transcript.
    let other = textured_scene(96, 72, 0.05, 0.8, 4);
    assert!(matches!(
        estimate_single(&other, &cfg, None, &replay).unwrap_err().root(),
        Error::Transport(_)
    ));
}

#[test]
fn srgb_images_reject_out_of_range() {
    assert!(SrgbImage::new(1, 1, vec![0.5, 1.5, 0.2]).is_err());
}
