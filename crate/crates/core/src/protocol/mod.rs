//! Wire protocol spoken with inpainting backends.
//!
//! Requests and responses are JSON envelopes. Images travel as base64
//! 16-bit RGB PNGs, masks as base64 8-bit grayscale PNGs (0 or 255).
//! The same envelope is carried over HTTP (`POST /inpaint`) or over a
//! subprocess's stdio with a 4-byte big-endian length prefix per frame.
//! See `docs/protocol.md` for the full schema.

mod codec;
pub mod mock;
pub mod server;
pub mod transcript;
pub mod transport;

use serde::{Deserialize, Serialize};

use crate::color::{Mask, SrgbImage};
use crate::error::{Error, ProtocolError, Result};

pub use codec::{decode_mask_png, decode_rgb16_png, encode_mask_png, encode_rgb16_png};
pub use mock::{mock_inpaint, MockBackend, OracleConfig, OracleSource};
pub use transport::{
    call_backend, BackendPool, Endpoint, HttpBackend, InpaintBackend, SubprocessBackend,
};

pub const PROTOCOL_VERSION: u32 = 1;

/// Mean absolute difference outside the mask above which a response is
/// flagged as not respecting locality.
pub const LOCALITY_WARN_THRESHOLD: f64 = 2.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimestepMode {
    #[default]
    #[serde(rename = "fixed_T")]
    FixedT,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub laplacian: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { laplacian: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestConfig {
    pub timestep_mode: TimestepMode,
    pub pyramid_levels: u32,
    pub text_prompt: String,
    pub model_id: String,
    pub ablation: Ablation,
}

impl Default for RequestConfig {
    fn default() -> Self {
        Self {
            timestep_mode: TimestepMode::FixedT,
            pyramid_levels: 2,
            text_prompt: "a color checker".to_owned(),
            model_id: String::new(),
            ablation: Ablation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub protocol_version: u32,
    pub request_id: String,
    /// Display-domain image with the checker already composited.
    pub image: SrgbImage,
    pub mask: Mask,
    pub config: RequestConfig,
    pub debug_artifacts: bool,
}

impl BackendRequest {
    pub fn new(request_id: impl Into<String>, image: SrgbImage, mask: Mask, config: RequestConfig) -> Result<Self> {
        let req = Self {
            protocol_version: PROTOCOL_VERSION,
            request_id: request_id.into(),
            image,
            mask,
            config,
            debug_artifacts: false,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.dims() != self.mask.dims() {
            return Err(ProtocolError::Dimensions(format!(
                "image {:?} vs mask {:?}",
                self.image.dims(),
                self.mask.dims()
            ))
            .into());
        }
        if self.config.pyramid_levels < 1 {
            return Err(Error::InvalidInput("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub model_id: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub protocol_version: u32,
    pub request_id: String,
    pub image: SrgbImage,
    pub backend_info: BackendInfo,
    pub debug_artifacts: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImagePayload {
    width: usize,
    height: usize,
    png_base64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
struct WireRequest {
    protocol_version: u32,
    request_id: String,
    image: ImagePayload,
    mask: ImagePayload,
    #[serde(default)]
    config: RequestConfig,
    #[serde(default)]
    debug_artifacts: bool,
}

#[derive(Serialize, Deserialize)]
struct WireResponse {
    protocol_version: u32,
    #[serde(default)]
    request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<ImagePayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backend_info: Option<BackendInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<WireError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    debug_artifacts: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct VersionProbe {
    protocol_version: Option<u32>,
}

fn json_error(e: serde_json::Error) -> ProtocolError {
    ProtocolError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn check_version(bytes: &[u8]) -> Result<(), ProtocolError> {
    let probe: VersionProbe = serde_json::from_slice(bytes).map_err(json_error)?;
    match probe.protocol_version {
        Some(PROTOCOL_VERSION) => Ok(()),
        Some(found) => Err(ProtocolError::VersionMismatch {
            expected: PROTOCOL_VERSION,
            found,
        }),
        None => Err(ProtocolError::MissingField("protocol_version")),
    }
}

fn image_payload(img: &SrgbImage) -> Result<ImagePayload> {
    Ok(ImagePayload {
        width: img.width(),
        height: img.height(),
        png_base64: codec::to_base64(&encode_rgb16_png(img)?),
    })
}

fn decode_image_payload(p: &ImagePayload, field: &'static str) -> Result<SrgbImage, ProtocolError> {
    let png = codec::from_base64(&p.png_base64, field)?;
    let img = decode_rgb16_png(&png).map_err(|e| ProtocolError::Png {
        field,
        message: e.to_string(),
    })?;
    if img.dims() != (p.width, p.height) {
        return Err(ProtocolError::Dimensions(format!(
            "{field}: declared {}x{}, PNG is {}x{}",
            p.width,
            p.height,
            img.width(),
            img.height()
        )));
    }
    Ok(img)
}

fn decode_mask_payload(p: &ImagePayload) -> Result<Mask, ProtocolError> {
    let png = codec::from_base64(&p.png_base64, "mask")?;
    let mask = decode_mask_png(&png).map_err(|e| ProtocolError::Png {
        field: "mask",
        message: e.to_string(),
    })?;
    if mask.dims() != (p.width, p.height) {
        return Err(ProtocolError::Dimensions(format!(
            "mask: declared {}x{}, PNG is {}x{}",
            p.width,
            p.height,
            mask.width(),
            mask.height()
        )));
    }
    Ok(mask)
}

pub fn encode_request(req: &BackendRequest) -> Result<Vec<u8>> {
    req.validate()?;
    let wire = WireRequest {
        protocol_version: req.protocol_version,
        request_id: req.request_id.clone(),
        image: image_payload(&req.image)?,
        mask: ImagePayload {
            width: req.mask.width(),
            height: req.mask.height(),
            png_base64: codec::to_base64(&encode_mask_png(&req.mask)?),
        },
        config: req.config.clone(),
        debug_artifacts: req.debug_artifacts,
    };
    Ok(serde_json::to_vec(&wire).expect("request serializes"))
}

pub fn decode_request(bytes: &[u8]) -> Result<BackendRequest> {
    check_version(bytes)?;
    let wire: WireRequest = serde_json::from_slice(bytes).map_err(json_error)?;
    let image = decode_image_payload(&wire.image, "image")?;
    let mask = decode_mask_payload(&wire.mask)?;
    let req = BackendRequest {
        protocol_version: wire.protocol_version,
        request_id: wire.request_id,
        image,
        mask,
        config: wire.config,
        debug_artifacts: wire.debug_artifacts,
    };
    req.validate()?;
    Ok(req)
}

pub fn encode_response(resp: &BackendResponse) -> Result<Vec<u8>> {
    let wire = WireResponse {
        protocol_version: resp.protocol_version,
        request_id: resp.request_id.clone(),
        image: Some(image_payload(&resp.image)?),
        backend_info: Some(resp.backend_info.clone()),
        error: None,
        debug_artifacts: resp.debug_artifacts.clone(),
    };
    Ok(serde_json::to_vec(&wire).expect("response serializes"))
}

/// Envelope reporting a backend-side failure.
pub fn encode_error_response(request_id: &str, code: &str, message: &str) -> Vec<u8> {
    let wire = WireResponse {
        protocol_version: PROTOCOL_VERSION,
        request_id: request_id.to_owned(),
        image: None,
        backend_info: None,
        error: Some(WireError {
            code: code.to_owned(),
            message: message.to_owned(),
        }),
        debug_artifacts: None,
    };
    serde_json::to_vec(&wire).expect("error envelope serializes")
}

pub fn decode_response(bytes: &[u8]) -> Result<BackendResponse> {
    check_version(bytes)?;
    let wire: WireResponse = serde_json::from_slice(bytes).map_err(json_error)?;
    if let Some(err) = wire.error {
        return Err(Error::Backend {
            code: err.code,
            message: err.message,
        });
    }
    let payload = wire.image.ok_or(ProtocolError::MissingField("image"))?;
    let backend_info = wire
        .backend_info
        .ok_or(ProtocolError::MissingField("backend_info"))?;
    Ok(BackendResponse {
        protocol_version: wire.protocol_version,
        request_id: wire.request_id,
        image: decode_image_payload(&payload, "image")?,
        backend_info,
        debug_artifacts: wire.debug_artifacts,
    })
}

/// Checks that `resp` answers `req`: echoed id and equal dimensions.
pub fn check_response(req: &BackendRequest, resp: &BackendResponse) -> Result<()> {
    if resp.request_id != req.request_id {
        return Err(ProtocolError::RequestIdMismatch {
            expected: req.request_id.clone(),
            found: resp.request_id.clone(),
        }
        .into());
    }
    if resp.image.dims() != req.image.dims() {
        return Err(ProtocolError::Dimensions(format!(
            "response {:?} vs request {:?}",
            resp.image.dims(),
            req.image.dims()
        ))
        .into());
    }
    Ok(())
}

/// How far a response strayed outside the inpainting mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub mean_abs_diff: f64,
    pub max_abs_diff: f64,
    pub violated: bool,
}

pub fn locality_report(req: &BackendRequest, resp: &BackendResponse) -> LocalityReport {
    let (mut sum, mut max, mut n) = (0.0f64, 0.0f64, 0usize);
    for (i, (a, b)) in req
        .image
        .data()
        .chunks_exact(3)
        .zip(resp.image.data().chunks_exact(3))
        .enumerate()
    {
        if req.mask.data()[i] != 0 {
            continue;
        }
        for c in 0..3 {
            let d = (a[c] - b[c]).abs();
            sum += d;
            max = max.max(d);
        }
        n += 3;
    }
    let mean = if n == 0 { 0.0 } else { sum / n as f64 };
    LocalityReport {
        mean_abs_diff: mean,
        max_abs_diff: max,
        violated: mean > LOCALITY_WARN_THRESHOLD,
    }
}
