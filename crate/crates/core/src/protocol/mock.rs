//! Deterministic stand-in for a diffusion backend.
//!
//! Inside the mask the mock relights the composited checker with an oracle
//! illuminant (green-anchored gains in the linear domain), optionally adds
//! Gaussian structure noise, and leaves every other pixel as received.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_response, decode_request, decode_response, encode_request, encode_response, BackendInfo,
    BackendRequest, BackendResponse, InpaintBackend,
};
use crate::baselines::{estimate_baseline_masked, BaselineConfig, BaselineMethod};
use crate::color::{gamma_decode, Illuminant, SrgbImage, DEFAULT_GAMMA};
use crate::error::{invalid, Result};

pub const MOCK_NAME: &str = "mock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSource {
    Fixed(Illuminant),
    /// Gray world over the pixels outside the mask.
    FromSceneGrayWorld,
    /// `left` when the mask's box center lies left of `split × width`,
    /// `right` otherwise.
    HorizontalSplit {
        left: Illuminant,
        right: Illuminant,
        split: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub oracle: OracleSource,
    #[serde(default)]
    pub structure_noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl OracleConfig {
    pub fn fixed(illum: Illuminant) -> Self {
        Self {
            oracle: OracleSource::Fixed(illum),
            structure_noise_sigma: 0.0,
            noise_seed: 0,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn with_source(oracle: OracleSource) -> Self {
        Self {
            oracle,
            ..Self::fixed(Illuminant::neutral())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.structure_noise_sigma >= 0.0 && self.structure_noise_sigma.is_finite()) {
            return Err(invalid("structure_noise_sigma must be >= 0"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid("oracle gamma must be positive"));
        }
        Ok(())
    }

    /// The light the mock paints into the mask of `req`.
    pub fn resolve(&self, req: &BackendRequest) -> Result<Illuminant> {
        match &self.oracle {
            OracleSource::Fixed(i) => Ok(*i),
            OracleSource::FromSceneGrayWorld => {
                let lin = gamma_decode(&req.image, self.gamma)?;
                estimate_baseline_masked(
                    &lin,
                    &BaselineConfig::for_method(BaselineMethod::GrayWorld),
                    Some(&req.mask),
                )
            }
            OracleSource::HorizontalSplit { left, right, split } => {
                let cx = req.mask.bbox().map(|b| b.center().0).unwrap_or(0.0);
                if cx < split * req.image.width() as f64 {
                    Ok(*left)
                } else {
                    Ok(*right)
                }
            }
        }
    }
}

fn noise_rng(seed: u64, request_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(request_id.as_bytes());
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Relights the masked region with the oracle illuminant.
pub fn mock_inpaint(req: &BackendRequest, oracle: &OracleConfig) -> Result<BackendResponse> {
    oracle.validate()?;
    req.validate()?;
    let illum = oracle.resolve(req)?;
    let gains = illum.green_anchored();
    let gamma = oracle.gamma;
    let noise = (oracle.structure_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, oracle.structure_noise_sigma).expect("sigma validated"));
    let mut rng = noise_rng(oracle.noise_seed, &req.request_id);
    let mut data = req.image.data().to_vec();
    for (i, px) in data.chunks_exact_mut(3).enumerate() {
        if req.mask.data()[i] == 0 {
            continue;
        }
        for c in 0..3 {
            let mut lin = px[c].powf(gamma) * gains[c];
            if let Some(n) = &noise {
                lin += n.sample(&mut rng);
            }
            px[c] = lin.clamp(0.0, 1.0).powf(1.0 / gamma);
        }
    }
    Ok(BackendResponse {
        protocol_version: req.protocol_version,
        request_id: req.request_id.clone(),
        image: SrgbImage::new(req.image.width(), req.image.height(), data)?,
        backend_info: BackendInfo {
            name: MOCK_NAME.to_owned(),
            model_id: req.config.model_id.clone(),
            elapsed_ms: 0,
        },
        debug_artifacts: None,
    })
}

/// In-process mock. With `through_wire` set, every call is serialized and
/// parsed exactly as a remote backend would see it, 16-bit quantization
/// included.
#[derive(Debug, Clone)]
pub struct MockBackend {
    pub oracle: OracleConfig,
    pub through_wire: bool,
}

impl MockBackend {
    pub fn new(oracle: OracleConfig) -> Self {
        Self {
            oracle,
            through_wire: true,
        }
    }

    /// Server-side handler: envelope bytes in, envelope bytes out.
    pub fn handle_bytes(&self, request: &[u8]) -> Result<Vec<u8>> {
        let req = decode_request(request)?;
        encode_response(&mock_inpaint(&req, &self.oracle)?)
    }
}

impl InpaintBackend for MockBackend {
    fn name(&self) -> String {
        MOCK_NAME.to_owned()
    }

    fn inpaint(&self, req: &BackendRequest) -> Result<BackendResponse> {
        if !self.through_wire {
            return mock_inpaint(req, &self.oracle);
        }
        let reply = self.handle_bytes(&encode_request(req)?)?;
        let resp = decode_response(&reply)?;
        check_response(req, &resp)?;
        Ok(resp)
    }
}
