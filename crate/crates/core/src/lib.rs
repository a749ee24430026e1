//! Scene illuminant estimation by compositing a neutral color checker into
//! an image, letting an inpainting backend harmonize it with the scene, and
//! reading the light color back from the checker's gray patches.
//!
//! The crate also ships the classical statistical estimators, the backend
//! wire protocol with a deterministic mock backend, and an evaluation
//! harness reporting angular-error statistics.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod baselines;
pub mod checker;
pub mod color;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod protocol;
pub mod pyramid;
pub mod synth;
pub mod tensor;

pub use color::{
    angular_error, apply_white_balance, gamma_decode, gamma_encode, normalize_illuminant,
    Illuminant, LinearImage, Mask, Rect, SrgbImage,
};
pub use augment::{JitterConfig, JitterFactors};
pub use baselines::{estimate_baseline, BaselineConfig, BaselineMethod};
pub use checker::{CheckerLayout, CheckerPlacement};
pub use config::RunConfig;
pub use dataset::{load_manifest, DatasetManifest, ManifestEntry};
pub use engine::{
    estimate_single, estimate_spatial, map_mae, EstimateConfig, IlluminantMap, SpatialConfig,
};
pub use error::{Error, ProtocolError, Result};
pub use eval::{compute_stats, AngularStats, ProtocolKind};
pub use protocol::{BackendRequest, BackendResponse, Endpoint, InpaintBackend};
pub use pyramid::{high_freq_extract, Plane, PyramidConfig};
