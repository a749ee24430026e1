//! Run configuration: one JSON document with a section per subsystem.
//!
//! Files are layered over the built-in defaults (later files win, objects
//! merge key by key) and unknown keys are rejected. Schema: `docs/config.md`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{AugmentPolicy, JitterConfig};
use crate::baselines::{BaselineConfig, BaselineMethod};
use crate::engine::{EstimateConfig, SpatialConfig};
use crate::error::{Error, Result};
use crate::eval::{config_hash, ProtocolKind};
use crate::protocol::OracleConfig;

/// Baseline selection; unset parameters take the method's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub method: BaselineMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minkowski_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub smoothing_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation_threshold: Option<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            method: BaselineMethod::GrayWorld,
            minkowski_p: None,
            smoothing_sigma: None,
            saturation_threshold: None,
        }
    }
}

impl BaselineSection {
    pub fn resolve(&self) -> Result<BaselineConfig> {
        let mut c = BaselineConfig::for_method(self.method);
        if let Some(p) = self.minkowski_p {
            c.minkowski_p = p;
        }
        if let Some(s) = self.smoothing_sigma {
            c.smoothing_sigma = s;
        }
        if let Some(t) = self.saturation_threshold {
            c.saturation_threshold = t;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub kind: ProtocolKind,
    pub seed: u64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            kind: ProtocolKind::ThreeFold,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `mock`, `stdio:<command>`, `http://host:port` or `http:<port>`.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Connections (or subprocesses) used in parallel.
    pub pool_size: usize,
    /// Light painted by the mock backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    /// Append every exchange to this transcript.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_transcript: Option<PathBuf>,
    /// Answer from this transcript instead of a live backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_transcript: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            endpoint: "mock".to_owned(),
            timeout_ms: 120_000,
            pool_size: 1,
            oracle: None,
            record_transcript: None,
            replay_transcript: None,
        }
    }
}

impl BackendSection {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub estimate: EstimateConfig,
    pub spatial: SpatialConfig,
    pub jitter: JitterConfig,
    pub augment: AugmentPolicy,
    pub baseline: BaselineSection,
    pub protocol: ProtocolSection,
    pub backend: BackendSection,
    /// Worker threads for evaluation; 0 picks one per core.
    pub jobs: usize,
}

/// Recursively overlays `top` on `base`: objects merge, anything else is
/// replaced. An object whose `kind` tag changes is replaced whole, since its
/// other fields belong to the old variant.
pub fn merge_json(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if t.get("kind").is_none_or(|k| b.get("kind") == Some(k)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn ctx(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Config(format!("{section}: {e}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::layered_values([v])
    }

    fn layered_values(layers: impl IntoIterator<Item = Value>) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::default()).expect("defaults serialize");
        for layer in layers {
            if !layer.is_object() {
                return Err(Error::Config("config root must be a JSON object".into()));
            }
            merge_json(&mut merged, layer);
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults overlaid with each file in order.
    pub fn load_layered(paths: &[PathBuf]) -> Result<Self> {
        let layers = paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str::<Value>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::layered_values(layers)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_layered(&[path.to_path_buf()])
    }

    pub fn validate(&self) -> Result<()> {
        self.estimate.validate().map_err(ctx("estimate"))?;
        self.spatial.validate().map_err(ctx("spatial"))?;
        self.jitter.validate().map_err(ctx("jitter"))?;
        self.augment.validate().map_err(ctx("augment"))?;
        self.baseline.resolve().map_err(ctx("baseline"))?;
        if let Some(o) = &self.backend.oracle {
            o.validate().map_err(ctx("backend.oracle"))?;
        }
        if self.backend.pool_size == 0 {
            return Err(Error::Config("backend.pool_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hash of the effective configuration, embedded in every artifact.
    pub fn hash(&self) -> String {
        config_hash(&self.to_value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), d);
        assert_eq!(RunConfig::from_json("{}").unwrap(), d);
    }

    #[test]
    fn partial_sections_merge() {
        let c = RunConfig::from_json(
            r#"{"spatial": {"grid_rows": 2}, "estimate": {"gamma": 2.4}, "baseline": {"method": "shades_of_gray"}}"#,
        )
        .unwrap();
        assert_eq!(c.spatial.grid_rows, 2);
        assert_eq!(c.spatial.grid_cols, 4);
        assert_eq!(c.estimate.gamma, 2.4);
        assert_eq!(c.baseline.resolve().unwrap().minkowski_p, 6.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"spatail": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"spatial": {"rows": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"estimate": {"gamma": -1}}"#).is_err());
    }

    #[test]
    fn switching_tagged_variant_replaces_fields() {
        let c = RunConfig::from_json(
            r#"{"estimate": {"placement": {"kind": "explicit", "center_x": 50, "center_y": 40, "checker_width": 30}}}"#,
        )
        .unwrap();
        assert!(matches!(c.estimate.placement, crate::engine::PlacementPolicy::Explicit { .. }));
    }

    #[test]
    fn later_layers_win() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        std::fs::write(&a, r#"{"protocol": {"seed": 1, "kind": "leave_one_out_camera"}}"#).unwrap();
        std::fs::write(&b, r#"{"protocol": {"seed": 9}}"#).unwrap();
        let c = RunConfig::load_layered(&[a, b]).unwrap();
        assert_eq!(c.protocol.seed, 9);
        assert_eq!(c.protocol.kind, ProtocolKind::LeaveOneOutCamera);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.protocol.seed = 3;
        assert_ne!(a.hash(), b.hash());
    }
}
