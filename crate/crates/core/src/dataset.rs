//! Dataset manifests and image ingestion.
//!
//! A manifest is a JSON file listing images with their camera, ground-truth
//! light and optional checker box. Paths are resolved against the
//! manifest's directory. Schema: `docs/manifest.md`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::color::{Image, Illuminant, LinearImage, Mask, Rect};
use crate::engine::IlluminantMap;
use crate::error::{Error, Result};
use crate::tensor::GoldenTensor;

pub const MANIFEST_VERSION: u32 = 1;

/// Default checker-mask dilation, as a fraction of the box diagonal.
pub const DEFAULT_MASK_MARGIN: f64 = 0.05;

/// Black level in code values of the image's bit depth, either one value
/// for all channels or one per channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DarkLevel {
    Uniform(f64),
    PerChannel([f64; 3]),
}

impl DarkLevel {
    pub fn per_channel(&self) -> [f64; 3] {
        match *self {
            DarkLevel::Uniform(v) => [v; 3],
            DarkLevel::PerChannel(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Defaults to the file stem of `image_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_path: PathBuf,
    pub camera_id: String,
    /// Linear RGB of the light, any positive scale.
    pub gt_illuminant: [f64; 3],
    /// `[x0, y0, x1, y1]`, half-open pixel box of the physical checker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checker_bbox: Option<[usize; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_level: Option<DarkLevel>,
    /// Declared bit depth; checked against the file when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_depth: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    /// Per-pixel ground-truth map for multi-illuminant scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_map_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn new(image_path: impl Into<PathBuf>, camera_id: impl Into<String>, gt: [f64; 3]) -> Self {
        Self {
            id: None,
            image_path: image_path.into(),
            camera_id: camera_id.into(),
            gt_illuminant: gt,
            checker_bbox: None,
            dark_level: None,
            bit_depth: None,
            tags: Vec::new(),
            gt_map_path: None,
        }
    }

    pub fn image_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }

    pub fn gt(&self) -> Result<Illuminant> {
        Illuminant::new(self.gt_illuminant[0], self.gt_illuminant[1], self.gt_illuminant[2])
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.checker_bbox.map(|[x0, y0, x1, y1]| Rect::new(x0, y0, x1, y1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    pub name: String,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            name: name.into(),
            entries,
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.resolve(&e.image_path)
    }

    /// Structural checks; `check_files` also reads image headers to verify
    /// checker boxes against the real image size (missing files are left to
    /// the caller).
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.manifest_version
            )));
        }
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let fail = |msg: String| Error::Dataset(format!("entry {i} ({}): {msg}", e.image_id()));
            let id = e.image_id();
            if id.is_empty() {
                return Err(fail("empty image id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(fail(format!("duplicate image id `{id}`")));
            }
            if e.gt_illuminant.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(fail(format!(
                    "gt_illuminant {:?} must be strictly positive",
                    e.gt_illuminant
                )));
            }
            if let Some(d) = e.bit_depth {
                if d != 8 && d != 16 {
                    return Err(fail(format!("bit_depth {d} is not 8 or 16")));
                }
            }
            if let Some(dl) = e.dark_level {
                if dl.per_channel().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(fail("dark_level must be non-negative".into()));
                }
            }
            if let Some(b) = e.bbox() {
                if b.is_empty() {
                    return Err(fail(format!("checker_bbox {:?} is empty", e.checker_bbox.unwrap())));
                }
                let path = self.image_path(e);
                if check_files && path.exists() {
                    let (w, h) = image::image_dimensions(&path)
                        .map_err(|err| fail(format!("cannot read {}: {err}", path.display())))?;
                    if !b.fits_in(w as usize, h as usize) {
                        return Err(fail(format!(
                            "checker_bbox {:?} lies outside the {w}x{h} image",
                            e.checker_bbox.unwrap()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Entries sorted by image id.
    pub fn sorted_entries(&self) -> Vec<&ManifestEntry> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by_key(|e| e.image_id());
        v
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut m: DatasetManifest = serde_json::from_str(text).map_err(|e| {
        // Point at the entry when serde can tell us the line.
        Error::Dataset(format!("manifest schema violation at line {}: {e}", e.line()))
    })?;
    m.base_dir = base_dir.to_path_buf();
    Ok(m)
}

/// Reads and validates a manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let m = parse_manifest(&text, &base).map_err(|e| e.context(path.display().to_string()))?;
    m.validate(true).map_err(|e| e.context(path.display().to_string()))?;
    Ok(m)
}

/// Decoded RGB pixels scaled to `[0, 1]` plus the source bit depth.
pub struct DecodedImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub bit_depth: u8,
}

/// Reads an 8- or 16-bit PNG/TIFF as RGB in `[0, 1]`. Gray images are
/// replicated across channels; alpha is dropped.
pub fn read_rgb(path: &Path) -> Result<DecodedImage> {
    let img = image::open(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    use image::ColorType::*;
    let (data, bit_depth): (Vec<f64>, u8) = match img.color() {
        L8 | La8 | Rgb8 | Rgba8 => (
            img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            8,
        ),
        L16 | La16 | Rgb16 | Rgba16 => (
            img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            16,
        ),
        other => {
            return Err(Error::Dataset(format!(
                "{}: unsupported pixel format {other:?} (need 8- or 16-bit integer)",
                path.display()
            )))
        }
    };
    Ok(DecodedImage {
        width: img.width() as usize,
        height: img.height() as usize,
        data,
        bit_depth,
    })
}

/// Loads an entry's image in the linear domain: scaled by bit depth, dark
/// level subtracted and clamped at zero. The checker is not masked.
pub fn load_image_linear(manifest: &DatasetManifest, e: &ManifestEntry) -> Result<LinearImage> {
    let path = manifest.image_path(e);
    let d = read_rgb(&path)?;
    if let Some(declared) = e.bit_depth {
        if declared != d.bit_depth {
            return Err(Error::Dataset(format!(
                "{}: manifest declares {declared}-bit, file is {}-bit",
                path.display(),
                d.bit_depth
            )));
        }
    }
    let mut data = d.data;
    if let Some(dl) = e.dark_level {
        let full = ((1u32 << d.bit_depth) - 1) as f64;
        let off = dl.per_channel().map(|v| v / full);
        for px in data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] - off[c]).max(0.0);
            }
        }
    }
    LinearImage::new(d.width, d.height, data)
}

/// Loads a ground-truth map: a golden-tensor file (`.gten`) or an RGB image
/// whose pixels are the light color.
pub fn load_gt_map(path: &Path) -> Result<IlluminantMap> {
    let is_tensor = path
        .extension()
        .is_some_and(|x| x.eq_ignore_ascii_case("gten"));
    if is_tensor {
        return IlluminantMap::from_tensor(&GoldenTensor::read(path)?);
    }
    let d = read_rgb(path)?;
    IlluminantMap::new(d.width, d.height, d.data)
        .map_err(|e| e.context(format!("ground-truth map {}", path.display())))
}

/// Writes any image as a 16-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_png16<D: crate::color::Domain>(img: &Image<D>, path: &Path) -> Result<()> {
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("dims match");
    DynamicImage::ImageRgb16(buf)
        .save(path)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Writes any image as an 8-bit RGB PNG, clamping to `[0, 1]`.
pub fn save_png8<D: crate::color::Domain>(img: &Image<D>, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("dims match");
    DynamicImage::ImageRgb8(buf)
        .save(path)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

/// Box `bbox` grown by `margin × diagonal` on every side (rounded outward,
/// clipped to the image).
pub fn dilate_bbox(bbox: Rect, width: usize, height: usize, margin: f64) -> Result<Rect> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidInput(format!("mask margin {margin} must be >= 0")));
    }
    let diag = ((bbox.width() as f64).powi(2) + (bbox.height() as f64).powi(2)).sqrt();
    let m = margin * diag;
    let x0 = (bbox.x0 as f64 - m).floor().max(0.0) as usize;
    let y0 = (bbox.y0 as f64 - m).floor().max(0.0) as usize;
    let x1 = ((bbox.x1 as f64 + m).ceil() as usize).min(width);
    let y1 = ((bbox.y1 as f64 + m).ceil() as usize).min(height);
    Ok(Rect::new(x0, y0, x1, y1))
}

/// Rectangular training mask over the annotated checker, dilated to cover
/// annotation slack.
pub fn mask_checker_for_training(
    width: usize,
    height: usize,
    bbox: Option<Rect>,
    margin: f64,
) -> Result<Mask> {
    let bbox = bbox.ok_or_else(|| Error::Dataset("entry has no checker_bbox to mask".into()))?;
    if !bbox.fits_in(width, height) {
        return Err(Error::Dataset(format!(
            "checker_bbox {bbox:?} lies outside the {width}x{height} image"
        )));
    }
    Mask::from_rect(width, height, dilate_bbox(bbox, width, height, margin)?)
}
