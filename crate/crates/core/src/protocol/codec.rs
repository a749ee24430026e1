use std::io::Cursor;

use base64::Engine as _;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use crate::color::{Mask, SrgbImage};
use crate::error::{Error, ProtocolError, Result};

pub(crate) fn to_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub(crate) fn from_base64(s: &str, field: &'static str) -> Result<Vec<u8>, ProtocolError> {
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| ProtocolError::Base64 {
            field,
            message: e.to_string(),
        })
}

fn codec_err(e: image::ImageError) -> Error {
    Error::Codec(e.to_string())
}

#[inline]
pub(crate) fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// 16-bit RGB PNG of a display-domain image.
pub fn encode_rgb16_png(img: &SrgbImage) -> Result<Vec<u8>> {
    let raw: Vec<u16> = img.data().iter().map(|&v| quantize16(v)).collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb16(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(codec_err)?;
    Ok(out.into_inner())
}

/// Decodes any PNG to RGB, scaling to `[0, 1]` at 16-bit precision.
pub fn decode_rgb16_png(bytes: &[u8]) -> Result<SrgbImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(codec_err)?;
    let rgb = img.to_rgb16();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    SrgbImage::new(w as usize, h as usize, data)
}

/// 8-bit grayscale PNG with set pixels at 255.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let raw: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw)
            .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(codec_err)?;
    Ok(out.into_inner())
}

/// Decodes a grayscale PNG mask; values above half scale count as set.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(codec_err)?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    let data = luma.into_raw().into_iter().map(|v| u8::from(v > 127)).collect();
    Mask::new(w as usize, h as usize, data)
}
