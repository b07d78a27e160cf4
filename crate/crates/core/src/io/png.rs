//! PNG codecs for the three per-sample maps.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, NocsMap, Vec3};
use crate::synth::NOCS_LEVELS;

fn decode(path: &Path) -> Result<DynamicImage> {
    Ok(ImageReader::open(path)?.with_guessed_format()?.decode()?)
}

fn wrong_format(path: &Path, expected: &str) -> Error {
    Error::Schema(format!("{} is not a {expected} PNG", path.display()))
}

/// 16-bit grayscale, millimeters.
pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width(), depth.height(), depth.as_slice().to_vec())
            .ok_or_else(|| Error::InvalidInput("depth buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    match decode(path)? {
        DynamicImage::ImageLuma16(img) => {
            let (w, h) = img.dimensions();
            DepthMap::from_raw(w, h, img.into_raw())
        }
        _ => Err(wrong_format(path, "16-bit grayscale")),
    }
}

/// 8-bit grayscale instance ids.
pub fn save_mask(path: &Path, width: u32, height: u32, ids: &[u8]) -> Result<()> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(width, height, ids.to_vec())
        .ok_or_else(|| Error::InvalidInput("mask buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

/// Returns `(width, height, ids)`.
pub fn load_mask(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    match decode(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            Ok((w, h, img.into_raw()))
        }
        _ => Err(wrong_format(path, "8-bit grayscale")),
    }
}

/// Quantized channel value: `round(c·65535)`.
pub fn quantize_nocs(c: f64) -> u16 {
    (c.clamp(0.0, 1.0) * NOCS_LEVELS).round() as u16
}

/// 16-bit RGB, one channel per canonical axis.
pub fn save_nocs(path: &Path, nocs: &NocsMap) -> Result<()> {
    let data: Vec<u16> = nocs
        .as_slice()
        .iter()
        .flat_map(|p| [p.x, p.y, p.z].map(quantize_nocs))
        .collect();
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(nocs.width(), nocs.height(), data)
            .ok_or_else(|| Error::InvalidInput("NOCS buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

pub fn load_nocs(path: &Path) -> Result<NocsMap> {
    match decode(path)? {
        DynamicImage::ImageRgb16(img) => {
            let (w, h) = img.dimensions();
            let data = img
                .into_raw()
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) / NOCS_LEVELS)
                .collect();
            NocsMap::from_raw(w, h, data)
        }
        _ => Err(wrong_format(path, "16-bit RGB")),
    }
}
