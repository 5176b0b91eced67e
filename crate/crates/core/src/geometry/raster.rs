//! `F64R` raster container: 4 magic bytes, height and width as `u32` LE,
//! then `H * W` little-endian `f64` values in row-major order.

use std::fs;
use std::path::Path;

use super::grid::Image;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: [u8; 4] = *b"F64R";

const HEADER_LEN: usize = 12;

pub(crate) fn encode_raster(
    magic: [u8; 4],
    height: usize,
    width: usize,
    values: &[f64],
) -> Vec<u8> {
    debug_assert_eq!(values.len(), height * width);
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_raster(bytes: &[u8], magic: [u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!(
            "raster header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if bytes[..4] != magic {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if height == 0 || width == 0 {
        return Err(Error::format(format!(
            "zero raster dimension {height}x{width}"
        )));
    }
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format("raster dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "payload of {} bytes does not match {height}x{width} (expected {expected})",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((height, width, values))
}

pub(crate) fn write_raster(
    path: &Path,
    magic: [u8; 4],
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<()> {
    fs::write(path, encode_raster(magic, height, width, values))?;
    Ok(())
}

pub(crate) fn read_raster(path: &Path, magic: [u8; 4]) -> Result<(usize, usize, Vec<f64>)> {
    decode_raster(&fs::read(path)?, magic)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_raster(
        path.as_ref(),
        IMAGE_MAGIC,
        image.height(),
        image.width(),
        image.values(),
    )
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let (h, w, values) = read_raster(path.as_ref(), IMAGE_MAGIC)?;
    Image::new(h, w, values)
}

/// Writes an 8-bit grayscale preview, min-max normalised. Lossy.
pub fn save_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let lo = image.values().iter().copied().fold(f64::INFINITY, f64::min);
    let range = image.value_range();
    let scale = if range > 0.0 { 255.0 / range } else { 0.0 };
    let pixels: Vec<u8> = image
        .values()
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = image::GrayImage::from_raw(image.width() as u32, image.height() as u32, pixels)
        .expect("buffer length matches image dimensions");
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| Error::format(format!("png export failed: {e}")))
}
