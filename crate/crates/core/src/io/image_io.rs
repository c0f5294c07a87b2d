//! PNG / PPM images and masks.

use std::path::Path;

use ::image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::{MaskGrid, RgbGrid, ScalarGrid};

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => Ok(reader.decode()?),
        Some(f) => Err(Error::format(format!("{}: unsupported image format {f:?}", path.display()))),
        None => Err(Error::format(format!("{}: unrecognized image format", path.display()))),
    }
}

/// Loads an 8/16-bit PNG or binary PPM/PGM as RGB in `[0, 1]`.
/// Alpha is dropped; gray is replicated.
pub fn load_image(path: &Path) -> Result<RgbGrid> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px: Vec<[f64; 3]> = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / 255.0))
            .collect(),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / 65535.0))
            .collect(),
        _ => return Err(Error::format(format!("{}: unsupported bit depth", path.display()))),
    };
    RgbGrid::new(h, w, px)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG (or PPM when the extension is `.ppm`).
pub fn save_image(img: &RgbGrid, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Rgb(img.get(y as usize, x as usize).map(quantize8))
    });
    buf.save(path)?;
    Ok(())
}

/// Writes a 16-bit RGB PNG.
pub fn save_image16(img: &RgbGrid, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Rgb(img.get(y as usize, x as usize).map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16))
    });
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Writes a gray map in `[0, 1]` as 8-bit PNG.
pub fn save_gray(g: &ScalarGrid, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        Luma([quantize8(g.get(y as usize, x as usize))])
    });
    buf.save(path)?;
    Ok(())
}

/// Loads a mask image; any nonzero channel marks a valid pixel.
pub fn load_mask(path: &Path) -> Result<MaskGrid> {
    let img = open(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    MaskGrid::new(h, w, img.pixels().map(|p| p.0[0] != 0).collect())
}

pub fn save_mask(mask: &MaskGrid, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    buf.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}
