//! Depth / disparity maps: PFM, 16-bit PNG and raw grids.

use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use ::image::{ImageBuffer, ImageFormat, ImageReader, Luma};

use super::raw::{decode_raw_grid, write_raw_grid, RawDtype};
use crate::error::{Error, Result};
use crate::grid::{MaskGrid, ScalarGrid};

/// Placeholder stored at pixels without a valid depth.
pub const INVALID_FILL: f64 = 1.0;

/// Depth plus validity; invalid pixels hold [`INVALID_FILL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub depth: ScalarGrid,
    pub valid: MaskGrid,
}

/// Reads a PFM (first channel of color files); rows are stored bottom-up.
/// Values must be finite.
pub fn decode_pfm(bytes: &[u8]) -> Result<ScalarGrid> {
    let (h, w, values) = pfm_values(bytes)?;
    ScalarGrid::new(h, w, values).map_err(|_| Error::format("PFM contains non-finite values"))
}

/// PFM payload in top-down order; infinities are kept for masking.
fn pfm_values(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut cur = Cursor::new(bytes);
    let mut token = || -> Result<String> {
        let mut line = String::new();
        cur.read_line(&mut line)?;
        Ok(line.trim().to_owned())
    };
    let kind = token()?;
    let channels = match kind.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::format("missing PFM magic")),
    };
    let dims = token()?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) => (w, h),
        _ => return Err(Error::format(format!("bad PFM dimensions '{dims}'"))),
    };
    let scale: f64 = token()?
        .parse()
        .map_err(|_| Error::format("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let mut payload = Vec::new();
    cur.read_to_end(&mut payload)?;
    if payload.len() != 4 * channels * w * h {
        return Err(Error::format("PFM payload length mismatch"));
    }
    let mut values = vec![0.0; w * h];
    for (i, chunk) in payload.chunks_exact(4 * channels).enumerate() {
        let b: [u8; 4] = chunk[..4].try_into().unwrap();
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (i / w, i % w);
        values[(h - 1 - file_row) * w + col] = v as f64;
    }
    Ok((h, w, values))
}

/// Single-channel little-endian PFM.
pub fn encode_pfm(g: &ScalarGrid) -> Vec<u8> {
    let (h, w) = g.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for r in (0..h).rev() {
        for c in 0..w {
            out.extend_from_slice(&(g.get(r, c) as f32).to_le_bytes());
        }
    }
    out
}

fn into_depth_map(h: usize, w: usize, raw: Vec<f64>) -> Result<DepthMap> {
    let valid: Vec<bool> = raw.iter().map(|&v| v.is_finite() && v > 0.0).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::Domain("depth map has no valid pixel".into()));
    }
    let depth = raw
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { v } else { INVALID_FILL })
        .collect();
    Ok(DepthMap {
        depth: ScalarGrid::new(h, w, depth)?,
        valid: MaskGrid::new(h, w, valid)?,
    })
}

/// Loads depth by extension: `.pfm`, `.png` (16-bit, value·`png_scale`),
/// anything else as a raw grid. Zero / non-finite / negative pixels are
/// reported invalid rather than treated as depth.
pub fn load_depth(path: &Path, png_scale: f64) -> Result<DepthMap> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let bytes = std::fs::read(path)?;
    let (h, w, raw) = match ext.as_str() {
        "pfm" => pfm_values(&bytes)?,
        "png" => {
            if !(png_scale > 0.0 && png_scale.is_finite()) {
                return Err(Error::param("PNG depth scale must be positive"));
            }
            let img = ImageReader::with_format(Cursor::new(&bytes), ImageFormat::Png).decode()?;
            let ::image::DynamicImage::ImageLuma16(buf) = img else {
                return Err(Error::format(format!("{}: depth PNG must be 16-bit gray", path.display())));
            };
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (h, w, buf.pixels().map(|p| p.0[0] as f64 * png_scale).collect())
        }
        _ => {
            let g = decode_raw_grid(&bytes)?;
            (g.height(), g.width(), g.into_values())
        }
    };
    into_depth_map(h, w, raw)
}

/// Saves by extension: `.pfm`, `.png` (16-bit, value/`png_scale`), else raw f64.
pub fn save_depth(g: &ScalarGrid, path: &Path, png_scale: f64) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "pfm" => std::fs::write(path, encode_pfm(g))?,
        "png" => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(g.width() as u32, g.height() as u32, |x, y| {
                Luma([(g.get(y as usize, x as usize) / png_scale).round().clamp(0.0, 65535.0) as u16])
            });
            buf.save_with_format(path, ImageFormat::Png)?;
        }
        _ => write_raw_grid(path, g, RawDtype::F64)?,
    }
    Ok(())
}

/// Loads a disparity/depth grid without validity handling (any extension
/// accepted by [`load_depth`]); values must be finite.
pub fn load_grid(path: &Path, png_scale: f64) -> Result<ScalarGrid> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "pfm" => decode_pfm(&std::fs::read(path)?),
        "png" => Ok(load_depth(path, png_scale)?.depth),
        _ => decode_raw_grid(&std::fs::read(path)?),
    }
}
