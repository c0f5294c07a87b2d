//! Bilinear resampling and the scorer-path pad/resize frame.

use crate::error::{Error, Result};
use crate::grid::{RgbGrid, ScalarGrid, Vec3Grid};

/// Side the shorter image dimension is resized to before refinement.
pub const MODEL_MIN_SIDE: usize = 518;

/// Bilinear resize of an interleaved `channels`-wide buffer, half-pixel centers.
pub fn resize_bilinear(
    src: &[f64],
    h: usize,
    w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w * channels);
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let taps = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let x = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|c| taps(c, w, out_w)).collect();
    let mut out = vec![0.0; out_h * out_w * channels];
    for r in 0..out_h {
        let (r0, r1, fr) = taps(r, h, out_h);
        for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
            for k in 0..channels {
                let at = |rr: usize, cc: usize| src[(rr * w + cc) * channels + k];
                let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
                let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
                out[(r * out_w + c) * channels + k] = top * (1.0 - fr) + bottom * fr;
            }
        }
    }
    out
}

pub fn resize_scalar(g: &ScalarGrid, out_h: usize, out_w: usize) -> Result<ScalarGrid> {
    ScalarGrid::new(out_h, out_w, resize_bilinear(g.values(), g.height(), g.width(), 1, out_h, out_w))
}

pub fn resize_field(g: &Vec3Grid, out_h: usize, out_w: usize) -> Result<Vec3Grid> {
    Vec3Grid::from_flat(out_h, out_w, &resize_bilinear(&g.to_flat(), g.height(), g.width(), 3, out_h, out_w))
}

pub fn resize_rgb(g: &RgbGrid, out_h: usize, out_w: usize) -> Result<RgbGrid> {
    let flat = resize_bilinear(&g.to_flat(), g.height(), g.width(), 3, out_h, out_w);
    // Bilinear weights are convex, so values stay in [0, 1] up to rounding.
    let px = flat.chunks_exact(3).map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)]);
    RgbGrid::new(out_h, out_w, px.collect())
}

/// Output `(height, width)` that brings the shorter side to `min_side`.
pub fn model_shape(h: usize, w: usize, min_side: usize) -> (usize, usize) {
    if h.min(w) == min_side {
        return (h, w);
    }
    if h <= w {
        (min_side, ((w as f64) * min_side as f64 / h as f64).round() as usize)
    } else {
        (((h as f64) * min_side as f64 / w as f64).round() as usize, min_side)
    }
}

/// Aspect-preserving resize so the shorter side measures 518 pixels.
pub fn resize_for_model(img: &RgbGrid) -> Result<RgbGrid> {
    let (h, w) = model_shape(img.height(), img.width(), MODEL_MIN_SIDE);
    resize_rgb(img, h, w)
}

/// Geometry of the zero-pad-to-square plus resize applied before a
/// fixed-resolution scorer. The image sits centered in the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerFrame {
    pub height: usize,
    pub width: usize,
    pub padded: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub side: usize,
}

impl ScorerFrame {
    pub fn new(height: usize, width: usize, side: usize) -> Self {
        let padded = height.max(width);
        Self {
            height,
            width,
            padded,
            pad_top: (padded - height) / 2,
            pad_left: (padded - width) / 2,
            side,
        }
    }

    pub fn pad(&self, g: &Vec3Grid) -> Result<Vec3Grid> {
        if g.shape() != (self.height, self.width) {
            return Err(Error::shape(format!(
                "frame expects {}x{}, got {}x{}",
                self.height,
                self.width,
                g.height(),
                g.width()
            )));
        }
        let mut out = vec![[0.0; 3]; self.padded * self.padded];
        for r in 0..self.height {
            for c in 0..self.width {
                out[(r + self.pad_top) * self.padded + c + self.pad_left] = g.get(r, c);
            }
        }
        Vec3Grid::new(self.padded, self.padded, out)
    }

    pub fn unpad(&self, g: &Vec3Grid) -> Result<Vec3Grid> {
        if g.shape() != (self.padded, self.padded) {
            return Err(Error::shape("unpad expects the padded square"));
        }
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(g.get(r + self.pad_top, c + self.pad_left));
            }
        }
        Vec3Grid::new(self.height, self.width, out)
    }

    /// Image-resolution field → scorer input.
    pub fn to_model(&self, g: &Vec3Grid) -> Result<Vec3Grid> {
        resize_field(&self.pad(g)?, self.side, self.side)
    }

    /// Scorer-resolution field → image resolution.
    pub fn from_model(&self, g: &Vec3Grid) -> Result<Vec3Grid> {
        if g.shape() != (self.side, self.side) {
            return Err(Error::shape("scorer output has the wrong side"));
        }
        self.unpad(&resize_field(g, self.padded, self.padded)?)
    }
}
