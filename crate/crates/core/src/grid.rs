//! Dense row-major 2-D grids.
//!
//! Pixel `(row, col)` maps to `(v, u)`: `u` runs horizontally across columns,
//! `v` vertically across rows. Every grid is at least 2×2 so that spatial
//! differences always have a neighbor.

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

pub const MIN_SIDE: usize = 2;

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::shape(format!(
            "grid must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
        )));
    }
    Ok(())
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    check_dims(height, width)?;
    if len != height * width {
        return Err(Error::shape(format!(
            "expected {} values for a {height}x{width} grid, got {len}",
            height * width
        )));
    }
    Ok(())
}

/// Checks that two shaped things agree.
pub(crate) fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Scalar field of finite reals: depth, disparity, gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_len(height, width, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at pixel ({}, {})",
                values[i],
                i / width,
                i % width
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// A grid with every pixel set to `fill`.
    pub fn filled(height: usize, width: usize, fill: f64) -> Result<Self> {
        Self::new(height, width, vec![fill; height * width])
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Element-wise unary map; errors if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise binary combination of two same-shaped grids.
    pub fn map2(&self, other: &ScalarGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_shape(self.shape(), other.shape())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.height, self.width, values)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        Self::from_vec_unchecked(
            self.height,
            self.width,
            self.values.iter().map(|v| v.clamp(lo, hi)).collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        self.map(|v| k * v)
    }

    pub fn sum_sq_diff(&self, other: &ScalarGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Convenience constructor mirroring the grid-creation operation.
pub fn make_grid(height: usize, width: usize, fill: f64) -> Result<ScalarGrid> {
    ScalarGrid::filled(height, width, fill)
}

/// Element-wise combination of two grids.
pub fn grid_map2(a: &ScalarGrid, b: &ScalarGrid, f: impl Fn(f64, f64) -> f64) -> Result<ScalarGrid> {
    a.map2(b, f)
}

/// Field of finite 3-vectors: unprojected points, normals, noise fields,
/// and unclamped image-space gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Vec3Grid {
    height: usize,
    width: usize,
    values: Vec<Vec3>,
}

impl Vec3Grid {
    pub fn new(height: usize, width: usize, values: Vec<Vec3>) -> Result<Self> {
        check_len(height, width, values.len())?;
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite vector component".into()));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, fill: Vec3) -> Result<Self> {
        Self::new(height, width, vec![fill; height * width])
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, values: Vec<Vec3>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Vec3> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Vec3 {
        self.values[row * self.width + col]
    }

    /// Largest deviation of any vector's L2 norm from one.
    pub fn max_unit_deviation(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (vec3::norm(*v) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// True if every vector is unit length within `tol`.
    pub fn is_unit(&self, tol: f64) -> bool {
        self.max_unit_deviation() < tol
    }

    /// Flattens to interleaved `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_flat(height: usize, width: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * height * width {
            return Err(Error::shape(format!(
                "expected {} components, got {}",
                3 * height * width,
                flat.len()
            )));
        }
        Self::new(
            height,
            width,
            flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )
    }
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbGrid {
    height: usize,
    width: usize,
    values: Vec<[f64; 3]>,
}

impl RgbGrid {
    pub fn new(height: usize, width: usize, values: Vec<[f64; 3]>) -> Result<Self> {
        check_len(height, width, values.len())?;
        if let Some(v) = values
            .iter()
            .flatten()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, fill: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![fill; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, values: Vec<[f64; 3]>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.values[row * self.width + col]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// Reinterprets the image as an unconstrained 3-channel field.
    pub fn to_field(&self) -> Vec3Grid {
        Vec3Grid::from_vec_unchecked(self.height, self.width, self.values.clone())
    }

    /// Per-pixel luminance (Rec. 709 weights).
    pub fn to_gray(&self) -> ScalarGrid {
        ScalarGrid::from_vec_unchecked(
            self.height,
            self.width,
            self.values.iter().map(|&p| luminance(p)).collect(),
        )
    }

    pub fn from_gray(gray: &ScalarGrid) -> Result<Self> {
        Self::new(
            gray.height(),
            gray.width(),
            gray.values().iter().map(|&g| [g, g, g]).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &RgbGrid) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_sq_diff(&self, other: &RgbGrid) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

pub fn luminance(p: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]
}

/// Per-pixel validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl MaskGrid {
    pub fn new(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        check_len(height, width, values.len())?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn all(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![true; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&m| m).count()
    }

    pub fn and(&self, other: &MaskGrid) -> Result<Self> {
        same_shape(self.shape(), other.shape())?;
        Self::new(
            self.height,
            self.width,
            self.values.iter().zip(&other.values).map(|(a, b)| *a && *b).collect(),
        )
    }

    /// Errors unless at least one pixel is valid.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.count() == 0 {
            return Err(Error::Domain("mask selects no pixels".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_grid_fills_constant() {
        let g = make_grid(2, 2, 0.5).unwrap();
        assert_eq!(g.shape(), (2, 2));
        assert!(g.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn make_grid_rejects_nan() {
        assert!(matches!(make_grid(2, 2, f64::NAN), Err(Error::Numeric(_))));
    }

    #[test]
    fn make_grid_rejects_thin_shapes() {
        assert!(matches!(make_grid(1, 5, 0.0), Err(Error::Shape(_))));
        assert!(matches!(make_grid(5, 1, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn map2_add_divide_subtract() {
        let one = make_grid(2, 2, 1.0).unwrap();
        let two = make_grid(2, 2, 2.0).unwrap();
        let zero = make_grid(2, 2, 0.0).unwrap();
        let sum = grid_map2(&one, &two, |a, b| a + b).unwrap();
        assert!(sum.values().iter().all(|&v| v == 3.0));
        assert!(matches!(grid_map2(&one, &zero, |a, b| a / b), Err(Error::Numeric(_))));

        let ramp = ScalarGrid::from_fn(2, 2, |r, c| (r * 2 + c) as f64).unwrap();
        let diff = grid_map2(&ramp, &ramp, |a, b| a - b).unwrap();
        assert!(diff.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn map2_shape_mismatch() {
        let a = make_grid(2, 2, 1.0).unwrap();
        let b = make_grid(2, 3, 1.0).unwrap();
        assert!(matches!(a.map2(&b, |x, y| x + y), Err(Error::Shape(_))));
    }

    #[test]
    fn rgb_range_checked() {
        assert!(RgbGrid::filled(2, 2, [0.0, 0.5, 1.0]).is_ok());
        assert!(matches!(RgbGrid::filled(2, 2, [1.1, 0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_mask_rejected() {
        let m = MaskGrid::new(2, 2, vec![false; 4]).unwrap();
        assert!(m.require_nonempty().is_err());
        assert_eq!(MaskGrid::all(3, 2).unwrap().count(), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn map2_chain_preserves_shape(
                h in 2usize..9,
                w in 2usize..9,
                ops in proptest::collection::vec(0u8..3, 1..8),
            ) {
                let mut acc = ScalarGrid::from_fn(h, w, |r, c| (r as f64 * 0.3 - c as f64 * 0.1).sin()).unwrap();
                let other = ScalarGrid::from_fn(h, w, |r, c| 1.0 + 0.01 * (r + c) as f64).unwrap();
                for op in ops {
                    acc = match op {
                        0 => acc.map2(&other, |a, b| a + b).unwrap(),
                        1 => acc.map2(&other, |a, b| a * b).unwrap(),
                        _ => acc.map2(&other, |a, b| a - 0.5 * b).unwrap(),
                    };
                    prop_assert_eq!(acc.shape(), (h, w));
                    prop_assert_eq!(acc.len(), h * w);
                }
            }
        }
    }
}
