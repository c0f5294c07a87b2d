//! Camera models, disparity to depth conversion, unprojection and normals.
//!
//! Pixel coordinates `U` and `V` span `[-1, 1]` with the endpoints on the
//! centers of the first and last column (row). Normals are oriented so that
//! a fronto-parallel plane faces the viewer along `+z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, Vec3Grid};
use crate::vec3::{self, Vec3};

pub const DEFAULT_ORTHO_SCALE: f64 = 7.0;
pub const DEFAULT_FOCAL: f64 = 2.0;
pub const DEFAULT_B: f64 = 0.1;

/// Normal substituted where the surface tangents are degenerate.
pub const FALLBACK_NORMAL: Vec3 = [0.0, 0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraKind {
    /// Scaled orthographic: `X = (U/σ, V/σ, D)`.
    Orthographic,
    /// Pinhole with focal `f`: `X = (U·D/f, V·D/f, D)`.
    Perspective,
}

impl std::str::FromStr for CameraKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orthographic" | "ortho" => Ok(CameraKind::Orthographic),
            "perspective" | "persp" => Ok(CameraKind::Perspective),
            other => Err(Error::param(format!(
                "unknown camera '{other}' (expected orthographic or perspective)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub kind: CameraKind,
    /// Orthographic scale or perspective focal length.
    pub scale_or_focal: f64,
    pub optimizable: bool,
}

impl CameraModel {
    pub fn new(kind: CameraKind, scale_or_focal: f64, optimizable: bool) -> Result<Self> {
        if !(scale_or_focal > 0.0 && scale_or_focal.is_finite()) {
            return Err(Error::param(format!(
                "camera scale/focal must be positive, got {scale_or_focal}"
            )));
        }
        Ok(Self {
            kind,
            scale_or_focal,
            optimizable,
        })
    }

    pub fn orthographic(scale: f64) -> Result<Self> {
        Self::new(CameraKind::Orthographic, scale, false)
    }

    pub fn perspective(focal: f64) -> Result<Self> {
        Self::new(CameraKind::Perspective, focal, false)
    }

    /// Default initialization for the given kind.
    pub fn default_for(kind: CameraKind) -> Self {
        let v = match kind {
            CameraKind::Orthographic => DEFAULT_ORTHO_SCALE,
            CameraKind::Perspective => DEFAULT_FOCAL,
        };
        Self {
            kind,
            scale_or_focal: v,
            optimizable: false,
        }
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::default_for(CameraKind::Orthographic)
    }
}

/// Parameters of `D = s / (disp + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityToDepthParams {
    pub b: f64,
    pub s: f64,
}

impl DisparityToDepthParams {
    pub fn new(b: f64) -> Result<Self> {
        let p = Self { b, s: 1.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::param(format!("offset b must be positive, got {}", self.b)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::param(format!("scale s must be positive, got {}", self.s)));
        }
        Ok(())
    }
}

impl Default for DisparityToDepthParams {
    fn default() -> Self {
        Self { b: DEFAULT_B, s: 1.0 }
    }
}

/// Horizontal pixel coordinate of column `col`.
#[inline]
pub fn coord_u(col: usize, width: usize) -> f64 {
    -1.0 + 2.0 * col as f64 / (width - 1) as f64
}

/// Vertical pixel coordinate of row `row`.
#[inline]
pub fn coord_v(row: usize, height: usize) -> f64 {
    -1.0 + 2.0 * row as f64 / (height - 1) as f64
}

pub fn disparity_to_depth(disp: &ScalarGrid, p: &DisparityToDepthParams) -> Result<ScalarGrid> {
    p.validate()?;
    if let Some(&d) = disp.values().iter().find(|&&d| d + p.b <= 0.0) {
        return Err(Error::Domain(format!(
            "disparity {d} with offset {} yields non-positive denominator",
            p.b
        )));
    }
    disp.map(|d| p.s / (d + p.b))
}

pub fn unproject(depth: &ScalarGrid, cam: &CameraModel) -> Result<Vec3Grid> {
    if let Some(&d) = depth.values().iter().find(|&&d| d <= 0.0) {
        return Err(Error::Domain(format!("non-positive depth {d}")));
    }
    let (h, w) = depth.shape();
    let k = cam.scale_or_focal;
    let mut pts = Vec::with_capacity(h * w);
    for r in 0..h {
        let v = coord_v(r, h);
        for c in 0..w {
            let u = coord_u(c, w);
            let d = depth.get(r, c);
            pts.push(match cam.kind {
                CameraKind::Orthographic => [u / k, v / k, d],
                CameraKind::Perspective => [u * d / k, v * d / k, d],
            });
        }
    }
    Vec3Grid::new(h, w, pts)
}

/// Horizontal difference stencil at `(r, c)`: central inside, one-sided at
/// the left/right borders. Returns `(minus, plus, weight)` column indices so
/// that `d = weight · (x[plus] − x[minus])`.
#[inline]
pub(crate) fn stencil(i: usize, n: usize) -> (usize, usize, f64) {
    if i == 0 {
        (0, 1, 1.0)
    } else if i == n - 1 {
        (n - 2, n - 1, 1.0)
    } else {
        (i - 1, i + 1, 0.5)
    }
}

/// Spatial derivatives of a point field along `u` (columns) and `v` (rows).
pub(crate) fn point_gradients(points: &Vec3Grid) -> (Vec<Vec3>, Vec<Vec3>) {
    let (h, w) = points.shape();
    let x = points.values();
    let mut du = Vec::with_capacity(h * w);
    let mut dv = Vec::with_capacity(h * w);
    for r in 0..h {
        let (rm, rp, wr) = stencil(r, h);
        for c in 0..w {
            let (cm, cp, wc) = stencil(c, w);
            du.push(vec3::scale(vec3::sub(x[r * w + cp], x[r * w + cm]), wc));
            dv.push(vec3::scale(vec3::sub(x[rp * w + c], x[rm * w + c]), wr));
        }
    }
    (du, dv)
}

/// Unit normal field plus the number of pixels whose tangent cross product
/// vanished and received [`FALLBACK_NORMAL`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec3Grid,
    pub degenerate: usize,
}

/// Normals orthogonal to the spatial gradients of the point field.
pub fn normals_from_points(points: &Vec3Grid) -> Result<NormalField> {
    let (h, w) = points.shape();
    let (du, dv) = point_gradients(points);
    let mut degenerate = 0;
    let normals = du
        .iter()
        .zip(&dv)
        .map(|(&a, &b)| match vec3::normalize(vec3::cross(a, b)) {
            Some(n) => n,
            None => {
                degenerate += 1;
                FALLBACK_NORMAL
            }
        })
        .collect();
    Ok(NormalField {
        normals: Vec3Grid::new(h, w, normals)?,
        degenerate,
    })
}

/// Disparity → depth → points → normals.
pub fn compute_normals(
    disp: &ScalarGrid,
    cam: &CameraModel,
    p: &DisparityToDepthParams,
) -> Result<NormalField> {
    let depth = disparity_to_depth(disp, p)?;
    let points = unproject(&depth, cam)?;
    normals_from_points(&points)
}

/// Maps a normal field to displayable RGB via `(n + 1) / 2`.
pub fn normals_to_rgb(normals: &Vec3Grid) -> crate::grid::RgbGrid {
    let (h, w) = normals.shape();
    crate::grid::RgbGrid::from_vec_unchecked(
        h,
        w,
        normals
            .values()
            .iter()
            .map(|n| n.map(|x| (0.5 * (x + 1.0)).clamp(0.0, 1.0)))
            .collect(),
    )
}
