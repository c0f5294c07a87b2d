//! Classical shape-from-shading baseline.
//!
//! Lambertian rendering `Î = L_in·max(0, N·l)`, normals initialized from
//! Scharr image gradients, and joint gradient descent on normals and light
//! for `L_smooth + λ·L_photo`, with unit-norm projection after each step.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::FALLBACK_NORMAL;
use crate::grid::{same_shape, MaskGrid, ScalarGrid, Vec3Grid};
use crate::vec3::{self, Vec3};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Reflect-101 index: `-1 → 1`, `n → n-2`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    j.clamp(0, n - 1) as usize
}

/// Scharr derivatives `(I_u, I_v)` scaled by 1/32; a unit ramp gives 1.
pub fn scharr_gradients(gray: &ScalarGrid) -> (ScalarGrid, ScalarGrid) {
    const W: [f64; 3] = [3.0, 10.0, 3.0];
    let (h, w) = gray.shape();
    let at = |r: isize, c: isize| gray.get(reflect(r, h), reflect(c, w));
    let mut gu = vec![0.0; h * w];
    let mut gv = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (mut su, mut sv) = (0.0, 0.0);
            for k in 0..3 {
                let d = k as isize - 1;
                su += W[k] * (at(r + d, c + 1) - at(r + d, c - 1));
                sv += W[k] * (at(r + 1, c + d) - at(r - 1, c + d));
            }
            let i = r as usize * w + c as usize;
            gu[i] = su / 32.0;
            gv[i] = sv / 32.0;
        }
    }
    (
        ScalarGrid::from_vec_unchecked(h, w, gu),
        ScalarGrid::from_vec_unchecked(h, w, gv),
    )
}

/// `normalize(−I_u, −I_v, 1)` per pixel.
pub fn init_normals(gray: &ScalarGrid) -> Vec3Grid {
    let (gu, gv) = scharr_gradients(gray);
    let n = gu
        .values()
        .iter()
        .zip(gv.values())
        .map(|(&u, &v)| vec3::normalize([-u, -v, 1.0]).unwrap_or(FALLBACK_NORMAL))
        .collect();
    Vec3Grid::from_vec_unchecked(gray.height(), gray.width(), n)
}

/// `L_in·max(0, N·l)`.
pub fn sfs_render(normals: &Vec3Grid, light: Vec3, l_in: f64) -> ScalarGrid {
    let v = normals.values().iter().map(|n| l_in * vec3::dot(*n, light).max(0.0)).collect();
    ScalarGrid::from_vec_unchecked(normals.height(), normals.width(), v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightInit {
    /// Start from the viewing direction.
    #[default]
    Frontal,
    /// Unconstrained least-squares fit of `I ≈ L_in·N·l` on the initial normals.
    LeastSquares,
}

impl std::str::FromStr for LightInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frontal" => Ok(Self::Frontal),
            "least-squares" => Ok(Self::LeastSquares),
            other => Err(Error::param(format!("unknown light init '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SfsConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda: f64,
    pub light_init: LightInit,
}

impl Default for SfsConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 3e-3,
            lambda: DEFAULT_LAMBDA,
            light_init: LightInit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsState {
    pub normals: Vec3Grid,
    pub light: Vec3,
    pub mask: MaskGrid,
    pub lambda: f64,
    pub l_in: f64,
}

impl SfsState {
    pub fn new(gray: &ScalarGrid, mask: &MaskGrid, lambda: f64, light_init: LightInit) -> Result<Self> {
        same_shape(gray.shape(), mask.shape())?;
        mask.require_nonempty().map_err(|_| Error::Domain("SfS mask is empty".into()))?;
        if gray.min() < 0.0 || gray.max() > 1.0 {
            return Err(Error::Domain("SfS input must be grayscale in [0, 1]".into()));
        }
        let normals = init_normals(gray);
        let l_in = gray.max();
        let light = match light_init {
            LightInit::Frontal => FALLBACK_NORMAL,
            LightInit::LeastSquares => least_squares_light(&normals, gray, mask, l_in).unwrap_or(FALLBACK_NORMAL),
        };
        Ok(Self {
            normals,
            light,
            mask: mask.clone(),
            lambda,
            l_in,
        })
    }
}

/// Solves the 3×3 normal equations of `min Σ_Ω (L_in·N·l − I)²`.
fn least_squares_light(normals: &Vec3Grid, gray: &ScalarGrid, mask: &MaskGrid, l_in: f64) -> Option<Vec3> {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for ((n, &i), &m) in normals.values().iter().zip(gray.values()).zip(mask.values()) {
        if !m {
            continue;
        }
        for r in 0..3 {
            b[r] += n[r] * i / l_in.max(1e-12);
            for c in 0..3 {
                a[r][c] += n[r] * n[c];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| vec3::dot(m[0], vec3::cross(m[1], m[2]));
    let d = det(&a);
    if d.abs() < 1e-12 {
        return None;
    }
    // Cramer's rule on the symmetric system.
    let mut x = [0.0; 3];
    for k in 0..3 {
        let mut m = a;
        for r in 0..3 {
            m[r][k] = b[r];
        }
        x[k] = det(&m) / d;
    }
    vec3::normalize(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfsLoss {
    pub value: f64,
    pub photo: f64,
    pub smooth: f64,
    pub d_normals: Vec3Grid,
    pub d_light: Vec3,
}

/// Objective and its gradients w.r.t. normals and light.
pub fn sfs_loss(state: &SfsState, gray: &ScalarGrid) -> Result<SfsLoss> {
    same_shape(gray.shape(), state.normals.shape())?;
    same_shape(gray.shape(), state.mask.shape())?;
    let count = state.mask.count();
    if count == 0 {
        return Err(Error::Domain("SfS mask is empty".into()));
    }
    let (h, w) = gray.shape();
    let inv = 1.0 / count as f64;
    let n = state.normals.values();
    let m = state.mask.values();
    let mut d_n = vec![[0.0; 3]; h * w];
    let mut d_l = [0.0; 3];
    let (mut photo, mut smooth) = (0.0, 0.0);

    for i in 0..h * w {
        if !m[i] {
            continue;
        }
        let dot = vec3::dot(n[i], state.light);
        let active = dot > 0.0;
        let r = state.l_in * dot.max(0.0) - gray.values()[i];
        photo += r * r;
        if active {
            let k = state.lambda * 2.0 * inv * r * state.l_in;
            d_n[i] = vec3::add(d_n[i], vec3::scale(state.light, k));
            d_l = vec3::add(d_l, vec3::scale(n[i], k));
        }
    }
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !m[i] {
                continue;
            }
            let right = (col + 1 < w).then_some(i + 1);
            let down = (row + 1 < h).then_some(i + w);
            for j in [right, down].into_iter().flatten().filter(|&j| m[j]) {
                for c in 0..2 {
                    let diff = n[j][c] - n[i][c];
                    smooth += diff * diff;
                    d_n[j][c] += 2.0 * inv * diff;
                    d_n[i][c] -= 2.0 * inv * diff;
                }
            }
        }
    }
    let photo = photo * inv;
    let smooth = smooth * inv;
    Ok(SfsLoss {
        value: smooth + state.lambda * photo,
        photo,
        smooth,
        d_normals: Vec3Grid::from_vec_unchecked(h, w, d_n),
        d_light: d_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SfsTracePoint {
    pub value: f64,
    pub photo: f64,
    pub smooth: f64,
}

#[derive(Debug, Clone)]
pub struct SfsResult {
    pub state: SfsState,
    pub trace: Vec<SfsTracePoint>,
}

/// Gradient descent with renormalization of normals and light after each step.
/// The trace holds the loss before each step plus the final loss.
pub fn sfs_optimize(gray: &ScalarGrid, mask: &MaskGrid, cfg: &SfsConfig) -> Result<SfsResult> {
    if cfg.iterations == 0 {
        return Err(Error::param("SfS needs at least one iteration"));
    }
    if !(cfg.lr > 0.0 && cfg.lambda >= 0.0) {
        return Err(Error::param("SfS lr must be positive and lambda non-negative"));
    }
    let mut state = SfsState::new(gray, mask, cfg.lambda, cfg.light_init)?;
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for iteration in 0..=cfg.iterations {
        let loss = sfs_loss(&state, gray)?;
        trace.push(SfsTracePoint {
            value: loss.value,
            photo: loss.photo,
            smooth: loss.smooth,
        });
        if !loss.value.is_finite() {
            return Err(Error::Aborted {
                seed: 0,
                iteration,
                reason: format!("non-finite SfS loss; trace: {:?}", trace.iter().map(|t| t.value).collect::<Vec<_>>()),
            });
        }
        if iteration == cfg.iterations {
            break;
        }
        // Per-pixel step: undo the 1/|Ω| of the mean so the normal update
        // does not shrink with the mask size.
        let n_scale = cfg.lr * state.mask.count() as f64;
        let n: Vec<Vec3> = state
            .normals
            .values()
            .iter()
            .zip(loss.d_normals.values())
            .zip(state.mask.values())
            .map(|((&n, &g), &m)| {
                if !m {
                    return n;
                }
                vec3::normalize(vec3::sub(n, vec3::scale(g, n_scale))).unwrap_or(FALLBACK_NORMAL)
            })
            .collect();
        state.normals = Vec3Grid::from_vec_unchecked(gray.height(), gray.width(), n);
        state.light = vec3::normalize(vec3::sub(state.light, vec3::scale(loss.d_light, cfg.lr))).unwrap_or(state.light);
    }
    Ok(SfsResult { state, trace })
}
