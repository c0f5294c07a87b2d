//! Tonemapping, randomized Blinn-Phong re-lighting and the lighting sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{same_shape, RgbGrid, Vec3Grid};
use crate::vec3::{self, Vec3};

/// Lower bound of the rendered output.
pub const OUTPUT_FLOOR: f64 = 1e-3;
pub const OUTPUT_CEIL: f64 = 1.0;

/// Viewer direction.
pub const VIEW_DIR: Vec3 = [0.0, 0.0, 1.0];

pub const DEFAULT_GAMMA: f64 = 2.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TonemapParams {
    pub gamma: f64,
}

impl TonemapParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

impl Default for TonemapParams {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA }
    }
}

/// `τ(x) = x^(1/γ)`, linear to display.
#[inline]
pub fn tonemap_value(x: f64, p: &TonemapParams) -> f64 {
    x.powf(1.0 / p.gamma)
}

/// `τ⁻¹(x) = x^γ`, display to linear.
#[inline]
pub fn inverse_tonemap_value(x: f64, p: &TonemapParams) -> f64 {
    x.powf(p.gamma)
}

fn map_channels(x: &RgbGrid, f: impl Fn(f64) -> f64) -> Result<RgbGrid> {
    RgbGrid::new(
        x.height(),
        x.width(),
        x.values().iter().map(|p| p.map(&f)).collect(),
    )
}

pub fn tonemap(x: &RgbGrid, p: &TonemapParams) -> Result<RgbGrid> {
    map_channels(x, |v| tonemap_value(v, p))
}

pub fn inverse_tonemap(x: &RgbGrid, p: &TonemapParams) -> Result<RgbGrid> {
    map_channels(x, |v| inverse_tonemap_value(v, p))
}

/// One randomized light and material draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingSample {
    /// Unit light direction with positive `z`.
    pub light: Vec3,
    /// Diffuse intensity.
    pub beta1: f64,
    /// Specular intensity, `1 − beta1`.
    pub beta2: f64,
    /// Specular exponent `2^k`.
    pub alpha: f64,
}

impl LightingSample {
    pub fn new(light: Vec3, beta1: f64, beta2: f64, alpha: f64) -> Result<Self> {
        let light = vec3::normalize(light)
            .ok_or_else(|| Error::param("light direction must be non-zero"))?;
        if light[2] <= 0.0 {
            return Err(Error::param("light must point towards the viewer side (l_z > 0)"));
        }
        if !(0.0..=1.0).contains(&beta1) || !(0.0..=1.0).contains(&beta2) {
            return Err(Error::param("intensities must lie in [0, 1]"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("specular exponent must be positive, got {alpha}")));
        }
        Ok(Self {
            light,
            beta1,
            beta2,
            alpha,
        })
    }

    /// Frontal light, purely diffuse.
    pub fn frontal() -> Self {
        Self {
            light: VIEW_DIR,
            beta1: 1.0,
            beta2: 0.0,
            alpha: 16.0,
        }
    }

    /// Blinn halfway vector between light and viewer.
    pub fn halfway(&self) -> Vec3 {
        vec3::normalize(vec3::add(self.light, VIEW_DIR)).unwrap_or(VIEW_DIR)
    }
}

/// Draws intensities, exponent and light direction.
///
/// `(β₁, β₂) ~ U[0,1]²` normalized to sum to one, `α = 2^k` with
/// `k ~ U[2, 8]`, and `l = normalize(L_x, L_y, 1)` with `L_x, L_y ~ U[−1, 1]`.
pub fn sample_lighting<R: Rng + ?Sized>(rng: &mut R) -> LightingSample {
    let beta1 = loop {
        let a: f64 = rng.random();
        let b: f64 = rng.random();
        let sum = a + b;
        if sum > 0.0 {
            break a / sum;
        }
    };
    let k: f64 = rng.random_range(2.0..=8.0);
    let lx: f64 = rng.random_range(-1.0..=1.0);
    let ly: f64 = rng.random_range(-1.0..=1.0);
    LightingSample {
        light: vec3::normalize([lx, ly, 1.0]).expect("l_z = 1 is never zero"),
        beta1,
        // Exact complement; see the sum invariant.
        beta2: 1.0 - beta1,
        alpha: k.exp2(),
    }
}

/// Backward behavior of the output clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampGradient {
    /// Zero gradient where the pre-clamp value lies outside the range.
    #[default]
    Literal,
    /// Gradient passes through the clamp unchanged.
    StraightThrough,
}

impl std::str::FromStr for ClampGradient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(Self::Literal),
            "straight-through" => Ok(Self::StraightThrough),
            other => Err(Error::param(format!("unknown clamp gradient mode '{other}'"))),
        }
    }
}

/// Intermediate values of the shading of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PixelShade {
    pub n_dot_l: f64,
    pub n_dot_h: f64,
    pub albedo: [f64; 3],
    /// Linear radiance before tonemapping.
    pub linear: [f64; 3],
    /// Tonemapped value before clamping.
    pub pre_clamp: [f64; 3],
    pub out: [f64; 3],
}

#[inline]
pub(crate) fn shade_pixel(
    pixel: [f64; 3],
    n: Vec3,
    s: &LightingSample,
    h: Vec3,
    p: &TonemapParams,
) -> PixelShade {
    let n_dot_l = vec3::dot(n, s.light);
    let n_dot_h = vec3::dot(n, h);
    let diffuse = s.beta1 * n_dot_l.max(0.0);
    let specular = s.beta2 * n_dot_h.max(0.0).powf(s.alpha);
    let albedo = pixel.map(|v| inverse_tonemap_value(v, p));
    let linear = albedo.map(|a| diffuse * a + specular);
    let pre_clamp = linear.map(|v| tonemap_value(v, p));
    let out = pre_clamp.map(|v| v.clamp(OUTPUT_FLOOR, OUTPUT_CEIL));
    PixelShade {
        n_dot_l,
        n_dot_h,
        albedo,
        linear,
        pre_clamp,
        out,
    }
}

/// Re-lights `image` with Blinn-Phong shading of `normals`, using the
/// inverse-tonemapped image as albedo and a colorless specular term.
pub fn relight(
    image: &RgbGrid,
    normals: &Vec3Grid,
    s: &LightingSample,
    p: &TonemapParams,
) -> Result<RgbGrid> {
    same_shape(image.shape(), normals.shape())?;
    let h = s.halfway();
    let out = image
        .values()
        .iter()
        .zip(normals.values())
        .map(|(&px, &n)| shade_pixel(px, n, s, h, p).out)
        .collect();
    Ok(RgbGrid::from_vec_unchecked(image.height(), image.width(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> RgbGrid {
        RgbGrid::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    fn rand_normals(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec3Grid {
        Vec3Grid::new(
            h,
            w,
            (0..h * w)
                .map(|_| {
                    let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)];
                    vec3::normalize(v).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tonemap_fixed_points() {
        let p = TonemapParams::default();
        assert_eq!(tonemap_value(1.0, &p), 1.0);
        assert_eq!(tonemap_value(0.0, &p), 0.0);
    }

    #[test]
    fn inverse_tonemap_half() {
        let v = inverse_tonemap_value(0.5, &TonemapParams::default());
        assert!((v - 0.217_637_640_824_031).abs() < 1e-12);
    }

    #[test]
    fn tonemap_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = rand_image(7, 5, &mut rng);
        let p = TonemapParams::default();
        let back = tonemap(&inverse_tonemap(&img, &p).unwrap(), &p).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn sampler_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let floor = 1.0 / 3f64.sqrt();
        for _ in 0..10_000 {
            let s = sample_lighting(&mut rng);
            assert_eq!(s.beta1 + s.beta2, 1.0);
            assert!((4.0..=256.0).contains(&s.alpha));
            let k = s.alpha.log2();
            assert!((2.0 - 1e-12..=8.0 + 1e-12).contains(&k));
            assert!((vec3::norm(s.light) - 1.0).abs() < 1e-9);
            assert!(s.light[2] >= floor - 1e-12);
        }
    }

    #[test]
    fn halfway_of_view_light_is_view() {
        let s = LightingSample::frontal();
        assert_eq!(s.halfway(), VIEW_DIR);
        let s = LightingSample::new([0.3, -0.2, 0.8], 0.5, 0.5, 8.0).unwrap();
        assert!((vec3::norm(s.halfway()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frontal_diffuse_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rand_image(4, 6, &mut rng);
        let normals = Vec3Grid::filled(4, 6, VIEW_DIR).unwrap();
        let out = relight(&img, &normals, &LightingSample::frontal(), &TonemapParams::default()).unwrap();
        for (o, i) in out.values().iter().zip(img.values()) {
            for k in 0..3 {
                assert!((o[k] - i[k].clamp(OUTPUT_FLOOR, 1.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grazing_light_hits_floor() {
        let img = RgbGrid::filled(3, 3, [0.7, 0.4, 0.2]).unwrap();
        let normals = Vec3Grid::filled(3, 3, [0.0, 0.0, 1.0]).unwrap();
        // l ⟂ n is impossible with l_z > 0, so tilt the normals instead.
        let normals_perp = Vec3Grid::filled(3, 3, [1.0, 0.0, 0.0]).unwrap();
        let s = LightingSample::new([0.0, 0.0, 1.0], 1.0, 0.0, 4.0).unwrap();
        let out = relight(&img, &normals_perp, &s, &TonemapParams::default()).unwrap();
        assert!(out.values().iter().flatten().all(|&v| v == OUTPUT_FLOOR));
        let lit = relight(&img, &normals, &s, &TonemapParams::default()).unwrap();
        assert!(lit.values().iter().flatten().all(|&v| v > OUTPUT_FLOOR));
    }

    #[test]
    fn normal_on_halfway_gives_full_specular() {
        let s = LightingSample::new([0.4, 0.1, 1.0], 0.0, 1.0, 64.0).unwrap();
        let h = s.halfway();
        let img = RgbGrid::filled(2, 2, [0.2, 0.5, 0.9]).unwrap();
        let normals = Vec3Grid::filled(2, 2, h).unwrap();
        let out = relight(&img, &normals, &s, &TonemapParams::default()).unwrap();
        assert!(out.values().iter().flatten().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    /// Straight-line scalar evaluation of the shading formula.
    fn oracle_pixel(i: [f64; 3], n: Vec3, l: Vec3, b1: f64, b2: f64, alpha: f64, gamma: f64) -> [f64; 3] {
        let hx = l[0];
        let hy = l[1];
        let hz = l[2] + 1.0;
        let hn = (hx * hx + hy * hy + hz * hz).sqrt();
        let ndl = n[0] * l[0] + n[1] * l[1] + n[2] * l[2];
        let ndh = (n[0] * hx + n[1] * hy + n[2] * hz) / hn;
        let mut o = [0.0; 3];
        for k in 0..3 {
            let albedo = i[k].powf(gamma);
            let mut lin = b1 * if ndl > 0.0 { ndl } else { 0.0 } * albedo;
            if ndh > 0.0 {
                lin += b2 * ndh.powf(alpha);
            }
            let t = lin.powf(1.0 / gamma);
            o[k] = if t < 1e-3 { 1e-3 } else if t > 1.0 { 1.0 } else { t };
        }
        o
    }

    #[test]
    fn relight_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let img = rand_image(8, 8, &mut rng);
            let normals = rand_normals(8, 8, &mut rng);
            let s = sample_lighting(&mut rng);
            let out = relight(&img, &normals, &s, &TonemapParams::default()).unwrap();
            for idx in 0..64 {
                let want = oracle_pixel(img.values()[idx], normals.values()[idx], s.light, s.beta1, s.beta2, s.alpha, 2.2);
                for k in 0..3 {
                    assert!((out.values()[idx][k] - want[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_range_and_colorless_specular() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = rand_image(6, 6, &mut rng);
        let normals = rand_normals(6, 6, &mut rng);
        let mut s = sample_lighting(&mut rng);
        let out = relight(&img, &normals, &s, &TonemapParams::default()).unwrap();
        assert!(out.values().iter().flatten().all(|&v| (OUTPUT_FLOOR..=1.0).contains(&v)));
        s.beta1 = 0.0;
        s.beta2 = 1.0;
        let spec = relight(&img, &normals, &s, &TonemapParams::default()).unwrap();
        assert!(spec.values().iter().all(|p| p[0] == p[1] && p[1] == p[2]));
    }

    #[test]
    fn diffuse_monotone_in_n_dot_l() {
        let s = LightingSample::new([0.0, 0.0, 1.0], 1.0, 0.0, 8.0).unwrap();
        let img = RgbGrid::filled(2, 2, [0.6, 0.3, 0.9]).unwrap();
        let mut prev = [0.0; 3];
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let n = vec3::normalize([(1.0 - t * t).max(0.0).sqrt(), 0.0, t + 1e-9]).unwrap();
            let out = relight(&img, &Vec3Grid::filled(2, 2, n).unwrap(), &s, &TonemapParams::default()).unwrap();
            let px = out.get(0, 0);
            for k in 0..3 {
                assert!(px[k] >= prev[k]);
            }
            prev = px;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = RgbGrid::filled(2, 3, [0.5; 3]).unwrap();
        let normals = Vec3Grid::filled(3, 2, VIEW_DIR).unwrap();
        let r = relight(&img, &normals, &LightingSample::frontal(), &TonemapParams::default());
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
