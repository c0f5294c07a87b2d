//! Reverse-mode gradients of the re-lighting pipeline
//! `disparity → depth → points → normals → re-lit image`.
//!
//! The forward pass records every intermediate needed by the stage adjoints
//! in a [`RenderTape`]; [`pullback`] then maps an image-space adjoint back to
//! disparity, camera and offset gradients.

use crate::error::{Error, Result};
use crate::geometry::{
    coord_u, coord_v, disparity_to_depth, point_gradients, stencil, unproject, CameraKind,
    CameraModel, DisparityToDepthParams, FALLBACK_NORMAL,
};
use crate::grid::{same_shape, RgbGrid, ScalarGrid, Vec3Grid};
use crate::shading::{
    shade_pixel, ClampGradient, LightingSample, PixelShade, TonemapParams, OUTPUT_CEIL,
    OUTPUT_FLOOR,
};
use crate::vec3::{self, Vec3};

/// Which scalar parameters besides the disparity grid receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamSet {
    pub camera: bool,
    pub b: bool,
}

/// Everything the forward pass needs besides the disparity grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSetup {
    pub camera: CameraModel,
    pub depth_params: DisparityToDepthParams,
    pub tonemap: TonemapParams,
    pub clamp: ClampGradient,
    pub optimize_b: bool,
}

impl RenderSetup {
    pub fn new(camera: CameraModel) -> Self {
        Self {
            camera,
            depth_params: DisparityToDepthParams::default(),
            tonemap: TonemapParams::default(),
            clamp: ClampGradient::default(),
            optimize_b: false,
        }
    }

    pub fn param_set(&self) -> ParamSet {
        ParamSet {
            camera: self.camera.optimizable,
            b: self.optimize_b,
        }
    }
}

/// Recorded intermediates of one forward render.
#[derive(Debug, Clone)]
pub struct RenderTape {
    height: usize,
    width: usize,
    setup: RenderSetup,
    sample: LightingSample,
    halfway: Vec3,
    image: RgbGrid,
    depth: ScalarGrid,
    grad_u: Vec<Vec3>,
    grad_v: Vec<Vec3>,
    cross_norm: Vec<f64>,
    normals: Vec3Grid,
    degenerate: usize,
    shades: Vec<PixelShade>,
}

impl RenderTape {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn depth(&self) -> &ScalarGrid {
        &self.depth
    }

    pub fn normals(&self) -> &Vec3Grid {
        &self.normals
    }

    pub fn degenerate_normals(&self) -> usize {
        self.degenerate
    }

    pub fn sample(&self) -> &LightingSample {
        &self.sample
    }

    pub fn params(&self) -> ParamSet {
        self.setup.param_set()
    }

    /// Re-evaluates the shading from the recorded normals.
    pub fn replay(&self) -> RgbGrid {
        let out = self
            .image
            .values()
            .iter()
            .zip(self.normals.values())
            .map(|(&px, &n)| shade_pixel(px, n, &self.sample, self.halfway, &self.setup.tonemap).out)
            .collect();
        RgbGrid::from_vec_unchecked(self.height, self.width, out)
    }

    pub fn output(&self) -> RgbGrid {
        RgbGrid::from_vec_unchecked(
            self.height,
            self.width,
            self.shades.iter().map(|s| s.out).collect(),
        )
    }

    /// Pre-clamp tonemapped values, one triple per pixel.
    pub fn pre_clamp(&self) -> Vec<[f64; 3]> {
        self.shades.iter().map(|s| s.pre_clamp).collect()
    }

    /// Diffuse cosine `N·l` per pixel.
    pub fn n_dot_l(&self) -> Vec<f64> {
        self.shades.iter().map(|s| s.n_dot_l).collect()
    }
}

/// Gradients with respect to the optimized quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub d_disparity: ScalarGrid,
    /// Zero unless the camera is optimizable.
    pub d_camera: f64,
    /// Zero unless the offset is optimizable.
    pub d_b: f64,
}

impl ParamGradients {
    pub fn is_finite(&self) -> bool {
        self.d_camera.is_finite()
            && self.d_b.is_finite()
            && self.d_disparity.values().iter().all(|v| v.is_finite())
    }
}

/// Forward render that keeps the tape.
pub fn render_recorded(
    disp: &ScalarGrid,
    setup: &RenderSetup,
    image: &RgbGrid,
    sample: &LightingSample,
) -> Result<(RgbGrid, RenderTape)> {
    same_shape(disp.shape(), image.shape())?;
    let (height, width) = disp.shape();
    let depth = disparity_to_depth(disp, &setup.depth_params)?;
    let points = unproject(&depth, &setup.camera)?;
    let (grad_u, grad_v) = point_gradients(&points);

    let mut cross_norm = Vec::with_capacity(height * width);
    let mut normals = Vec::with_capacity(height * width);
    let mut degenerate = 0;
    for (&a, &b) in grad_u.iter().zip(&grad_v) {
        let c = vec3::cross(a, b);
        match vec3::normalize(c) {
            Some(n) => {
                cross_norm.push(vec3::norm(c));
                normals.push(n);
            }
            None => {
                degenerate += 1;
                cross_norm.push(0.0);
                normals.push(FALLBACK_NORMAL);
            }
        }
    }
    let normals = Vec3Grid::new(height, width, normals)?;

    let halfway = sample.halfway();
    let shades: Vec<PixelShade> = image
        .values()
        .iter()
        .zip(normals.values())
        .map(|(&px, &n)| shade_pixel(px, n, sample, halfway, &setup.tonemap))
        .collect();

    let tape = RenderTape {
        height,
        width,
        setup: *setup,
        sample: *sample,
        halfway,
        image: image.clone(),
        depth,
        grad_u,
        grad_v,
        cross_norm,
        normals,
        degenerate,
        shades,
    };
    Ok((tape.output(), tape))
}

/// Forward render without keeping intermediates.
pub fn render(
    disp: &ScalarGrid,
    setup: &RenderSetup,
    image: &RgbGrid,
    sample: &LightingSample,
) -> Result<RgbGrid> {
    render_recorded(disp, setup, image, sample).map(|(out, _)| out)
}

/// Exact reverse-mode gradient of `⟨adjoint, Î⟩`.
pub fn pullback(tape: &RenderTape, adjoint: &Vec3Grid) -> Result<ParamGradients> {
    same_shape(tape.shape(), adjoint.shape())?;
    let (h, w) = tape.shape();
    let s = &tape.sample;
    let gamma = tape.setup.tonemap.gamma;
    let inv_gamma = 1.0 / gamma;

    // Shading: image adjoint → normal adjoint → unnormalized cross adjoint.
    let mut g_cross = vec![[0.0; 3]; h * w];
    for (i, (shade, g_out)) in tape.shades.iter().zip(adjoint.values()).enumerate() {
        let mut g_diffuse = 0.0;
        let mut g_specular = 0.0;
        for k in 0..3 {
            let pre = shade.pre_clamp[k];
            let passes = match tape.setup.clamp {
                ClampGradient::Literal => (OUTPUT_FLOOR..=OUTPUT_CEIL).contains(&pre),
                ClampGradient::StraightThrough => true,
            };
            if !passes || g_out[k] == 0.0 {
                continue;
            }
            let lin = shade.linear[k];
            if lin <= 0.0 {
                continue;
            }
            let g_lin = g_out[k] * inv_gamma * lin.powf(inv_gamma - 1.0);
            g_diffuse += g_lin * shade.albedo[k];
            g_specular += g_lin;
        }

        let mut g_n = [0.0; 3];
        if shade.n_dot_l > 0.0 && g_diffuse != 0.0 {
            g_n = vec3::add(g_n, vec3::scale(s.light, s.beta1 * g_diffuse));
        }
        if shade.n_dot_h > 0.0 && g_specular != 0.0 && s.beta2 != 0.0 {
            let d = s.beta2 * s.alpha * shade.n_dot_h.powf(s.alpha - 1.0);
            g_n = vec3::add(g_n, vec3::scale(tape.halfway, d * g_specular));
        }

        let len = tape.cross_norm[i];
        if len > 0.0 {
            let n = tape.normals.values()[i];
            let radial = vec3::dot(n, g_n);
            g_cross[i] = vec3::scale(vec3::sub(g_n, vec3::scale(n, radial)), 1.0 / len);
        }
    }

    // Cross product c = ∂u × ∂v, then the difference stencils, transposed.
    let mut g_points = vec![[0.0; 3]; h * w];
    for r in 0..h {
        let (rm, rp, wr) = stencil(r, h);
        for c in 0..w {
            let i = r * w + c;
            let gc = g_cross[i];
            if gc == [0.0; 3] {
                continue;
            }
            let g_du = vec3::cross(tape.grad_v[i], gc);
            let g_dv = vec3::cross(gc, tape.grad_u[i]);
            let (cm, cp, wc) = stencil(c, w);
            let (pu, mu) = (r * w + cp, r * w + cm);
            g_points[pu] = vec3::add(g_points[pu], vec3::scale(g_du, wc));
            g_points[mu] = vec3::sub(g_points[mu], vec3::scale(g_du, wc));
            let (pv, mv) = (rp * w + c, rm * w + c);
            g_points[pv] = vec3::add(g_points[pv], vec3::scale(g_dv, wr));
            g_points[mv] = vec3::sub(g_points[mv], vec3::scale(g_dv, wr));
        }
    }

    // Unprojection and the disparity → depth quotient.
    let cam = &tape.setup.camera;
    let k = cam.scale_or_focal;
    let dp = &tape.setup.depth_params;
    let mut d_camera = 0.0;
    let mut d_b = 0.0;
    let mut d_disp = Vec::with_capacity(h * w);
    for r in 0..h {
        let v = coord_v(r, h);
        for c in 0..w {
            let u = coord_u(c, w);
            let i = r * w + c;
            let gx = g_points[i];
            let depth = tape.depth.values()[i];
            let g_depth = match cam.kind {
                CameraKind::Orthographic => {
                    d_camera -= (gx[0] * u + gx[1] * v) / (k * k);
                    gx[2]
                }
                CameraKind::Perspective => {
                    d_camera -= (gx[0] * u + gx[1] * v) * depth / (k * k);
                    (gx[0] * u + gx[1] * v) / k + gx[2]
                }
            };
            // D = s/(x + b)  ⇒  ∂D/∂x = ∂D/∂b = −D²/s
            let g = -g_depth * depth * depth / dp.s;
            d_b += g;
            d_disp.push(g);
        }
    }

    let params = tape.params();
    let grads = ParamGradients {
        d_disparity: ScalarGrid::from_vec_unchecked(h, w, d_disp),
        d_camera: if params.camera { d_camera } else { 0.0 },
        d_b: if params.b { d_b } else { 0.0 },
    };
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient in pullback".into()));
    }
    Ok(grads)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_dev: f64,
    /// Largest `|analytic − fd| / |fd|` over coordinates with `|fd| > atol`.
    pub max_rel_dev: f64,
    /// Coordinates violating `|analytic − fd| ≤ atol + rtol·|fd|`.
    pub failures: usize,
    pub worst_index: Option<usize>,
    pub rtol: f64,
    pub atol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn merge(&mut self, other: &CheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        self.failures += other.failures;
        if other.max_abs_dev > self.max_abs_dev {
            self.max_abs_dev = other.max_abs_dev;
        }
        self.max_rel_dev = self.max_rel_dev.max(other.max_rel_dev);
    }
}

/// Central-difference estimate of `∂f/∂x_i` for every coordinate.
pub fn central_differences(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 1e-8 && eps < 1e-2) {
        return Err(Error::param(format!("finite-difference step {eps} outside (1e-8, 1e-2)")));
    }
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        x[i] = x0[i] + eps;
        let fp = f(&x)?;
        x[i] = x0[i] - eps;
        let fm = f(&x)?;
        x[i] = x0[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite forward evaluation at coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * eps));
    }
    Ok(out)
}

/// Compares `analytic` with a central-difference estimate of `f` at `x0`.
/// Coordinates for which `skip(i)` is true are not compared.
pub fn finite_diff_check(
    f: impl FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    analytic: &[f64],
    eps: f64,
    rtol: f64,
    atol: f64,
) -> Result<CheckReport> {
    if analytic.len() != x0.len() {
        return Err(Error::shape("analytic gradient length differs from parameter vector"));
    }
    let fd = central_differences(f, x0, eps)?;
    Ok(compare(analytic, &fd, rtol, atol, |_| false))
}

fn compare(analytic: &[f64], fd: &[f64], rtol: f64, atol: f64, skip: impl Fn(usize) -> bool) -> CheckReport {
    let mut report = CheckReport {
        checked: 0,
        skipped: 0,
        max_abs_dev: 0.0,
        max_rel_dev: 0.0,
        failures: 0,
        worst_index: None,
        rtol,
        atol,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for (i, (&a, &e)) in analytic.iter().zip(fd).enumerate() {
        if skip(i) {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let dev = (a - e).abs();
        report.max_abs_dev = report.max_abs_dev.max(dev);
        if e.abs() > atol {
            report.max_rel_dev = report.max_rel_dev.max(dev / e.abs());
        }
        let excess = dev - (atol + rtol * e.abs());
        if excess > 0.0 {
            report.failures += 1;
        }
        if excess > worst_excess {
            worst_excess = excess;
            report.worst_index = Some(i);
        }
    }
    report
}

/// A randomized instance of the pipeline gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub disparity: ScalarGrid,
    pub image: RgbGrid,
    pub setup: RenderSetup,
    pub sample: LightingSample,
    pub adjoint: Vec3Grid,
}

/// Per-pixel quantities whose sign change marks a non-differentiable point.
fn kink_values(shades: &[PixelShade], clamp: ClampGradient) -> Vec<[f64; 7]> {
    shades
        .iter()
        .map(|s| {
            let mut k = [0.0; 7];
            k[0] = s.n_dot_l;
            for c in 0..3 {
                match clamp {
                    ClampGradient::Literal => {
                        k[1 + 2 * c] = s.pre_clamp[c] - OUTPUT_FLOOR;
                        k[2 + 2 * c] = s.pre_clamp[c] - OUTPUT_CEIL;
                    }
                    // The tonemap derivative is singular at zero radiance.
                    ClampGradient::StraightThrough => {
                        k[1 + 2 * c] = s.linear[c];
                        k[2 + 2 * c] = 1.0;
                    }
                }
            }
            k
        })
        .collect()
}

fn objective(tape: &RenderTape, adjoint: &Vec3Grid) -> f64 {
    tape.shades
        .iter()
        .zip(adjoint.values())
        .map(|(s, g)| s.out[0] * g[0] + s.out[1] * g[1] + s.out[2] * g[2])
        .sum()
}

/// Checks [`pullback`] against central differences of `⟨adjoint, Î⟩` over
/// every disparity pixel and, when enabled, the camera and offset scalars.
///
/// A coordinate is excluded when its perturbation moves any pixel across a
/// kink of `max(·, 0)` or the clamp, or leaves a perturbed pixel within
/// `10·eps` of one.
pub fn check_render_gradients(case: &GradCheckCase, eps: f64, rtol: f64, atol: f64) -> Result<CheckReport> {
    let (_, tape) = render_recorded(&case.disparity, &case.setup, &case.image, &case.sample)?;
    let grads = pullback(&tape, &case.adjoint)?;
    let base_kinks = kink_values(&tape.shades, case.setup.clamp);
    let margin = 10.0 * eps;

    let evaluate = |disp: &ScalarGrid, setup: &RenderSetup| -> Result<(f64, Vec<[f64; 7]>)> {
        let (_, t) = render_recorded(disp, setup, &case.image, &case.sample)?;
        Ok((objective(&t, &case.adjoint), kink_values(&t.shades, setup.clamp)))
    };

    let near_kink = |plus: &[[f64; 7]], minus: &[[f64; 7]]| -> bool {
        plus.iter().zip(minus).zip(&base_kinks).any(|((p, m), b)| {
            (0..7).any(|j| {
                let moved = p[j] != m[j];
                let crosses = p[j].signum() != m[j].signum() || p[j].signum() != b[j].signum();
                crosses || (moved && b[j].abs() < margin)
            })
        })
    };

    let (h, w) = case.disparity.shape();
    let mut analytic = grads.d_disparity.values().to_vec();
    let mut fd = Vec::with_capacity(h * w + 2);
    let mut excluded = Vec::with_capacity(h * w + 2);
    let mut values = case.disparity.values().to_vec();
    for i in 0..h * w {
        let x0 = values[i];
        values[i] = x0 + eps;
        let (fp, kp) = evaluate(&ScalarGrid::new(h, w, values.clone())?, &case.setup)?;
        values[i] = x0 - eps;
        let (fm, km) = evaluate(&ScalarGrid::new(h, w, values.clone())?, &case.setup)?;
        values[i] = x0;
        fd.push((fp - fm) / (2.0 * eps));
        excluded.push(near_kink(&kp, &km));
    }

    let params = case.setup.param_set();
    let mut scalar = |analytic_value: f64, perturb: &dyn Fn(&mut RenderSetup, f64)| -> Result<()> {
        let mut plus = case.setup;
        perturb(&mut plus, eps);
        let mut minus = case.setup;
        perturb(&mut minus, -eps);
        let (fp, kp) = evaluate(&case.disparity, &plus)?;
        let (fm, km) = evaluate(&case.disparity, &minus)?;
        analytic.push(analytic_value);
        fd.push((fp - fm) / (2.0 * eps));
        excluded.push(near_kink(&kp, &km));
        Ok(())
    };
    if params.camera {
        scalar(grads.d_camera, &|s, d| s.camera.scale_or_focal += d)?;
    }
    if params.b {
        scalar(grads.d_b, &|s, d| s.depth_params.b += d)?;
    }

    if fd.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite finite-difference estimate".into()));
    }
    Ok(compare(&analytic, &fd, rtol, atol, |i| excluded[i]))
}

/// Runs [`check_render_gradients`] over several cases and merges the reports.
pub fn check_many(cases: &[GradCheckCase], eps: f64, rtol: f64, atol: f64) -> Result<CheckReport> {
    let mut total: Option<CheckReport> = None;
    for case in cases {
        let r = check_render_gradients(case, eps, rtol, atol)?;
        match total.as_mut() {
            Some(t) => t.merge(&r),
            None => total = Some(r),
        }
    }
    total.ok_or_else(|| Error::param("no gradient-check cases"))
}

/// Random smooth-ish disparity, random image, lighting and adjoint.
pub fn random_case(
    size: usize,
    camera: CameraKind,
    seed: u64,
) -> Result<GradCheckCase> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq: [f64; 4] = [rng.random_range(0.5..2.5), rng.random_range(0.5..2.5), rng.random(), rng.random()];
    let disparity = ScalarGrid::from_fn(size, size, |r, c| {
        let (u, v) = (coord_u(c, size), coord_v(r, size));
        0.5 + 0.25 * (freq[0] * u + 6.0 * freq[2]).sin() * (freq[1] * v + 6.0 * freq[3]).cos()
    })?;
    let disparity = ScalarGrid::new(
        size,
        size,
        disparity.values().iter().map(|d| d + rng.random_range(-0.02..0.02)).collect(),
    )?;
    let image = RgbGrid::from_fn(size, size, |_, _| {
        [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)]
    })?;
    let mut cam = CameraModel::default_for(camera);
    cam.optimizable = true;
    let mut setup = RenderSetup::new(cam);
    setup.optimize_b = true;
    let sample = crate::shading::sample_lighting(&mut rng);
    let adjoint = Vec3Grid::new(
        size,
        size,
        (0..size * size)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect(),
    )?;
    Ok(GradCheckCase {
        disparity,
        image,
        setup,
        sample,
        adjoint,
    })
}
