//! Test-time optimization of a disparity map against a guidance scorer.
//!
//! Each step draws a fresh lighting sample, re-lights the input image with
//! the current disparity, turns the scorer's guidance signal into parameter
//! gradients, adds the smoothness regularizer and applies an AdamW update.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, DisparityToDepthParams};
use crate::grad::{pullback, render_recorded, RenderSetup};
use crate::guidance::{sds_gradient, GuidanceConfig, Scorer};
use crate::grid::{same_shape, RgbGrid, ScalarGrid};
use crate::io::raw::{write_raw_grid, RawDtype};
use crate::shading::{sample_lighting, ClampGradient, TonemapParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParameterizationKind {
    /// Optimize disparity pixels directly.
    #[default]
    Direct,
    /// Disparity is the initial map plus a low-passed latent offset.
    Smoothed,
}

impl std::str::FromStr for ParameterizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "smoothed" => Ok(Self::Smoothed),
            other => Err(Error::param(format!("unknown parameterization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessNorm {
    /// Mean squared norm of the forward-difference gradient.
    #[default]
    Squared,
    /// Mean L1 norm of the forward-difference gradient.
    L1,
}

impl std::str::FromStr for SmoothnessNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Self::Squared),
            "l1" => Ok(Self::L1),
            other => Err(Error::param(format!("unknown smoothness norm '{other}'"))),
        }
    }
}

/// Separable 5-tap binomial kernel.
const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// 5×5 binomial blur with edge replication.
pub fn binomial_blur(g: &ScalarGrid) -> ScalarGrid {
    let (h, w) = g.shape();
    let x = g.values();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = (0..5)
                .map(|k| BINOMIAL5[k] * x[r * w + (c + k).saturating_sub(2).min(w - 1)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = (0..5)
                .map(|k| BINOMIAL5[k] * tmp[(r + k).saturating_sub(2).min(h - 1) * w + c])
                .sum();
        }
    }
    ScalarGrid::from_vec_unchecked(h, w, out)
}

/// Transpose of [`binomial_blur`].
fn binomial_blur_adjoint(g: &ScalarGrid) -> ScalarGrid {
    let (h, w) = g.shape();
    let y = g.values();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            for (k, wk) in BINOMIAL5.iter().enumerate() {
                let rr = (r + k).saturating_sub(2).min(h - 1);
                tmp[rr * w + c] += wk * y[r * w + c];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            for (k, wk) in BINOMIAL5.iter().enumerate() {
                let cc = (c + k).saturating_sub(2).min(w - 1);
                out[r * w + cc] += wk * tmp[r * w + c];
            }
        }
    }
    ScalarGrid::from_vec_unchecked(h, w, out)
}

/// How optimized parameters map to a disparity map.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthParameterization {
    pub kind: ParameterizationKind,
    pub latent: ScalarGrid,
    /// Blur passes of the smoothed parameterization; each widens the kernel.
    pub passes: usize,
    base: ScalarGrid,
}

impl DepthParameterization {
    pub fn new(kind: ParameterizationKind, init: &ScalarGrid) -> Self {
        Self::with_passes(kind, init, 1)
    }

    pub fn with_passes(kind: ParameterizationKind, init: &ScalarGrid, passes: usize) -> Self {
        let latent = match kind {
            ParameterizationKind::Direct => init.clamp(0.0, 1.0),
            ParameterizationKind::Smoothed => ScalarGrid::from_vec_unchecked(
                init.height(),
                init.width(),
                vec![0.0; init.len()],
            ),
        };
        Self {
            kind,
            latent,
            passes: passes.max(1),
            base: init.clone(),
        }
    }

    fn pre_clamp(&self) -> ScalarGrid {
        match self.kind {
            ParameterizationKind::Direct => self.latent.clone(),
            ParameterizationKind::Smoothed => {
                let blurred = (1..self.passes).fold(binomial_blur(&self.latent), |g, _| binomial_blur(&g));
                ScalarGrid::from_vec_unchecked(
                    blurred.height(),
                    blurred.width(),
                    blurred.values().iter().zip(self.base.values()).map(|(d, b)| b + d).collect(),
                )
            }
        }
    }

    /// Disparity in `[0, 1]`.
    pub fn decode(&self) -> ScalarGrid {
        self.pre_clamp().clamp(0.0, 1.0)
    }

    /// Pulls a disparity gradient back to the latent grid.
    pub fn chain(&self, d_disparity: &ScalarGrid) -> ScalarGrid {
        let pre = self.pre_clamp();
        let masked = ScalarGrid::from_vec_unchecked(
            pre.height(),
            pre.width(),
            pre.values()
                .iter()
                .zip(d_disparity.values())
                .map(|(&p, &g)| if (0.0..=1.0).contains(&p) { g } else { 0.0 })
                .collect(),
        );
        match self.kind {
            ParameterizationKind::Direct => masked,
            ParameterizationKind::Smoothed => {
                (1..self.passes).fold(binomial_blur_adjoint(&masked), |g, _| binomial_blur_adjoint(&g))
            }
        }
    }

    /// Keeps the decoded disparity inside `[0, 1]` after an update.
    fn project(&mut self) {
        if self.kind == ParameterizationKind::Direct {
            self.latent = self.latent.clamp(0.0, 1.0);
        }
    }
}

/// Mean gradient-norm regularizer `λ/(hw)·Σ‖∇d‖²` (or its L1 variant) with
/// forward differences; the last row/column contribute no gradient along
/// the missing direction.
pub fn smoothness_loss(disp: &ScalarGrid, lambda1: f64, norm: SmoothnessNorm) -> (f64, ScalarGrid) {
    let (h, w) = disp.shape();
    let d = disp.values();
    let scale = lambda1 / (h * w) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; h * w];
    let term = |i: usize, j: usize, value: &mut f64, grad: &mut [f64]| {
        let diff = d[j] - d[i];
        let (v, g) = match norm {
            SmoothnessNorm::Squared => (diff * diff, 2.0 * diff),
            SmoothnessNorm::L1 => (diff.abs(), if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 }),
        };
        *value += v;
        grad[j] += scale * g;
        grad[i] -= scale * g;
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                term(i, i + 1, &mut value, &mut grad);
            }
            if r + 1 < h {
                term(i, i + w, &mut value, &mut grad);
            }
        }
    }
    (scale * value, ScalarGrid::from_vec_unchecked(h, w, grad))
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl MomentState {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub groups: Vec<MomentState>,
    pub step: u64,
    pub hyper: AdamParams,
}

impl OptimizerState {
    pub fn new(group_sizes: &[usize], hyper: AdamParams) -> Self {
        Self {
            groups: group_sizes.iter().map(|&n| MomentState::zeros(n)).collect(),
            step: 0,
            hyper,
        }
    }

    /// Advances the shared step counter; call once per optimizer step.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// One AdamW update of `params` in group `group`, with decoupled decay.
    pub fn update(&mut self, group: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let h = self.hyper;
        let t = self.step.max(1) as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let st = &mut self.groups[group];
        for i in 0..params.len() {
            let g = grads[i];
            st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g;
            st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * params[i]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lr_disparity: f64,
    pub lr_camera: f64,
    pub lambda1: f64,
    pub smoothness: SmoothnessNorm,
    pub ensemble_runs: usize,
    pub seed: u64,
    pub parameterization: ParameterizationKind,
    pub smoothing_passes: usize,
    pub camera: CameraModel,
    pub depth_params: DisparityToDepthParams,
    pub optimize_b: bool,
    pub tonemap: TonemapParams,
    pub clamp: ClampGradient,
    pub adam: AdamParams,
    pub guidance: GuidanceConfig,
    /// Directory receiving one raw-grid file of disparity gradients per step.
    pub export_gradients: Option<std::path::PathBuf>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr_disparity: 1e-3,
            lr_camera: 2e-6,
            lambda1: 1.0,
            smoothness: SmoothnessNorm::default(),
            ensemble_runs: 10,
            seed: 0,
            parameterization: ParameterizationKind::default(),
            smoothing_passes: 6,
            camera: CameraModel::default(),
            depth_params: DisparityToDepthParams::default(),
            optimize_b: false,
            tonemap: TonemapParams::default(),
            clamp: ClampGradient::default(),
            adam: AdamParams::default(),
            guidance: GuidanceConfig::default(),
            export_gradients: None,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_disparity > 0.0 && self.lr_camera > 0.0) {
            return Err(Error::param("learning rates must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::param("lambda1 must be non-negative"));
        }
        if self.smoothing_passes == 0 {
            return Err(Error::param("smoothing_passes must be at least 1"));
        }
        if self.ensemble_runs == 0 {
            return Err(Error::param("ensemble needs at least one run"));
        }
        self.depth_params.validate()?;
        CameraModel::new(self.camera.kind, self.camera.scale_or_focal, self.camera.optimizable)?;
        Ok(())
    }

    pub fn render_setup(&self) -> RenderSetup {
        RenderSetup {
            camera: self.camera,
            depth_params: self.depth_params,
            tonemap: self.tonemap,
            clamp: self.clamp,
            optimize_b: self.optimize_b,
        }
    }
}

/// Mutable state of one optimization run.
#[derive(Debug, Clone)]
pub struct RefineState {
    pub param: DepthParameterization,
    pub setup: RenderSetup,
    pub optimizer: OptimizerState,
    pub iteration: usize,
    pub run_seed: u64,
    rng: ChaCha8Rng,
}

/// Seed stream for run `run` of an ensemble seeded with `seed`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

impl RefineState {
    pub fn new(init_disp: &ScalarGrid, cfg: &RefineConfig, run: u64) -> Result<Self> {
        cfg.validate()?;
        let param = DepthParameterization::with_passes(cfg.parameterization, init_disp, cfg.smoothing_passes);
        let n = param.latent.len();
        Ok(Self {
            param,
            setup: cfg.render_setup(),
            optimizer: OptimizerState::new(&[n, 2], cfg.adam),
            iteration: 0,
            run_seed: cfg.seed,
            rng: run_rng(cfg.seed, run),
        })
    }

    pub fn disparity(&self) -> ScalarGrid {
        self.param.decode()
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub iteration: usize,
    pub smoothness: f64,
    pub timestep: usize,
    pub guidance_norm: f64,
}

/// One optimization iteration.
pub fn refine_step<S: Scorer + ?Sized>(
    state: &mut RefineState,
    image: &RgbGrid,
    scorer: &mut S,
    cfg: &RefineConfig,
) -> Result<StepReport> {
    let abort = |state: &RefineState, reason: String| Error::Aborted {
        seed: state.run_seed,
        iteration: state.iteration,
        reason,
    };

    let sample = sample_lighting(&mut state.rng);
    let disp = state.param.decode();
    let (rendered, tape) = render_recorded(&disp, &state.setup, image, &sample)?;
    let signal = sds_gradient(&rendered, scorer, &cfg.guidance, &sample, &mut state.rng)?;
    let grads = pullback(&tape, &signal.grad).map_err(|e| abort(state, e.to_string()))?;
    let (smooth_value, smooth_grad) = smoothness_loss(&disp, cfg.lambda1, cfg.smoothness);

    let d_disp = grads
        .d_disparity
        .map2(&smooth_grad, |a, b| a + b)
        .map_err(|e| abort(state, e.to_string()))?;
    let d_latent = state.param.chain(&d_disp);
    if d_latent.values().iter().any(|v| !v.is_finite()) || !grads.is_finite() {
        return Err(abort(state, "non-finite gradient".into()));
    }

    if let Some(dir) = &cfg.export_gradients {
        let path = dir.join(format!("grad_s{}_i{:06}.rdgr", state.run_seed, state.iteration));
        export_gradients(&d_disp, &path)?;
    }

    state.optimizer.tick();
    let mut latent = state.param.latent.values().to_vec();
    state.optimizer.update(0, &mut latent, d_latent.values(), cfg.lr_disparity);
    state.param.latent = ScalarGrid::new(latent.len() / d_latent.width(), d_latent.width(), latent)
        .map_err(|e| abort(state, e.to_string()))?;
    state.param.project();

    let params = state.setup.param_set();
    if params.camera || params.b {
        let mut scalars = [state.setup.camera.scale_or_focal, state.setup.depth_params.b];
        let g = [grads.d_camera, grads.d_b];
        state.optimizer.update(1, &mut scalars, &g, cfg.lr_camera);
        // Keep both strictly positive.
        state.setup.camera.scale_or_focal = scalars[0].max(1e-6);
        state.setup.depth_params.b = scalars[1].max(1e-6);
    }

    let report = StepReport {
        iteration: state.iteration,
        smoothness: smooth_value,
        timestep: signal.t,
        guidance_norm: signal.grad.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    state.iteration += 1;
    Ok(report)
}

/// Result of one optimization run.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub disparity: ScalarGrid,
    pub camera: CameraModel,
    pub b: f64,
    pub trace: Vec<StepReport>,
}

/// Runs `cfg.iterations` steps from `init_disp` on seed stream `run`.
pub fn refine_run<S: Scorer + ?Sized>(
    image: &RgbGrid,
    init_disp: &ScalarGrid,
    cfg: &RefineConfig,
    scorer: &mut S,
    run: u64,
) -> Result<RefineOutcome> {
    same_shape(image.shape(), init_disp.shape())?;
    if init_disp.min() < 0.0 || init_disp.max() > 1.0 {
        return Err(Error::Domain("initial disparity must lie in [0, 1]".into()));
    }
    let mut state = RefineState::new(init_disp, cfg, run)?;
    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        trace.push(refine_step(&mut state, image, scorer, cfg)?);
    }
    Ok(RefineOutcome {
        disparity: state.disparity(),
        camera: state.setup.camera,
        b: state.setup.depth_params.b,
        trace,
    })
}

/// Single-run refinement returning only the disparity.
pub fn refine<S: Scorer + ?Sized>(
    image: &RgbGrid,
    init_disp: &ScalarGrid,
    cfg: &RefineConfig,
    scorer: &mut S,
) -> Result<ScalarGrid> {
    refine_run(image, init_disp, cfg, scorer, 0).map(|o| o.disparity)
}

/// Per-pixel mean of the given maps.
pub fn ensemble(maps: &[ScalarGrid]) -> Result<ScalarGrid> {
    let first = maps.first().ok_or_else(|| Error::param("ensemble of zero maps"))?;
    let mut acc = vec![0.0; first.len()];
    for m in maps {
        same_shape(first.shape(), m.shape())?;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    ScalarGrid::new(first.height(), first.width(), acc.into_iter().map(|a| a / n).collect())
}

/// Writes a gradient grid as a little-endian `f64` raw-grid file.
pub fn export_gradients(grads: &ScalarGrid, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_raw_grid(path, grads, RawDtype::F64)
}
