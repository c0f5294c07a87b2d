//! Score-distillation guidance.
//!
//! A [`Scorer`] predicts the noise injected into a noised rendering. The
//! guidance signal `w(t)·(ε̂ − ε)` is used directly as the image-space
//! adjoint of the renderer; the scorer itself is never differentiated.

pub mod client;
pub mod protocol;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{render, RenderSetup};
use crate::grid::{same_shape, RgbGrid, ScalarGrid, Vec3Grid};
use crate::io::resize::ScorerFrame;
use crate::shading::LightingSample;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;
pub const DEFAULT_T_MIN: f64 = 0.02;
pub const DEFAULT_T_MAX: f64 = 0.98;

/// Discrete diffusion noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    pub t_min: f64,
    pub t_max: f64,
}

impl NoiseSchedule {
    /// Cumulative products of `1 − β` for a linear `β` ramp.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::param("noise schedule needs at least two steps"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "invalid beta range [{beta_start}, {beta_end}]"
            )));
        }
        let mut acc = 1.0;
        let alpha_bar = (0..steps)
            .map(|i| {
                let beta = beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64;
                acc *= 1.0 - beta;
                acc
            })
            .collect();
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::param("noise schedule needs at least two steps"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::param("alpha_bar values must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("alpha_bar must be strictly decreasing"));
        }
        Ok(Self {
            alpha_bar,
            t_min: DEFAULT_T_MIN,
            t_max: DEFAULT_T_MAX,
        })
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t_min) || !(0.0..=1.0).contains(&t_max) || t_min > t_max {
            return Err(Error::param(format!("invalid timestep range [{t_min}, {t_max}]")));
        }
        self.t_min = t_min;
        self.t_max = t_max;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::param(format!("timestep {t} beyond schedule of {}", self.steps())))
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Inclusive integer range of admissible timesteps.
    pub fn timestep_range(&self) -> Result<(usize, usize)> {
        let n = self.steps() as f64;
        // Tolerate representation error in the fractional bounds.
        let lo = (self.t_min * n - 1e-9).ceil().max(0.0) as usize;
        let hi = ((self.t_max * n + 1e-9).floor() as usize).min(self.steps() - 1);
        if lo > hi {
            return Err(Error::param(format!(
                "empty timestep range for t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        Ok((lo, hi))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Uniform integer timestep within the schedule's range.
pub fn sample_timestep<R: Rng + ?Sized>(rng: &mut R, sched: &NoiseSchedule) -> Result<usize> {
    let (lo, hi) = sched.timestep_range()?;
    Ok(rng.random_range(lo..=hi))
}

/// `x_t = √ᾱ_t·x + √(1 − ᾱ_t)·ε`.
pub fn add_noise(x: &Vec3Grid, t: usize, eps: &Vec3Grid, sched: &NoiseSchedule) -> Result<Vec3Grid> {
    same_shape(x.shape(), eps.shape())?;
    let ab = sched.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Vec3Grid::new(
        x.height(),
        x.width(),
        x.values()
            .iter()
            .zip(eps.values())
            .map(|(p, e)| [a * p[0] + b * e[0], a * p[1] + b * e[1], a * p[2] + b * e[2]])
            .collect(),
    )
}

/// Standard-normal noise field.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Result<Vec3Grid> {
    let values = (0..height * width)
        .map(|_| {
            [
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    Vec3Grid::new(height, width, values)
}

/// Noise prediction of an ideal denoiser whose data distribution is the
/// single image `reference`: `ε̂ = (x_t − √ᾱ_t·ref) / √(1 − ᾱ_t)`.
pub fn oracle_score(
    x_t: &Vec3Grid,
    t: usize,
    reference: &RgbGrid,
    sched: &NoiseSchedule,
) -> Result<Vec3Grid> {
    same_shape(x_t.shape(), reference.shape())?;
    let ab = sched.alpha_bar(t)?;
    if ab >= 1.0 {
        return Err(Error::param("oracle score undefined where alpha_bar = 1"));
    }
    let (a, inv) = (ab.sqrt(), 1.0 / (1.0 - ab).sqrt());
    Vec3Grid::new(
        x_t.height(),
        x_t.width(),
        x_t.values()
            .iter()
            .zip(reference.values())
            .map(|(x, r)| [(x[0] - a * r[0]) * inv, (x[1] - a * r[1]) * inv, (x[2] - a * r[2]) * inv])
            .collect(),
    )
}

/// What a scorer sees for one request.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub noised: &'a Vec3Grid,
    /// The injected noise. Only echo/test scorers look at it.
    pub noise: &'a Vec3Grid,
    pub timestep: usize,
    pub prompt: &'a str,
    /// Lighting used for the current rendering.
    pub lighting: &'a LightingSample,
}

/// Maps a noised image to a noise prediction of the same shape.
pub trait Scorer {
    fn predict_noise(&mut self, req: &ScoreRequest<'_>) -> Result<Vec3Grid>;

    /// Square side the scorer expects, if it needs resizing.
    fn input_side(&self) -> Option<usize> {
        None
    }
}

/// Target the oracle scorer pulls renderings towards.
#[derive(Debug, Clone)]
pub enum OracleReference {
    /// A fixed image.
    Image(RgbGrid),
    /// A disparity map re-lit with the lighting of each request.
    Relit {
        disparity: ScalarGrid,
        image: RgbGrid,
        setup: RenderSetup,
    },
}

/// Analytic scorer built on [`oracle_score`].
#[derive(Debug, Clone)]
pub struct OracleScorer {
    pub reference: OracleReference,
    pub schedule: NoiseSchedule,
}

impl OracleScorer {
    pub fn new(reference: OracleReference, schedule: NoiseSchedule) -> Self {
        Self {
            reference,
            schedule,
        }
    }

    pub fn reference_image(&self, lighting: &LightingSample) -> Result<RgbGrid> {
        match &self.reference {
            OracleReference::Image(img) => Ok(img.clone()),
            OracleReference::Relit {
                disparity,
                image,
                setup,
            } => render(disparity, setup, image, lighting),
        }
    }
}

impl Scorer for OracleScorer {
    fn predict_noise(&mut self, req: &ScoreRequest<'_>) -> Result<Vec3Grid> {
        let reference = self.reference_image(req.lighting)?;
        oracle_score(req.noised, req.timestep, &reference, &self.schedule)
    }
}

/// Returns the injected noise verbatim; the resulting signal is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoScorer;

impl Scorer for EchoScorer {
    fn predict_noise(&mut self, req: &ScoreRequest<'_>) -> Result<Vec3Grid> {
        Ok(req.noise.clone())
    }
}

impl<T: Scorer + ?Sized> Scorer for Box<T> {
    fn predict_noise(&mut self, req: &ScoreRequest<'_>) -> Result<Vec3Grid> {
        (**self).predict_noise(req)
    }

    fn input_side(&self) -> Option<usize> {
        (**self).input_side()
    }
}

/// Timestep weighting `w(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `w(t) = 1 − ᾱ_t`.
    OneMinusAlphaBar,
    Constant(f64),
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::OneMinusAlphaBar
    }
}

impl Weighting {
    pub fn weight(&self, t: usize, sched: &NoiseSchedule) -> Result<f64> {
        Ok(match self {
            Weighting::OneMinusAlphaBar => 1.0 - sched.alpha_bar(t)?,
            Weighting::Constant(w) => *w,
        })
    }
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-minus-alpha-bar" => Ok(Weighting::OneMinusAlphaBar),
            "constant" => Ok(Weighting::Constant(1.0)),
            other => other
                .strip_prefix("constant:")
                .and_then(|v| v.parse().ok())
                .map(Weighting::Constant)
                .ok_or_else(|| Error::param(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Guidance settings shared by every step of a run.
#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    pub schedule: NoiseSchedule,
    pub weighting: Weighting,
    pub prompt: String,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            weighting: Weighting::default(),
            prompt: String::new(),
        }
    }
}

/// `w(t)·(ε̂ − ε)` for one rendering, in the rendering's own resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSignal {
    pub grad: Vec3Grid,
    pub t: usize,
    pub weight: f64,
}

/// Signal for a fixed timestep and noise draw.
pub fn sds_signal_at<S: Scorer + ?Sized>(
    rendered: &Vec3Grid,
    scorer: &mut S,
    cfg: &GuidanceConfig,
    lighting: &LightingSample,
    t: usize,
    eps: &Vec3Grid,
) -> Result<GuidanceSignal> {
    let weight = cfg.weighting.weight(t, &cfg.schedule)?;
    let x_t = add_noise(rendered, t, eps, &cfg.schedule)?;
    let req = ScoreRequest {
        noised: &x_t,
        noise: eps,
        timestep: t,
        prompt: &cfg.prompt,
        lighting,
    };
    let predicted = scorer
        .predict_noise(&req)
        .map_err(|e| match e {
            Error::Guidance(_) | Error::Protocol(_) => e,
            other => Error::Guidance(format!("scorer failed: {other}")),
        })?;
    if predicted.shape() != eps.shape() {
        return Err(Error::Guidance(format!(
            "scorer returned {}x{} field for a {}x{} request",
            predicted.height(),
            predicted.width(),
            eps.height(),
            eps.width()
        )));
    }
    let grad = Vec3Grid::new(
        eps.height(),
        eps.width(),
        predicted
            .values()
            .iter()
            .zip(eps.values())
            .map(|(p, e)| [weight * (p[0] - e[0]), weight * (p[1] - e[1]), weight * (p[2] - e[2])])
            .collect(),
    )
    .map_err(|_| Error::Guidance("non-finite guidance signal".into()))?;
    Ok(GuidanceSignal { grad, t, weight })
}

/// Samples `t` and `ε`, queries the scorer and returns `w(t)·(ε̂ − ε)`.
///
/// Scorers with a fixed input side receive a zero-padded, resized copy of
/// the rendering; their signal is mapped back to the rendering's pixels.
pub fn sds_gradient<S: Scorer + ?Sized, R: Rng + ?Sized>(
    rendered: &RgbGrid,
    scorer: &mut S,
    cfg: &GuidanceConfig,
    lighting: &LightingSample,
    rng: &mut R,
) -> Result<GuidanceSignal> {
    let t = sample_timestep(rng, &cfg.schedule)?;
    match scorer.input_side() {
        None => {
            let eps = sample_noise(rng, rendered.height(), rendered.width())?;
            sds_signal_at(&rendered.to_field(), scorer, cfg, lighting, t, &eps)
        }
        Some(side) => {
            let frame = ScorerFrame::new(rendered.height(), rendered.width(), side);
            let model_in = frame.to_model(&rendered.to_field())?;
            let eps = sample_noise(rng, side, side)?;
            let signal = sds_signal_at(&model_in, scorer, cfg, lighting, t, &eps)?;
            Ok(GuidanceSignal {
                grad: frame.from_model(&signal.grad)?,
                ..signal
            })
        }
    }
}
