//! `key = value` run configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known; a typo is an error rather than a silently ignored setting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{AlignmentProtocol, EvalSettings};
use crate::geometry::{CameraKind, CameraModel};
use crate::guidance::{NoiseSchedule, Weighting};
use crate::refine::{ParameterizationKind, RefineConfig, SmoothnessNorm};
use crate::sfs::{LightInit, SfsConfig};
use crate::shading::{ClampGradient, TonemapParams};

/// Noise-schedule knobs kept verbatim so the schedule can be rebuilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSettings {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        let s = NoiseSchedule::default();
        Self {
            steps: s.steps(),
            beta_start: 1e-4,
            beta_end: 2e-2,
            t_min: s.t_min,
            t_max: s.t_max,
        }
    }
}

impl ScheduleSettings {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?.with_range(self.t_min, self.t_max)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub refine: RefineConfig,
    pub schedule: ScheduleSettings,
    pub eval: EvalSettings,
    pub sfs: SfsConfig,
    pub scorer_timeout_secs: f64,
    /// Square side external scorers receive; 0 sends renderings unresized.
    pub scorer_model_side: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            refine: RefineConfig::default(),
            schedule: ScheduleSettings::default(),
            eval: EvalSettings::default(),
            sfs: SfsConfig::default(),
            scorer_timeout_secs: 120.0,
            scorer_model_side: 512,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn via<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("'{key}': {e}")))
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.refine;
        match key {
            "iterations" => r.iterations = parse(key, value)?,
            "lr_disparity" => r.lr_disparity = parse(key, value)?,
            "lr_camera" => r.lr_camera = parse(key, value)?,
            "lambda1" => r.lambda1 = parse(key, value)?,
            "smoothness" => r.smoothness = via(key, SmoothnessNorm::from_str(value))?,
            "ensemble_runs" => r.ensemble_runs = parse(key, value)?,
            "seed" => r.seed = parse(key, value)?,
            "parameterization" => r.parameterization = via(key, ParameterizationKind::from_str(value))?,
            "smoothing_passes" => r.smoothing_passes = parse(key, value)?,
            "camera" => {
                let kind: CameraKind = via(key, CameraKind::from_str(value))?;
                let optimizable = r.camera.optimizable;
                r.camera = CameraModel::default_for(kind);
                r.camera.optimizable = optimizable;
            }
            "camera_init" => r.camera.scale_or_focal = parse(key, value)?,
            "optimize_camera" => r.camera.optimizable = parse(key, value)?,
            "b" => r.depth_params.b = parse(key, value)?,
            "s" => r.depth_params.s = parse(key, value)?,
            "optimize_b" => r.optimize_b = parse(key, value)?,
            "gamma" => r.tonemap = via(key, TonemapParams::new(parse(key, value)?))?,
            "clamp_gradient" => r.clamp = via(key, ClampGradient::from_str(value))?,
            "adam_beta1" => r.adam.beta1 = parse(key, value)?,
            "adam_beta2" => r.adam.beta2 = parse(key, value)?,
            "adam_eps" => r.adam.eps = parse(key, value)?,
            "weight_decay" => r.adam.weight_decay = parse(key, value)?,
            "export_gradients" => {
                r.export_gradients = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "prompt" => r.guidance.prompt = value.to_owned(),
            "guidance_weighting" => r.guidance.weighting = via(key, Weighting::from_str(value))?,
            "guidance_steps" => self.schedule.steps = parse(key, value)?,
            "guidance_beta_start" => self.schedule.beta_start = parse(key, value)?,
            "guidance_beta_end" => self.schedule.beta_end = parse(key, value)?,
            "guidance_t_min" => self.schedule.t_min = parse(key, value)?,
            "guidance_t_max" => self.schedule.t_max = parse(key, value)?,
            "scorer_timeout_secs" => self.scorer_timeout_secs = parse(key, value)?,
            "scorer_model_side" => self.scorer_model_side = parse(key, value)?,
            "eval_protocol" => self.eval.protocol = via(key, AlignmentProtocol::from_str(value))?,
            "eval_depth_cap" => {
                self.eval.depth_cap = if value == "none" { None } else { Some(parse(key, value)?) };
            }
            "eval_png_depth_scale" => self.eval.png_depth_scale = parse(key, value)?,
            "eval_resize_pred" => self.eval.resize_pred = parse(key, value)?,
            "sfs_iterations" => self.sfs.iterations = parse(key, value)?,
            "sfs_lr" => self.sfs.lr = parse(key, value)?,
            "sfs_lambda" => self.sfs.lambda = parse(key, value)?,
            "sfs_light_init" => self.sfs.light_init = via(key, LightInit::from_str(value))?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Rebuilds derived state and checks ranges.
    pub fn finish(mut self) -> Result<Self> {
        self.refine.guidance.schedule = via("guidance", self.schedule.build())?;
        via("depth", self.refine.depth_params.validate())?;
        via("refine", self.refine.validate())?;
        if !(self.scorer_timeout_secs > 0.0) {
            return Err(Error::Config("scorer_timeout_secs must be positive".into()));
        }
        Ok(self)
    }

    /// Canonical `key = value` text covering every setting; hashing this
    /// identifies a configuration independent of file formatting.
    pub fn to_canonical_text(&self) -> String {
        let r = &self.refine;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("iterations", r.iterations.to_string());
        line("lr_disparity", format!("{:e}", r.lr_disparity));
        line("lr_camera", format!("{:e}", r.lr_camera));
        line("lambda1", format!("{:e}", r.lambda1));
        line("smoothness", format!("{:?}", r.smoothness).to_lowercase());
        line("ensemble_runs", r.ensemble_runs.to_string());
        line("seed", r.seed.to_string());
        line("parameterization", format!("{:?}", r.parameterization).to_lowercase());
        line("smoothing_passes", r.smoothing_passes.to_string());
        line(
            "camera",
            match r.camera.kind {
                CameraKind::Orthographic => "orthographic",
                CameraKind::Perspective => "perspective",
            }
            .into(),
        );
        line("camera_init", format!("{:e}", r.camera.scale_or_focal));
        line("optimize_camera", r.camera.optimizable.to_string());
        line("b", format!("{:e}", r.depth_params.b));
        line("s", format!("{:e}", r.depth_params.s));
        line("optimize_b", r.optimize_b.to_string());
        line("gamma", format!("{:e}", r.tonemap.gamma));
        line(
            "clamp_gradient",
            match r.clamp {
                ClampGradient::Literal => "literal",
                ClampGradient::StraightThrough => "straight-through",
            }
            .into(),
        );
        line("adam_beta1", format!("{:e}", r.adam.beta1));
        line("adam_beta2", format!("{:e}", r.adam.beta2));
        line("adam_eps", format!("{:e}", r.adam.eps));
        line("weight_decay", format!("{:e}", r.adam.weight_decay));
        line(
            "export_gradients",
            r.export_gradients.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        line("prompt", r.guidance.prompt.clone());
        line(
            "guidance_weighting",
            match r.guidance.weighting {
                Weighting::OneMinusAlphaBar => "one-minus-alpha-bar".into(),
                Weighting::Constant(w) => format!("constant:{w:e}"),
            },
        );
        line("guidance_steps", self.schedule.steps.to_string());
        line("guidance_beta_start", format!("{:e}", self.schedule.beta_start));
        line("guidance_beta_end", format!("{:e}", self.schedule.beta_end));
        line("guidance_t_min", format!("{:e}", self.schedule.t_min));
        line("guidance_t_max", format!("{:e}", self.schedule.t_max));
        line("scorer_timeout_secs", format!("{:e}", self.scorer_timeout_secs));
        line("scorer_model_side", self.scorer_model_side.to_string());
        line("eval_protocol", self.eval.protocol.to_string());
        line(
            "eval_depth_cap",
            self.eval.depth_cap.map(|c| format!("{c:e}")).unwrap_or_else(|| "none".into()),
        );
        line("eval_png_depth_scale", format!("{:e}", self.eval.png_depth_scale));
        line("eval_resize_pred", self.eval.resize_pred.to_string());
        line("sfs_iterations", self.sfs.iterations.to_string());
        line("sfs_lr", format!("{:e}", self.sfs.lr));
        line("sfs_lambda", format!("{:e}", self.sfs.lambda));
        line(
            "sfs_light_init",
            match self.sfs.light_init {
                LightInit::Frontal => "frontal",
                LightInit::LeastSquares => "least-squares",
            }
            .into(),
        );
        out
    }
}

/// Parses config text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        cfg.set(key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
    }
    cfg.finish()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
