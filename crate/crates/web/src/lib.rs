//! WebAssembly bindings for the demo page in `www/`.
//!
//! The page renders a synthetic scene whose true shape is known, so the
//! refinement can be watched converging. Images cross the boundary as
//! RGBA bytes ready for `ImageData`.

use rdepth::eval::{align, compute_metrics, AlignmentProtocol};
use rdepth::geometry::{compute_normals, disparity_to_depth, normals_to_rgb};
use rdepth::guidance::{OracleReference, OracleScorer};
use rdepth::phantom::{self, PHANTOM_ORTHO_SCALE};
use rdepth::refine::{refine_step, ParameterizationKind, RefineConfig, RefineState};
use rdepth::shading::{relight, LightingSample};
use rdepth::{MaskGrid, RgbGrid, ScalarGrid};
use wasm_bindgen::prelude::*;

fn err(e: rdepth::Error) -> String {
    e.to_string()
}

fn rgba(img: &RgbGrid) -> Vec<u8> {
    img.values()
        .iter()
        .flat_map(|p| {
            let [r, g, b] = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            [r, g, b, 255]
        })
        .collect()
}

/// Light from a point on the unit disk (`x` right, `y` down).
fn light_at(x: f64, y: f64, specular: f64) -> rdepth::Result<LightingSample> {
    let z = (1.0 - x * x - y * y).max(0.05).sqrt();
    let specular = specular.clamp(0.0, 1.0);
    LightingSample::new([x, y, z], 1.0 - specular, specular, 32.0)
}

#[wasm_bindgen]
pub struct Demo {
    size: usize,
    image: RgbGrid,
    truth: ScalarGrid,
    init: ScalarGrid,
    cfg: RefineConfig,
    scorer: OracleScorer,
    state: RefineState,
}

#[wasm_bindgen]
impl Demo {
    /// `shape` is `"hemisphere"` or `"bump"`; `seed` drives both the
    /// initial perturbation and the lighting draws.
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, shape: &str, seed: u64) -> Result<Demo, String> {
        let size = size.clamp(16, 128);
        let truth = match shape {
            "hemisphere" => phantom::hemisphere(size),
            "bump" => phantom::gaussian_bump(size),
            other => return Err(format!("unknown shape '{other}'")),
        };
        let init = phantom::smooth_perturbation(&truth, seed, 0.12).map_err(err)?;
        let image = phantom::albedo_image(size);
        let mut cfg = RefineConfig {
            seed,
            lr_disparity: 3e-3,
            parameterization: ParameterizationKind::Smoothed,
            ..RefineConfig::default()
        };
        cfg.camera.scale_or_focal = PHANTOM_ORTHO_SCALE;
        let scorer = OracleScorer::new(
            OracleReference::Relit {
                disparity: truth.clone(),
                image: image.clone(),
                setup: cfg.render_setup(),
            },
            cfg.guidance.schedule.clone(),
        );
        let state = RefineState::new(&init, &cfg, 0).map_err(err)?;
        Ok(Demo {
            size,
            image,
            truth,
            init,
            cfg,
            scorer,
            state,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    /// Runs `n` refinement steps; returns the smoothness term of the last.
    pub fn step(&mut self, n: usize) -> Result<f64, String> {
        let mut last = 0.0;
        for _ in 0..n {
            last = refine_step(&mut self.state, &self.image, &mut self.scorer, &self.cfg).map_err(err)?.smoothness;
        }
        Ok(last)
    }

    pub fn reset(&mut self) -> Result<(), String> {
        self.state = RefineState::new(&self.init, &self.cfg, 0).map_err(err)?;
        Ok(())
    }

    /// AbsRel of the current estimate after affine alignment.
    pub fn abs_rel(&self) -> Result<f64, String> {
        let gt = disparity_to_depth(&self.truth, &self.cfg.depth_params).map_err(err)?;
        let mask = MaskGrid::all(self.size, self.size).map_err(err)?;
        let a = align(&self.state.disparity(), &gt, &mask, AlignmentProtocol::LsDispDepth).map_err(err)?;
        Ok(compute_metrics(&a.depth, &gt, &mask).map_err(err)?.abs_rel)
    }

    /// Re-lit scene under a light at `(x, y)` on the unit disk. `which`
    /// selects the disparity: `"truth"`, `"init"` or `"current"`.
    pub fn relight(&self, which: &str, x: f64, y: f64, specular: f64) -> Result<Vec<u8>, String> {
        let disp = self.pick(which)?;
        let nf = compute_normals(&disp, &self.cfg.camera, &self.cfg.depth_params).map_err(err)?;
        let light = light_at(x, y, specular).map_err(err)?;
        Ok(rgba(&relight(&self.image, &nf.normals, &light, &self.cfg.tonemap).map_err(err)?))
    }

    /// Normal map as RGB `(n + 1) / 2`.
    pub fn normals(&self, which: &str) -> Result<Vec<u8>, String> {
        let disp = self.pick(which)?;
        let nf = compute_normals(&disp, &self.cfg.camera, &self.cfg.depth_params).map_err(err)?;
        Ok(rgba(&normals_to_rgb(&nf.normals)))
    }

    /// Disparity as gray, stretched over the truth's range.
    pub fn disparity(&self, which: &str) -> Result<Vec<u8>, String> {
        let disp = self.pick(which)?;
        let (lo, hi) = (self.truth.min(), self.truth.max());
        let g = disp.map(|d| ((d - lo) / (hi - lo)).clamp(0.0, 1.0)).map_err(err)?;
        Ok(rgba(&RgbGrid::from_gray(&g).map_err(err)?))
    }
}

impl Demo {
    fn pick(&self, which: &str) -> Result<ScalarGrid, String> {
        match which {
            "truth" => Ok(self.truth.clone()),
            "init" => Ok(self.init.clone()),
            "current" => Ok(self.state.disparity()),
            other => Err(format!("unknown map '{other}'")),
        }
    }
}
