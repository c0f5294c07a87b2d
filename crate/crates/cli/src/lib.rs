//! Command implementations behind the `rdepth` binary.
//!
//! Each `cmd_*` function takes plain arguments, writes its artifacts and
//! returns a small summary; `main` only parses flags and maps errors to
//! exit codes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use rdepth::eval::{evaluate_sample, write_csv_report, write_json_summary, AlignmentProtocol, ReportRow};
use rdepth::geometry::{compute_normals, normals_to_rgb, CameraKind, CameraModel};
use rdepth::grad::{check_many, random_case, CheckReport};
use rdepth::guidance::client::TcpScorer;
use rdepth::guidance::{OracleReference, OracleScorer, Scorer};
use rdepth::io::{
    load_config, load_depth, load_grid, load_image, load_mask, load_prompt, save_depth, save_gray, save_image,
    RunConfig,
};
use rdepth::refine::{ensemble, refine_run, run_rng};
use rdepth::sfs::{sfs_optimize, sfs_render};
use rdepth::shading::{relight, sample_lighting, LightingSample};
use rdepth::{Error, MaskGrid, ScalarGrid};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable that overrides `--scorer`.
pub const SCORER_ENV: &str = "RD_SCORER";

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// 2 = unusable input, 3 = shape or domain violation, 4 = scorer failure.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Config(_) | Error::Parameter(_) => 2,
        Error::Shape(_) | Error::Domain(_) | Error::Numeric(_) | Error::Aborted { .. } => 3,
        Error::Guidance(_) | Error::Protocol(_) => 4,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: rdepth::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(e.to_string()))?;
    with_path(path, std::fs::write(path, text + "\n").map_err(Error::from))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    with_path(dir, std::fs::create_dir_all(dir).map_err(Error::from))
}

/// Loads the run config (or defaults) and applies `key=value` overrides.
pub fn build_config(path: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => with_path(p, load_config(p))?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("override '{o}' is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg.finish()?)
}

/// Hex SHA-256 of the canonical config text.
pub fn config_hash(cfg: &RunConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.to_canonical_text().as_bytes()))
}

// ---------------------------------------------------------------- relight

#[derive(Debug, Clone)]
pub struct RelightArgs {
    pub image: PathBuf,
    pub disparity: PathBuf,
    /// Random lighting from this seed; frontal diffuse light when absent.
    pub seed: Option<u64>,
    pub camera: CameraKind,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelightSummary {
    pub relit: PathBuf,
    pub normals: PathBuf,
    pub light: [f64; 3],
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub degenerate_normals: usize,
}

/// `out.png` → `out_normals.png`.
pub fn normals_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("relit");
    out.with_file_name(format!("{stem}_normals.png"))
}

pub fn cmd_relight(args: &RelightArgs) -> CliResult<RelightSummary> {
    let image = with_path(&args.image, load_image(&args.image))?;
    let disp = with_path(&args.disparity, load_grid(&args.disparity, 1.0 / 65535.0))?;
    if disp.shape() != image.shape() {
        return Err(CliError {
            code: 3,
            message: format!(
                "disparity is {}x{} but image is {}x{}",
                disp.height(),
                disp.width(),
                image.height(),
                image.width()
            ),
        });
    }
    let sample = match args.seed {
        Some(seed) => sample_lighting(&mut run_rng(seed, 0)),
        None => LightingSample::frontal(),
    };
    let cam = CameraModel::default_for(args.camera);
    let nf = compute_normals(&disp, &cam, &Default::default())?;
    let out = relight(&image, &nf.normals, &sample, &Default::default())?;
    let npath = normals_path(&args.out);
    with_path(&args.out, save_image(&out, &args.out))?;
    with_path(&npath, save_image(&normals_to_rgb(&nf.normals), &npath))?;
    Ok(RelightSummary {
        relit: args.out.clone(),
        normals: npath,
        light: sample.light,
        beta1: sample.beta1,
        beta2: sample.beta2,
        alpha: sample.alpha,
        degenerate_normals: nf.degenerate,
    })
}

// ----------------------------------------------------------------- refine

/// Where guidance comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    /// Analytic oracle. A disparity file is re-lit under each step's
    /// lighting; an image file is used as a fixed reference.
    Oracle(PathBuf),
    /// External scorer speaking the wire protocol.
    Tcp(String),
}

impl FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(p) = s.strip_prefix("oracle:") {
            Ok(Self::Oracle(PathBuf::from(p)))
        } else if let Some(a) = s.strip_prefix("tcp:") {
            Ok(Self::Tcp(a.to_owned()))
        } else {
            Err(format!("scorer must be oracle:<path> or tcp:<host:port>, got '{s}'"))
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle(p) => write!(f, "oracle:{}", p.display()),
            Self::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

#[derive(Debug, Clone)]
pub struct RefineArgs {
    pub image: PathBuf,
    pub init_disparity: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub scorer: ScorerSpec,
    /// Defaults to the config's `ensemble_runs`.
    pub runs: Option<usize>,
    pub jobs: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: u64,
    pub seed: u64,
    pub output: PathBuf,
    pub seconds: f64,
    pub final_smoothness: Option<f64>,
    pub camera: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineManifest {
    pub version: &'static str,
    pub image: PathBuf,
    pub init_disparity: PathBuf,
    pub scorer: String,
    pub prompt: String,
    pub config_hash: String,
    pub config: String,
    pub runs: Vec<RunRecord>,
    pub ensemble: PathBuf,
    pub seconds: f64,
}

enum ScorerSource {
    Oracle(OracleScorer),
    Tcp { addr: String, timeout: Duration, side: Option<usize> },
}

impl ScorerSource {
    fn open(&self) -> rdepth::Result<Box<dyn Scorer>> {
        Ok(match self {
            Self::Oracle(o) => Box::new(o.clone()),
            Self::Tcp { addr, timeout, side } => Box::new(TcpScorer::connect(addr, *timeout)?.with_model_side(*side)),
        })
    }
}

/// Runs N seeded refinements (in parallel up to `jobs`), writes
/// `run_XX.pfm`, `ensemble.pfm`, `ensemble.png` and `manifest.json`.
pub fn cmd_refine(args: &RefineArgs) -> CliResult<RefineManifest> {
    let started = Instant::now();
    let mut cfg = build_config(args.config.as_deref(), &args.overrides)?;
    let image = with_path(&args.image, load_image(&args.image))?;
    let init = with_path(&args.init_disparity, load_grid(&args.init_disparity, 1.0 / 65535.0))?;
    if cfg.refine.guidance.prompt.is_empty() {
        if let Some(p) = with_path(&args.image, load_prompt(&args.image))? {
            cfg.refine.guidance.prompt = p;
        }
    }
    let runs = args.runs.unwrap_or(cfg.refine.ensemble_runs);
    if runs == 0 {
        return Err(CliError::input("--runs must be at least 1"));
    }

    let schedule = cfg.schedule.build()?;
    let source = match &args.scorer {
        ScorerSpec::Oracle(p) => {
            let reference = if is_image_path(p) {
                OracleReference::Image(with_path(p, load_image(p))?)
            } else {
                OracleReference::Relit {
                    disparity: with_path(p, load_grid(p, 1.0 / 65535.0))?,
                    image: image.clone(),
                    setup: cfg.refine.render_setup(),
                }
            };
            ScorerSource::Oracle(OracleScorer::new(reference, schedule))
        }
        ScorerSpec::Tcp(addr) => ScorerSource::Tcp {
            addr: addr.clone(),
            timeout: Duration::from_secs_f64(cfg.scorer_timeout_secs),
            side: (cfg.scorer_model_side > 0).then_some(cfg.scorer_model_side),
        },
    };

    create_dir(&args.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::input(e.to_string()))?;
    let refine_cfg = &cfg.refine;
    let results: Vec<rdepth::Result<(ScalarGrid, RunRecord)>> = pool.install(|| {
        (0..runs as u64)
            .into_par_iter()
            .map(|run| {
                let t = Instant::now();
                let mut scorer = source.open()?;
                let outcome = refine_run(&image, &init, refine_cfg, &mut scorer, run)?;
                let output = args.out.join(format!("run_{run:02}.pfm"));
                save_depth(&outcome.disparity, &output, 1.0)?;
                let record = RunRecord {
                    run,
                    seed: refine_cfg.seed,
                    output,
                    seconds: t.elapsed().as_secs_f64(),
                    final_smoothness: outcome.trace.last().map(|s| s.smoothness),
                    camera: outcome.camera.scale_or_focal,
                    b: outcome.b,
                };
                Ok((outcome.disparity, record))
            })
            .collect()
    });
    let mut maps = Vec::with_capacity(runs);
    let mut records = Vec::with_capacity(runs);
    for r in results {
        let (m, rec) = r?;
        maps.push(m);
        records.push(rec);
    }
    let mean = ensemble(&maps)?;
    let ens_path = args.out.join("ensemble.pfm");
    with_path(&ens_path, save_depth(&mean, &ens_path, 1.0))?;
    let preview = args.out.join("ensemble.png");
    with_path(&preview, save_gray(&mean, &preview))?;

    let manifest = RefineManifest {
        version: env!("CARGO_PKG_VERSION"),
        image: args.image.clone(),
        init_disparity: args.init_disparity.clone(),
        scorer: args.scorer.to_string(),
        prompt: cfg.refine.guidance.prompt.clone(),
        config_hash: config_hash(&cfg),
        config: cfg.to_canonical_text(),
        runs: records,
        ensemble: ens_path,
        seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&manifest, &args.out.join("manifest.json"))?;
    Ok(manifest)
}

// ------------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub preds: Vec<PathBuf>,
    pub gts: Vec<PathBuf>,
    /// Empty, or one mask per pair.
    pub masks: Vec<PathBuf>,
    /// `None` evaluates every protocol.
    pub protocol: Option<AlignmentProtocol>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    /// CSV path; the JSON summary goes next to it with a `.json` extension.
    pub report: PathBuf,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<Vec<ReportRow>> {
    if args.preds.is_empty() || args.preds.len() != args.gts.len() {
        return Err(CliError::input("need the same non-zero number of --pred and --gt files"));
    }
    if !args.masks.is_empty() && args.masks.len() != args.preds.len() {
        return Err(CliError::input("give either no --mask or one per --pred"));
    }
    let cfg = build_config(args.config.as_deref(), &args.overrides)?;
    let protocols: Vec<AlignmentProtocol> = match args.protocol {
        Some(p) => vec![p],
        None => AlignmentProtocol::ALL.to_vec(),
    };
    let mut rows = Vec::new();
    for (i, (pred_path, gt_path)) in args.preds.iter().zip(&args.gts).enumerate() {
        let pred = with_path(pred_path, load_grid(pred_path, cfg.eval.png_depth_scale))?;
        let gt = with_path(gt_path, load_depth(gt_path, cfg.eval.png_depth_scale))?;
        let mask = match args.masks.get(i) {
            Some(m) => with_path(m, load_mask(m))?.and(&gt.valid)?,
            None => gt.valid.clone(),
        };
        let sample = pred_path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample").to_owned();
        for &protocol in &protocols {
            let settings = rdepth::eval::EvalSettings { protocol, ..cfg.eval };
            let ev = with_path(pred_path, evaluate_sample(&pred, &gt.depth, &mask, &settings))?;
            rows.push(ReportRow {
                sample: sample.clone(),
                protocol,
                metrics: ev.metrics,
                clamped: ev.alignment.clamped,
                degenerate: ev.alignment.degenerate(),
            });
        }
    }
    if let Some(dir) = args.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    with_path(&args.report, write_csv_report(&rows, &args.report))?;
    let json = args.report.with_extension("json");
    with_path(&json, write_json_summary(&rows, &json))?;
    Ok(rows)
}

// -------------------------------------------------------------------- sfs

#[derive(Debug, Clone)]
pub struct SfsArgs {
    pub image: PathBuf,
    /// Whole frame when absent.
    pub mask: Option<PathBuf>,
    pub iters: Option<usize>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct SfsSummary {
    pub light: [f64; 3],
    pub l_in: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Writes `normals.png`, `rendered.png`, `loss.csv` and `sfs.json`.
pub fn cmd_sfs(args: &SfsArgs) -> CliResult<SfsSummary> {
    let mut cfg = build_config(args.config.as_deref(), &args.overrides)?;
    if let Some(n) = args.iters {
        cfg.sfs.iterations = n;
    }
    let gray = with_path(&args.image, load_image(&args.image))?.to_gray();
    let mask = match &args.mask {
        Some(m) => with_path(m, load_mask(m))?,
        None => MaskGrid::all(gray.height(), gray.width())?,
    };
    let result = sfs_optimize(&gray, &mask, &cfg.sfs)?;
    create_dir(&args.out)?;
    let st = &result.state;
    let normals = args.out.join("normals.png");
    with_path(&normals, save_image(&normals_to_rgb(&st.normals), &normals))?;
    let rendered = args.out.join("rendered.png");
    let img = sfs_render(&st.normals, st.light, st.l_in);
    with_path(&rendered, save_gray(&img.clamp(0.0, 1.0), &rendered))?;

    let mut csv = String::from("iteration,loss,photometric,smoothness\n");
    for (i, t) in result.trace.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{}\n", t.value, t.photo, t.smooth));
    }
    let trace = args.out.join("loss.csv");
    with_path(&trace, std::fs::write(&trace, csv).map_err(Error::from))?;

    let summary = SfsSummary {
        light: st.light,
        l_in: st.l_in,
        initial_loss: result.trace.first().map_or(f64::NAN, |t| t.value),
        final_loss: result.trace.last().map_or(f64::NAN, |t| t.value),
        iterations: cfg.sfs.iterations,
    };
    write_json(&summary, &args.out.join("sfs.json"))?;
    Ok(summary)
}

// -------------------------------------------------------------- gradcheck

pub const GRADCHECK_RTOL: f64 = 1e-4;
pub const GRADCHECK_ATOL: f64 = 1e-8;
pub const GRADCHECK_EPS: f64 = 1e-6;

/// One random case per camera model at `size`×`size`.
pub fn cmd_gradcheck(size: usize, seed: u64) -> CliResult<CheckReport> {
    let cases = [CameraKind::Orthographic, CameraKind::Perspective]
        .into_iter()
        .enumerate()
        .map(|(i, kind)| random_case(size, kind, seed.wrapping_add(i as u64)))
        .collect::<rdepth::Result<Vec<_>>>()?;
    Ok(check_many(&cases, GRADCHECK_EPS, GRADCHECK_RTOL, GRADCHECK_ATOL)?)
}

// --------------------------------------------------------------- ensemble

pub fn cmd_ensemble(inputs: &[PathBuf], out: &Path) -> CliResult<ScalarGrid> {
    let maps = inputs
        .iter()
        .map(|p| with_path(p, load_grid(p, 1.0 / 65535.0)))
        .collect::<CliResult<Vec<_>>>()?;
    let mean = ensemble(&maps)?;
    with_path(out, save_depth(&mean, out, 1.0 / 65535.0))?;
    Ok(mean)
}
