use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rdepth::eval::AlignmentProtocol;
use rdepth::geometry::CameraKind;
use rdepth_cli::{
    cmd_ensemble, cmd_eval, cmd_gradcheck, cmd_refine, cmd_relight, cmd_sfs, CliError, CliResult, EvalArgs,
    RefineArgs, RelightArgs, ScorerSpec, SfsArgs, SCORER_ENV,
};

#[derive(Parser)]
#[command(name = "rdepth", version, about = "Test-time depth refinement by re-lighting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Camera {
    Orthographic,
    Perspective,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    /// Affine fit in disparity, then invert
    LsDisp,
    /// Disparity fit, then a second affine fit in depth
    LsDispDepth,
    /// Affine fit of depth in depth
    LsDepth,
    /// Depth fit, then a second fit in disparity
    LsDepthDisp,
    /// Every protocol above
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Re-light an image with the normals of a disparity map
    Relight {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        disparity: PathBuf,
        /// Random lighting seed; frontal diffuse light when omitted
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "orthographic")]
        camera: Camera,
        /// Re-lit PNG; the normal map goes to <stem>_normals.png
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine an initial disparity with score-distillation guidance
    Refine {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        init_disparity: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config override, repeatable
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// oracle:<reference> or tcp:<host:port>; RD_SCORER takes precedence
        #[arg(long)]
        scorer: Option<ScorerSpec>,
        /// Number of runs (config ensemble_runs, default 10)
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Runs executed in parallel
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Align predictions to ground truth and report depth metrics
    Eval {
        /// Predicted disparity or depth, repeatable
        #[arg(long = "pred", required = true)]
        preds: Vec<PathBuf>,
        /// Ground-truth depth, one per --pred
        #[arg(long = "gt", required = true)]
        gts: Vec<PathBuf>,
        /// Optional validity mask, one per --pred
        #[arg(long = "mask")]
        masks: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "ls-disp-depth")]
        protocol: Protocol,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// CSV report; a JSON summary is written beside it
        #[arg(long)]
        report: PathBuf,
    },
    /// Classical shape-from-shading baseline
    Sfs {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Per-pixel mean of several disparity maps
    Ensemble {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn json(v: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::input(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Relight {
            image,
            disparity,
            seed,
            camera,
            out,
        } => {
            let camera = match camera {
                Camera::Orthographic => CameraKind::Orthographic,
                Camera::Perspective => CameraKind::Perspective,
            };
            json(&cmd_relight(&RelightArgs {
                image,
                disparity,
                seed,
                camera,
                out,
            })?)?;
        }
        Command::Refine {
            image,
            init_disparity,
            config,
            mut overrides,
            scorer,
            runs,
            seed,
            jobs,
            out,
        } => {
            let scorer = match std::env::var(SCORER_ENV) {
                Ok(v) if !v.is_empty() => v.parse().map_err(CliError::input)?,
                _ => scorer.ok_or_else(|| CliError::input(format!("--scorer or {SCORER_ENV} is required")))?,
            };
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            let m = cmd_refine(&RefineArgs {
                image,
                init_disparity,
                config,
                overrides,
                scorer,
                runs,
                jobs,
                out,
            })?;
            eprintln!("{} run(s) in {:.1}s, config {}", m.runs.len(), m.seconds, &m.config_hash[..12]);
            println!("{}", m.ensemble.display());
        }
        Command::Eval {
            preds,
            gts,
            masks,
            protocol,
            config,
            overrides,
            report,
        } => {
            let protocol = match protocol {
                Protocol::LsDisp => Some(AlignmentProtocol::LsDisp),
                Protocol::LsDispDepth => Some(AlignmentProtocol::LsDispDepth),
                Protocol::LsDepth => Some(AlignmentProtocol::LsDepth),
                Protocol::LsDepthDisp => Some(AlignmentProtocol::LsDepthDisp),
                Protocol::All => None,
            };
            let rows = cmd_eval(&EvalArgs {
                preds,
                gts,
                masks,
                protocol,
                config,
                overrides,
                report,
            })?;
            for r in rows {
                println!(
                    "{} {} absrel={:.5} rmse={:.5} d1={:.4}",
                    r.sample, r.protocol, r.metrics.abs_rel, r.metrics.rmse, r.metrics.delta1
                );
            }
        }
        Command::Sfs {
            image,
            mask,
            iters,
            config,
            overrides,
            out,
        } => json(&cmd_sfs(&SfsArgs {
            image,
            mask,
            iters,
            config,
            overrides,
            out,
        })?)?,
        Command::Gradcheck { size, seed } => {
            let r = cmd_gradcheck(size, seed)?;
            println!(
                "checked {} skipped {} failures {} max_abs_dev {:.3e} max_rel_dev {:.3e}",
                r.checked, r.skipped, r.failures, r.max_abs_dev, r.max_rel_dev
            );
            if !r.passed() {
                return Ok(1);
            }
        }
        Command::Ensemble { inputs, out } => {
            let mean = cmd_ensemble(&inputs, &out)?;
            println!("{}x{} -> {}", mean.height(), mean.width(), out.display());
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
