use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdepth::eval::{align, compute_metrics, AlignmentProtocol};
use rdepth::geometry::{disparity_to_depth, DisparityToDepthParams};
use rdepth::io::{load_grid, load_image, save_depth, save_image, save_mask};
use rdepth::phantom;
use rdepth::{MaskGrid, RgbGrid, ScalarGrid};

fn rdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdepth"))
        .args(args)
        .env_remove("RD_SCORER")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Scene {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Scene {
    /// Albedo image, perturbed init and ground-truth disparity.
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let gt = phantom::hemisphere(n);
        save_image(&phantom::albedo_image(n), &root.join("image.png")).unwrap();
        save_depth(&phantom::smooth_perturbation(&gt, 7, 0.12).unwrap(), &root.join("init.pfm"), 1.0).unwrap();
        save_depth(&gt, &root.join("gt.pfm"), 1.0).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn closed_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

// ---------------------------------------------------------------- relight

#[test]
fn relight_flat_disparity_frontal_light_is_identity() {
    let sc = Scene::new(16);
    save_depth(&ScalarGrid::filled(16, 16, 0.5).unwrap(), &sc.p("flat.pfm"), 1.0).unwrap();
    let out = sc.p("relit.png");
    let o = rdepth(&["relight", "--image", s(&sc.p("image.png")), "--disparity", s(&sc.p("flat.pfm")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_image(&out).unwrap(), load_image(&sc.p("image.png")).unwrap());
    assert!(sc.p("relit_normals.png").exists());
}

#[test]
fn relight_seeded_is_byte_identical() {
    let sc = Scene::new(16);
    let args = |out: &Path| {
        rdepth(&[
            "relight", "--image", s(&sc.p("image.png")), "--disparity", s(&sc.p("gt.pfm")), "--seed", "4",
            "--camera", "perspective", "--out", s(out),
        ])
    };
    assert_eq!(code(&args(&sc.p("a.png"))), 0);
    assert_eq!(code(&args(&sc.p("b.png"))), 0);
    assert_eq!(std::fs::read(sc.p("a.png")).unwrap(), std::fs::read(sc.p("b.png")).unwrap());
    assert_eq!(std::fs::read(sc.p("a_normals.png")).unwrap(), std::fs::read(sc.p("b_normals.png")).unwrap());
}

#[test]
fn relight_error_codes() {
    let sc = Scene::new(16);
    let missing = rdepth(&["relight", "--image", s(&sc.p("nope.png")), "--disparity", s(&sc.p("gt.pfm")), "--out", s(&sc.p("x.png"))]);
    assert_eq!(code(&missing), 2);
    save_depth(&ScalarGrid::filled(8, 8, 0.5).unwrap(), &sc.p("small.pfm"), 1.0).unwrap();
    let shape = rdepth(&["relight", "--image", s(&sc.p("image.png")), "--disparity", s(&sc.p("small.pfm")), "--out", s(&sc.p("x.png"))]);
    assert_eq!(code(&shape), 3);
}

// ----------------------------------------------------------------- refine

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn refine_zero_iterations_returns_init() {
    let sc = Scene::new(16);
    let out = sc.p("out");
    let oracle = format!("oracle:{}", s(&sc.p("gt.pfm")));
    let o = rdepth(&[
        "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &oracle,
        "--runs", "1", "--set", "iterations=0", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let init = std::fs::read(sc.p("init.pfm")).unwrap();
    assert_eq!(std::fs::read(out.join("run_00.pfm")).unwrap(), init);
    assert_eq!(std::fs::read(out.join("ensemble.pfm")).unwrap(), init);
    let m = manifest(&out);
    assert_eq!(m["runs"].as_array().unwrap().len(), 1);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn refine_defaults_to_ten_runs() {
    let sc = Scene::new(8);
    let out = sc.p("out");
    let oracle = format!("oracle:{}", s(&sc.p("gt.pfm")));
    let o = rdepth(&[
        "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &oracle,
        "--set", "iterations=0", "--jobs", "4", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["runs"].as_array().unwrap().len(), 10);
    assert!(out.join("run_09.pfm").exists());
}

fn abs_rel(disp: &ScalarGrid, gt_depth: &ScalarGrid) -> f64 {
    let mask = MaskGrid::all(gt_depth.height(), gt_depth.width()).unwrap();
    let a = align(disp, gt_depth, &mask, AlignmentProtocol::LsDispDepth).unwrap();
    compute_metrics(&a.depth, gt_depth, &mask).unwrap().abs_rel
}

#[test]
fn refine_ensemble_reduces_variance() {
    let sc = Scene::new(32);
    let out = sc.p("out");
    let oracle = format!("oracle:{}", s(&sc.p("gt.pfm")));
    let o = rdepth(&[
        "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &oracle,
        "--runs", "3", "--jobs", "3", "--seed", "1",
        "--set", "iterations=300", "--set", "parameterization=smoothed", "--set", "smoothing_passes=6",
        "--set", "lr_disparity=3e-3", "--set", "camera_init=1", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let gt = load_grid(&sc.p("gt.pfm"), 1.0).unwrap();
    let gt_depth = disparity_to_depth(&gt, &DisparityToDepthParams::default()).unwrap();
    let init = abs_rel(&load_grid(&sc.p("init.pfm"), 1.0).unwrap(), &gt_depth);
    let singles: Vec<f64> = (0..3)
        .map(|k| abs_rel(&load_grid(&out.join(format!("run_{k:02}.pfm")), 1.0).unwrap(), &gt_depth))
        .collect();
    let ens = abs_rel(&load_grid(&out.join("ensemble.pfm"), 1.0).unwrap(), &gt_depth);
    let best = singles.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(ens < init, "init {init} ensemble {ens}");
    assert!(ens <= best + 2e-3, "singles {singles:?} ensemble {ens}");
}

#[test]
fn refine_unreachable_scorer_exits_4() {
    let sc = Scene::new(8);
    let addr = format!("tcp:127.0.0.1:{}", closed_port());
    let o = rdepth(&[
        "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &addr,
        "--runs", "1", "--set", "iterations=1", "--out", s(&sc.p("out")),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn scorer_env_overrides_flag() {
    let sc = Scene::new(8);
    let oracle = format!("oracle:{}", s(&sc.p("gt.pfm")));
    let o = Command::new(env!("CARGO_BIN_EXE_rdepth"))
        .args([
            "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &oracle,
            "--runs", "1", "--set", "iterations=1", "--out", s(&sc.p("out")),
        ])
        .env("RD_SCORER", format!("tcp:127.0.0.1:{}", closed_port()))
        .output()
        .unwrap();
    assert_eq!(code(&o), 4);
}

#[test]
fn refine_bad_config_key_exits_2() {
    let sc = Scene::new(8);
    let oracle = format!("oracle:{}", s(&sc.p("gt.pfm")));
    let o = rdepth(&[
        "refine", "--image", s(&sc.p("image.png")), "--init-disparity", s(&sc.p("init.pfm")), "--scorer", &oracle,
        "--set", "no_such_key=1", "--out", s(&sc.p("out")),
    ]);
    assert_eq!(code(&o), 2);
}

// ------------------------------------------------------------------- eval

#[test]
fn eval_help_lists_protocols() {
    let o = rdepth(&["eval", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for p in ["ls-disp-depth", "ls-disp", "ls-depth", "ls-depth-disp"] {
        assert!(text.contains(p), "{text}");
    }
}

#[test]
fn eval_identity_and_batch() {
    let sc = Scene::new(16);
    let mut args: Vec<String> = vec!["eval".into()];
    for k in 0..3 {
        let gt = ScalarGrid::from_fn(16, 16, |r, c| 1.0 + 0.1 * (r + k) as f64 + 0.05 * c as f64).unwrap();
        let disp = gt.map(|d| 1.0 / d).unwrap();
        let (g, p) = (sc.p(&format!("gt{k}.pfm")), sc.p(&format!("pred{k}.pfm")));
        save_depth(&gt, &g, 1.0).unwrap();
        save_depth(&disp, &p, 1.0).unwrap();
        args.extend(["--pred".into(), s(&p).into(), "--gt".into(), s(&g).into()]);
    }
    let report = sc.p("report/metrics.csv");
    args.extend(["--report".into(), s(&report).into()]);
    let o = rdepth(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&report).unwrap();
    let headers = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for r in &rows {
        assert_eq!(&r[col("protocol")], "ls-disp-depth");
        assert!((r[col("delta1")].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        // PFM stores f32, so "equal" is up to single-precision rounding.
        assert!(r[col("abs_rel")].parse::<f64>().unwrap() < 1e-6);
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.with_extension("json")).unwrap()).unwrap();
    assert_eq!(summary[0]["samples"], 3);
}

#[test]
fn eval_unknown_protocol_exits_2_with_list() {
    let o = rdepth(&["eval", "--pred", "a.pfm", "--gt", "b.pfm", "--protocol", "median", "--report", "r.csv"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("ls-disp-depth"), "{err}");
}

// -------------------------------------------------------------------- sfs

#[test]
fn sfs_sphere_loss_decreases() {
    let sc = Scene::new(8);
    let (gray, mask, _) = phantom::lambertian_sphere(32, [0.2, -0.3, 1.0]);
    save_image(&RgbGrid::from_gray(&gray).unwrap(), &sc.p("sphere.png")).unwrap();
    save_mask(&mask, &sc.p("mask.png")).unwrap();
    let out = sc.p("sfs");
    let o = rdepth(&["sfs", "--image", s(&sc.p("sphere.png")), "--mask", s(&sc.p("mask.png")), "--iters", "300", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    let losses: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 301);
    assert!(losses.last().unwrap() < &losses[0]);
    assert!(out.join("normals.png").exists() && out.join("rendered.png").exists());
}

#[test]
fn sfs_empty_mask_exits_3() {
    let sc = Scene::new(8);
    save_mask(&MaskGrid::from_fn(8, 8, |_, _| false).unwrap(), &sc.p("empty.png")).unwrap();
    let o = rdepth(&["sfs", "--image", s(&sc.p("image.png")), "--mask", s(&sc.p("empty.png")), "--out", s(&sc.p("sfs"))]);
    assert_eq!(code(&o), 3);
}

// -------------------------------------------------------- gradcheck/ensemble

#[test]
fn gradcheck_passes() {
    let o = rdepth(&["gradcheck", "--size", "8", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("failures 0"));
}

#[test]
fn ensemble_of_identical_maps_is_identity() {
    let sc = Scene::new(8);
    let a = s(&sc.p("gt.pfm")).to_owned();
    let out = sc.p("mean.pfm");
    let o = rdepth(&["ensemble", "--input", &a, "--input", &a, "--input", &a, "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(sc.p("gt.pfm")).unwrap());
}
