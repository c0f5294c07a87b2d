//! Scale/shift alignment protocols and depth metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{same_shape, MaskGrid, ScalarGrid};
use crate::io::resize::resize_scalar;

/// Floor applied to non-positive aligned depths.
pub const DEPTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentProtocol {
    /// Affine fit in disparity space.
    LsDisp,
    /// Disparity fit, then a second affine fit in depth.
    #[default]
    LsDispDepth,
    /// Affine fit of a depth prediction in depth space.
    LsDepth,
    /// Depth fit, then a second fit in disparity.
    LsDepthDisp,
}

impl AlignmentProtocol {
    pub const ALL: [AlignmentProtocol; 4] = [Self::LsDisp, Self::LsDispDepth, Self::LsDepth, Self::LsDepthDisp];

    pub fn name(self) -> &'static str {
        match self {
            Self::LsDisp => "ls-disp",
            Self::LsDispDepth => "ls-disp-depth",
            Self::LsDepth => "ls-depth",
            Self::LsDepthDisp => "ls-depth-disp",
        }
    }

    /// Whether the protocol expects a disparity-like prediction.
    pub fn takes_disparity(self) -> bool {
        matches!(self, Self::LsDisp | Self::LsDispDepth)
    }
}

impl std::fmt::Display for AlignmentProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AlignmentProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::param(format!("unknown alignment protocol '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineFit {
    pub a: f64,
    pub b: f64,
    /// Set when the prediction was (numerically) constant on the mask.
    pub degenerate: bool,
}

impl AffineFit {
    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

fn masked_pairs<'a>(
    pred: &'a ScalarGrid,
    gt: &'a ScalarGrid,
    mask: &'a MaskGrid,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    pred.values()
        .iter()
        .zip(gt.values())
        .zip(mask.values())
        .filter_map(|((&p, &g), &m)| m.then_some((p, g)))
}

fn fit_pairs(pairs: &[(f64, f64)]) -> Result<AffineFit> {
    if pairs.len() < 2 {
        return Err(Error::param("affine fit needs at least two masked pixels"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let tiny = f64::EPSILON * f64::EPSILON * n * mx.abs().max(1.0).powi(2);
    let a = sxy / sxx;
    if sxx <= tiny || !a.is_finite() || a == 0.0 {
        return Ok(AffineFit {
            a: 1.0,
            b: my - mx,
            degenerate: true,
        });
    }
    Ok(AffineFit {
        a,
        b: my - a * mx,
        degenerate: false,
    })
}

/// Least-squares `(a, b)` minimizing `Σ_mask (a·pred + b − gt)²`.
pub fn affine_fit_lstsq(pred: &ScalarGrid, gt: &ScalarGrid, mask: &MaskGrid) -> Result<AffineFit> {
    same_shape(pred.shape(), gt.shape())?;
    same_shape(pred.shape(), mask.shape())?;
    fit_pairs(&masked_pairs(pred, gt, mask).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub depth: ScalarGrid,
    pub fits: Vec<AffineFit>,
    /// Pixels whose aligned depth was non-positive and got floored.
    pub clamped: usize,
}

impl Alignment {
    pub fn degenerate(&self) -> bool {
        self.fits.iter().any(|f| f.degenerate)
    }
}

fn apply_fit(x: &ScalarGrid, fit: &AffineFit) -> ScalarGrid {
    ScalarGrid::from_vec_unchecked(x.height(), x.width(), x.values().iter().map(|&v| fit.apply(v)).collect())
}

/// Reciprocal with non-positive inputs floored; counts floored pixels.
fn invert_floored(x: &ScalarGrid, clamped: &mut usize) -> ScalarGrid {
    let v = x
        .values()
        .iter()
        .map(|&d| {
            if d > 0.0 && (1.0 / d).is_finite() {
                1.0 / d
            } else {
                *clamped += 1;
                DEPTH_FLOOR
            }
        })
        .collect();
    ScalarGrid::from_vec_unchecked(x.height(), x.width(), v)
}

fn floor_depth(x: ScalarGrid, clamped: &mut usize) -> ScalarGrid {
    let v = x
        .values()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                d
            } else {
                *clamped += 1;
                DEPTH_FLOOR
            }
        })
        .collect();
    ScalarGrid::from_vec_unchecked(x.height(), x.width(), v)
}

/// Aligns a prediction to ground-truth depth; returns depth.
pub fn align(pred: &ScalarGrid, gt_depth: &ScalarGrid, mask: &MaskGrid, protocol: AlignmentProtocol) -> Result<Alignment> {
    same_shape(pred.shape(), gt_depth.shape())?;
    same_shape(pred.shape(), mask.shape())?;
    if masked_pairs(pred, gt_depth, mask).any(|(_, g)| !(g > 0.0)) {
        return Err(Error::Domain("ground-truth depth must be positive on the mask".into()));
    }
    let gt_disp = ScalarGrid::from_vec_unchecked(
        gt_depth.height(),
        gt_depth.width(),
        gt_depth.values().iter().map(|&g| if g > 0.0 { 1.0 / g } else { 0.0 }).collect(),
    );
    let mut clamped = 0;
    let mut fits = Vec::with_capacity(2);
    let depth = match protocol {
        AlignmentProtocol::LsDisp | AlignmentProtocol::LsDispDepth => {
            let f1 = affine_fit_lstsq(pred, &gt_disp, mask)?;
            fits.push(f1);
            let depth = invert_floored(&apply_fit(pred, &f1), &mut clamped);
            if protocol == AlignmentProtocol::LsDisp {
                depth
            } else {
                let f2 = affine_fit_lstsq(&depth, gt_depth, mask)?;
                fits.push(f2);
                floor_depth(apply_fit(&depth, &f2), &mut clamped)
            }
        }
        AlignmentProtocol::LsDepth => {
            let f = affine_fit_lstsq(pred, gt_depth, mask)?;
            fits.push(f);
            floor_depth(apply_fit(pred, &f), &mut clamped)
        }
        AlignmentProtocol::LsDepthDisp => {
            let f1 = affine_fit_lstsq(pred, gt_depth, mask)?;
            fits.push(f1);
            let disp = invert_floored(&floor_depth(apply_fit(pred, &f1), &mut clamped), &mut 0);
            let f2 = affine_fit_lstsq(&disp, &gt_disp, mask)?;
            fits.push(f2);
            invert_floored(&apply_fit(&disp, &f2), &mut clamped)
        }
    };
    Ok(Alignment { depth, fits, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub abs_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub rmse_log: f64,
    pub si_log: f64,
    pub sq_rel: f64,
    pub valid_pixel_count: usize,
    /// Masked pixels dropped for a non-positive prediction or ground truth.
    pub excluded: usize,
}

impl MetricsReport {
    /// The nine metrics in table order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.delta1,
            self.delta2,
            self.delta3,
            self.abs_rel,
            self.rmse,
            self.log10,
            self.rmse_log,
            self.si_log,
            self.sq_rel,
        ]
    }

    pub const NAMES: [&'static str; 9] = [
        "delta1", "delta2", "delta3", "abs_rel", "rmse", "log10", "rmse_log", "si_log", "sq_rel",
    ];
}

pub fn compute_metrics(pred: &ScalarGrid, gt: &ScalarGrid, mask: &MaskGrid) -> Result<MetricsReport> {
    same_shape(pred.shape(), gt.shape())?;
    same_shape(pred.shape(), mask.shape())?;
    let mut excluded = 0;
    let pairs: Vec<(f64, f64)> = masked_pairs(pred, gt, mask)
        .filter(|&(p, g)| {
            let ok = p > 0.0 && g > 0.0;
            excluded += usize::from(!ok);
            ok
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::param("no valid pixel to evaluate"));
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pairs.iter().map(|&(p, g)| f(p, g)).sum::<f64>() / n;
    let ratio = |p: f64, g: f64| (p / g).max(g / p);
    let delta = |k: i32| mean(&|p, g| f64::from(u8::from(ratio(p, g) < 1.25f64.powi(k))));
    let d_mean = mean(&|p, g| p.ln() - g.ln());
    let d2_mean = mean(&|p, g| (p.ln() - g.ln()).powi(2));
    Ok(MetricsReport {
        delta1: delta(1),
        delta2: delta(2),
        delta3: delta(3),
        abs_rel: mean(&|p, g| (p - g).abs() / g),
        rmse: mean(&|p, g| (p - g).powi(2)).sqrt(),
        log10: mean(&|p, g| (p.log10() - g.log10()).abs()),
        rmse_log: d2_mean.sqrt(),
        si_log: 100.0 * (d2_mean - d_mean * d_mean).max(0.0).sqrt(),
        sq_rel: mean(&|p, g| (p - g).powi(2) / g),
        valid_pixel_count: pairs.len(),
        excluded,
    })
}

/// Percentage reduction of `ours` relative to `base`.
pub fn relative_delta(base: f64, ours: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::param("relative delta needs a positive base"));
    }
    Ok(100.0 * (base - ours) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
}

/// Equal-width histogram over the data range.
pub fn delta_histogram(samples: &[f64], bins: usize) -> Result<Histogram> {
    if samples.is_empty() || bins == 0 {
        return Err(Error::param("histogram needs samples and at least one bin"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite histogram sample".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &s in samples {
        let i = if width > 0.0 { (((s - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[i] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
    })
}

/// Evaluation knobs exposed through the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub protocol: AlignmentProtocol,
    /// Ground-truth depths above the cap are left out of the mask.
    pub depth_cap: Option<f64>,
    /// Multiplier applied to 16-bit PNG depth values.
    pub png_depth_scale: f64,
    /// Bilinearly resize predictions to the ground-truth resolution.
    pub resize_pred: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            protocol: AlignmentProtocol::default(),
            depth_cap: None,
            png_depth_scale: 1.0 / 256.0,
            resize_pred: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub metrics: MetricsReport,
    pub alignment: Alignment,
}

/// Resize (if enabled), cap, align and score one prediction.
pub fn evaluate_sample(
    pred: &ScalarGrid,
    gt_depth: &ScalarGrid,
    mask: &MaskGrid,
    settings: &EvalSettings,
) -> Result<SampleEval> {
    let pred = if pred.shape() != gt_depth.shape() && settings.resize_pred {
        resize_scalar(pred, gt_depth.height(), gt_depth.width())?
    } else {
        pred.clone()
    };
    let mask = match settings.depth_cap {
        Some(cap) => mask.and(&MaskGrid::from_fn(gt_depth.height(), gt_depth.width(), |r, c| {
            gt_depth.get(r, c) <= cap
        })?)?,
        None => mask.clone(),
    };
    mask.require_nonempty()?;
    let alignment = align(&pred, gt_depth, &mask, settings.protocol)?;
    let metrics = compute_metrics(&alignment.depth, gt_depth, &mask)?;
    Ok(SampleEval { metrics, alignment })
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub sample: String,
    pub protocol: AlignmentProtocol,
    #[serde(flatten)]
    pub metrics: MetricsReport,
    pub clamped: usize,
    pub degenerate: bool,
}

pub fn write_csv_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    // csv cannot serialize flattened structs, so the header is spelled out.
    let mut header = vec!["sample", "protocol"];
    header.extend(MetricsReport::NAMES);
    header.extend(["valid_pixel_count", "excluded", "clamped", "degenerate"]);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.sample.clone(), r.protocol.to_string()];
        rec.extend(r.metrics.values().iter().map(|v| v.to_string()));
        rec.extend([
            r.metrics.valid_pixel_count.to_string(),
            r.metrics.excluded.to_string(),
            r.clamped.to_string(),
            r.degenerate.to_string(),
        ]);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(format!("{other:?}")),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolSummary {
    pub protocol: AlignmentProtocol,
    pub samples: usize,
    pub mean: std::collections::BTreeMap<String, f64>,
}

/// Per-protocol means over the rows.
pub fn summarize(rows: &[ReportRow]) -> Vec<ProtocolSummary> {
    AlignmentProtocol::ALL
        .into_iter()
        .filter_map(|p| {
            let sel: Vec<_> = rows.iter().filter(|r| r.protocol == p).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            let mean = MetricsReport::NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| (name.to_string(), sel.iter().map(|r| r.metrics.values()[i]).sum::<f64>() / n))
                .collect();
            Some(ProtocolSummary {
                protocol: p,
                samples: sel.len(),
                mean,
            })
        })
        .collect()
}

pub fn write_json_summary(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(&summarize(rows)).map_err(|e| Error::format(e.to_string()))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::run_rng;
    use rand::Rng;

    fn grid(h: usize, w: usize, v: &[f64]) -> ScalarGrid {
        ScalarGrid::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn fit_identity_and_inverse_affine() {
        let gt = ScalarGrid::from_fn(3, 4, |r, c| 1.0 + r as f64 + 0.5 * c as f64).unwrap();
        let m = MaskGrid::all(3, 4).unwrap();
        let f = affine_fit_lstsq(&gt, &gt, &m).unwrap();
        assert!((f.a - 1.0).abs() < 1e-12 && f.b.abs() < 1e-12);
        let pred = gt.map(|g| 2.0 * g + 3.0).unwrap();
        let f = affine_fit_lstsq(&pred, &gt, &m).unwrap();
        assert!((f.a - 0.5).abs() < 1e-12 && (f.b + 1.5).abs() < 1e-12);
    }

    #[test]
    fn fit_degenerate_fallback() {
        let pred = ScalarGrid::filled(2, 2, 3.0).unwrap();
        let gt = grid(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = affine_fit_lstsq(&pred, &gt, &MaskGrid::all(2, 2).unwrap()).unwrap();
        assert!(f.degenerate);
        assert_eq!((f.a, f.b), (1.0, -0.5));
        let one = MaskGrid::from_fn(2, 2, |r, c| r == 0 && c == 0).unwrap();
        assert!(matches!(affine_fit_lstsq(&pred, &gt, &one), Err(Error::Parameter(_))));
    }

    /// Solves the raw (uncentered) 2×2 normal equations by Cramer's rule.
    fn normal_equation_oracle(pairs: &[(f64, f64)]) -> (f64, f64) {
        let n = pairs.len() as f64;
        let (sx, sy) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let sxx: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pairs.iter().map(|p| p.0 * p.1).sum();
        let det = sxx * n - sx * sx;
        ((sxy * n - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    }

    #[test]
    fn fit_matches_normal_equations() {
        let mut rng = run_rng(11, 0);
        let pred = ScalarGrid::from_fn(9, 9, |_, _| rng.random_range(0.0..1.0)).unwrap();
        let gt = pred.map(|p| 1.7 * p - 0.2).unwrap().map2(
            &ScalarGrid::from_fn(9, 9, |_, _| rng.random_range(-0.05..0.05)).unwrap(),
            |a, b| a + b,
        ).unwrap();
        let mask = MaskGrid::from_fn(9, 9, |r, c| (r + c) % 3 != 0).unwrap();
        let f = affine_fit_lstsq(&pred, &gt, &mask).unwrap();
        let (a, b) = normal_equation_oracle(&masked_pairs(&pred, &gt, &mask).collect::<Vec<_>>());
        assert!((f.a - a).abs() < 1e-10 && (f.b - b).abs() < 1e-10);

        // Optimality against ±1e-3 perturbations.
        let res = |a: f64, b: f64| masked_pairs(&pred, &gt, &mask).map(|(p, g)| (a * p + b - g).powi(2)).sum::<f64>();
        let best = res(f.a, f.b);
        for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (1e-3, -1e-3)] {
            assert!(res(f.a + da, f.b + db) >= best);
        }
    }

    fn gt_scene() -> (ScalarGrid, MaskGrid) {
        let gt = ScalarGrid::from_fn(6, 7, |r, c| 1.0 + 0.3 * r as f64 + 0.2 * c as f64).unwrap();
        (gt, MaskGrid::all(6, 7).unwrap())
    }

    #[test]
    fn align_exact_cases() {
        let (gt, m) = gt_scene();
        let gt_disp = gt.map(|g| 1.0 / g).unwrap();
        let out = align(&gt_disp, &gt, &m, AlignmentProtocol::LsDispDepth).unwrap();
        assert!(out.depth.values().iter().zip(gt.values()).all(|(a, b)| (a - b).abs() < 1e-9));
        let pred = gt_disp.map(|d| 4.0 * d - 0.1).unwrap();
        let out = align(&pred, &gt, &m, AlignmentProtocol::LsDisp).unwrap();
        assert!(out.depth.values().iter().zip(gt.values()).all(|(a, b)| (a - b).abs() < 1e-9));
        let out = align(&gt, &gt, &m, AlignmentProtocol::LsDepth).unwrap();
        assert!(out.depth.values().iter().zip(gt.values()).all(|(a, b)| (a - b).abs() < 1e-12));
        let out = align(&gt.map(|g| 3.0 * g + 1.0).unwrap(), &gt, &m, AlignmentProtocol::LsDepthDisp).unwrap();
        assert!(out.depth.values().iter().zip(gt.values()).all(|(a, b)| (a - b).abs() < 1e-9));
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn align_is_compositional() {
        let (gt, m) = gt_scene();
        let mut rng = run_rng(3, 0);
        let pred = ScalarGrid::from_fn(6, 7, |_, _| rng.random_range(0.2..1.0)).unwrap();
        let two = align(&pred, &gt, &m, AlignmentProtocol::LsDispDepth).unwrap();
        let first = align(&pred, &gt, &m, AlignmentProtocol::LsDisp).unwrap();
        let composed = align(&first.depth, &gt, &m, AlignmentProtocol::LsDepth).unwrap();
        for (a, b) in two.depth.values().iter().zip(composed.depth.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn align_floors_nonpositive() {
        let (gt, _) = gt_scene();
        // Fit is the identity on the mask; the excluded pixel stays negative.
        let m = MaskGrid::from_fn(6, 7, |r, c| (r, c) != (0, 0)).unwrap();
        let pred = ScalarGrid::from_fn(6, 7, |r, c| if (r, c) == (0, 0) { -50.0 } else { gt.get(r, c) }).unwrap();
        let out = align(&pred, &gt, &m, AlignmentProtocol::LsDepth).unwrap();
        assert_eq!(out.clamped, 1);
        assert!(out.clamped > 0);
        assert!(out.depth.min() >= DEPTH_FLOOR);
        let bad = gt.map(|g| g - 2.0).unwrap();
        assert!(matches!(align(&pred, &bad, &m, AlignmentProtocol::LsDepth), Err(Error::Domain(_))));
    }

    #[test]
    fn metrics_identity() {
        let (gt, m) = gt_scene();
        let r = compute_metrics(&gt, &gt, &m).unwrap();
        assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));
        assert_eq!([r.abs_rel, r.rmse, r.log10, r.rmse_log, r.si_log, r.sq_rel], [0.0; 6]);
    }

    #[test]
    fn metrics_two_pixel_hand_case() {
        let p = grid(2, 2, &[1.0, 2.0, 1.0, 1.0]);
        let g = grid(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let m = MaskGrid::from_fn(2, 2, |r, _| r == 0).unwrap();
        let r = compute_metrics(&p, &g, &m).unwrap();
        assert_eq!(r.delta1, 0.5);
        assert_eq!(r.abs_rel, 0.5);
        assert_eq!(r.rmse, 0.5f64.sqrt());
        assert_eq!(r.sq_rel, 0.5);
        assert_eq!(r.valid_pixel_count, 2);
    }

    #[test]
    fn metrics_exclude_nonpositive() {
        let p = grid(2, 2, &[1.0, 0.0, 1.0, -1.0]);
        let g = ScalarGrid::filled(2, 2, 1.0).unwrap();
        let r = compute_metrics(&p, &g, &MaskGrid::all(2, 2).unwrap()).unwrap();
        assert_eq!((r.valid_pixel_count, r.excluded), (2, 2));
    }

    #[test]
    fn relative_delta_cases() {
        assert!((relative_delta(0.00227, 0.00223).unwrap() - 1.75).abs() < 0.05);
        assert_eq!(relative_delta(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(relative_delta(2.0, 1.0).unwrap(), 50.0);
        assert!(matches!(relative_delta(0.0, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn histogram_cases() {
        let h = delta_histogram(&[0.7], 5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.mean, 0.7);
        let sym = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let h = delta_histogram(&sym, 4).unwrap();
        assert_eq!(h.mean, 0.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.edges.len(), 5);
        assert!(delta_histogram(&[], 3).is_err());
    }

    #[test]
    fn protocol_names_roundtrip() {
        for p in AlignmentProtocol::ALL {
            assert_eq!(p.name().parse::<AlignmentProtocol>().unwrap(), p);
        }
    }

    #[test]
    fn reports_write() {
        let (gt, m) = gt_scene();
        let s = evaluate_sample(&gt.map(|g| 1.0 / g).unwrap(), &gt, &m, &EvalSettings::default()).unwrap();
        let rows = vec![ReportRow {
            sample: "a".into(),
            protocol: AlignmentProtocol::LsDispDepth,
            metrics: s.metrics,
            clamped: 0,
            degenerate: false,
        }];
        let dir = tempfile::tempdir().unwrap();
        write_csv_report(&rows, &dir.path().join("r.csv")).unwrap();
        write_json_summary(&rows, &dir.path().join("r.json")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(csv.starts_with("sample,protocol,delta1,delta2,delta3,abs_rel,rmse,log10,rmse_log,si_log,sq_rel"));
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(json[0]["protocol"], "ls-disp-depth");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn positive_grid() -> impl Strategy<Value = ScalarGrid> {
            proptest::collection::vec(0.1f64..10.0, 12).prop_map(|v| ScalarGrid::new(3, 4, v).unwrap())
        }

        proptest! {
            #[test]
            fn deltas_monotone(p in positive_grid(), g in positive_grid()) {
                let r = compute_metrics(&p, &g, &MaskGrid::all(3, 4).unwrap()).unwrap();
                prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
                prop_assert!(r.values().iter().all(|v| v.is_finite()));
            }

            #[test]
            fn scale_invariance(p in positive_grid(), g in positive_grid(), c in 0.1f64..10.0) {
                let m = MaskGrid::all(3, 4).unwrap();
                let a = compute_metrics(&p, &g, &m).unwrap();
                let b = compute_metrics(&p.scale(c).unwrap(), &g.scale(c).unwrap(), &m).unwrap();
                for (x, y) in [(a.delta1, b.delta1), (a.delta2, b.delta2), (a.delta3, b.delta3)] {
                    prop_assert_eq!(x, y);
                }
                let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * (1.0 + x.abs());
                prop_assert!(close(a.abs_rel, b.abs_rel));
                prop_assert!(close(a.rmse_log, b.rmse_log));
                prop_assert!(close(a.si_log, b.si_log));
                prop_assert!(close(a.log10, b.log10));
                prop_assert!(close(c * a.rmse, b.rmse));
                prop_assert!(close(c * a.sq_rel, b.sq_rel));
            }
        }
    }
}
