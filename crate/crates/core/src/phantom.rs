//! Synthetic scenes with analytically known geometry.

use rand::Rng;

use crate::error::Result;
use crate::grid::{MaskGrid, RgbGrid, ScalarGrid, Vec3Grid};
use crate::refine::run_rng;
use crate::vec3::{self, Vec3};

/// Orthographic scale the phantoms are proportioned for. At the default
/// scale of 7 the image spans only 2/7 laterally, so these depth ranges
/// would put nearly every normal at grazing angles.
pub const PHANTOM_ORTHO_SCALE: f64 = 1.0;

/// Disparity of a hemispherical cap of radius 0.8 (in `[-1, 1]` coordinates)
/// on a flat background: `0.4` outside, up to `0.8` at the apex.
pub fn hemisphere(n: usize) -> ScalarGrid {
    ScalarGrid::from_fn(n, n, |r, c| {
        let (u, v) = centered(r, c, n);
        let rho2 = (u * u + v * v) / 0.64;
        0.4 + 0.4 * (1.0 - rho2).max(0.0).sqrt()
    })
    .expect("phantom size >= 2")
}

/// Isotropic Gaussian bump, `0.4 + 0.4·exp(−ρ²/(2·0.35²))`.
pub fn gaussian_bump(n: usize) -> ScalarGrid {
    ScalarGrid::from_fn(n, n, |r, c| {
        let (u, v) = centered(r, c, n);
        0.4 + 0.4 * (-(u * u + v * v) / (2.0 * 0.35 * 0.35)).exp()
    })
    .expect("phantom size >= 2")
}

fn centered(r: usize, c: usize, n: usize) -> (f64, f64) {
    let f = |i: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    (f(c), f(r))
}

/// Adds a smooth, non-affine perturbation (a few low-frequency sinusoids
/// with seeded phases) of peak amplitude `amplitude`, clamped to `[0, 1]`.
pub fn smooth_perturbation(disp: &ScalarGrid, seed: u64, amplitude: f64) -> Result<ScalarGrid> {
    let mut rng = run_rng(seed, 0);
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(1.0..2.5),
                rng.random_range(1.0..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let (h, w) = disp.shape();
    let raw = ScalarGrid::from_fn(h, w, |r, c| {
        let (u, v) = (
            (2.0 * c as f64 + 1.0) / w as f64 - 1.0,
            (2.0 * r as f64 + 1.0) / h as f64 - 1.0,
        );
        waves.iter().map(|&(fu, fv, ph)| (fu * u * 2.0 + fv * v * 1.3 + ph).sin()).sum::<f64>()
    })?;
    let peak = raw.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    disp.map2(&raw, |d, p| (d + amplitude * p / peak).clamp(0.0, 1.0))
}

/// Adds i.i.d. uniform noise in `[−sigma, sigma]`, clamped to `[0, 1]`.
pub fn noisy(disp: &ScalarGrid, seed: u64, sigma: f64) -> Result<ScalarGrid> {
    let mut rng = run_rng(seed, 0);
    ScalarGrid::from_fn(disp.height(), disp.width(), |r, c| {
        (disp.get(r, c) + rng.random_range(-sigma..=sigma)).clamp(0.0, 1.0)
    })
}

/// Gently textured albedo image used as the re-lighting input.
pub fn albedo_image(n: usize) -> RgbGrid {
    RgbGrid::from_fn(n, n, |r, c| {
        let t = 0.05 * ((r as f64 * 0.4).sin() + (c as f64 * 0.3).cos());
        [0.65 + t, 0.55 + t, 0.45 - t]
    })
    .expect("phantom size >= 2")
}

/// Unit sphere filling the frame: gray Lambertian image `max(0, N·l)`,
/// object mask and true normals (`(0, 0, 1)` outside the mask).
pub fn lambertian_sphere(n: usize, light: Vec3) -> (ScalarGrid, MaskGrid, Vec3Grid) {
    let light = vec3::normalize(light).expect("non-zero light");
    let mut normals = Vec::with_capacity(n * n);
    let mut mask = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (u, v) = centered(r, c, n);
            // Same (u right, v down) frame as the image-gradient init.
            let rho2 = u * u + v * v;
            if rho2 < 0.95 * 0.95 {
                normals.push([u, v, (1.0 - rho2).sqrt()]);
                mask.push(true);
            } else {
                normals.push([0.0, 0.0, 1.0]);
                mask.push(false);
            }
        }
    }
    let gray: Vec<f64> = normals
        .iter()
        .zip(&mask)
        .map(|(nn, &m)| if m { vec3::dot(*nn, light).max(0.0) } else { 0.0 })
        .collect();
    (
        ScalarGrid::new(n, n, gray).expect("phantom size >= 2"),
        MaskGrid::new(n, n, mask).expect("phantom size >= 2"),
        Vec3Grid::new(n, n, normals).expect("phantom size >= 2"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantoms_in_unit_range() {
        for g in [hemisphere(32), gaussian_bump(32)] {
            assert!(g.min() >= 0.0 && g.max() <= 1.0);
            assert!(g.max() > 0.75 && g.min() >= 0.4);
        }
        let p = smooth_perturbation(&hemisphere(32), 1, 0.1).unwrap();
        assert!(p.min() >= 0.0 && p.max() <= 1.0);
        assert_ne!(p, hemisphere(32));
    }

    #[test]
    fn sphere_normals_unit() {
        let (gray, mask, normals) = lambertian_sphere(20, [0.0, 0.0, 1.0]);
        assert!(normals.is_unit(1e-12));
        assert!(mask.count() > 200);
        assert!(gray.max() <= 1.0 && gray.min() >= 0.0);
    }
}
