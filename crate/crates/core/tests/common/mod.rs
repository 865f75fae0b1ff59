#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpreg_core::{Domain, ScalarField, Transform, VectorField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sum of a few random low-frequency sines.
pub fn smooth_field(d: Domain, rng: &mut ChaCha8Rng) -> ScalarField {
    let shape = d.shape();
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let mut k = [0.0; 3];
            for a in 0..d.ndim() {
                k[a] = rng.gen_range(0.5..2.5) * std::f64::consts::PI / shape[a] as f64;
            }
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3))
        })
        .collect();
    ScalarField::from_fn(d, |p| {
        waves
            .iter()
            .map(|(k, a, ph)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum()
    })
}

/// Sum of random sines whose wave numbers are resolved on the periodic grid.
pub fn periodic_field(d: Domain, rng: &mut ChaCha8Rng) -> ScalarField {
    let shape = d.shape();
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let mut k = [0.0; 3];
            for a in 0..d.ndim() {
                k[a] = rng.gen_range(0..4) as f64 * 2.0 * std::f64::consts::PI / shape[a] as f64;
            }
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3))
        })
        .collect();
    ScalarField::from_fn(d, |p| {
        waves
            .iter()
            .map(|(k, a, ph)| a * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
            .sum()
    })
}

pub fn smooth_vector(d: Domain, ncomp: usize, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::from_components((0..ncomp).map(|_| smooth_field(d, rng)).collect()).unwrap()
}

pub fn noise(d: Domain, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::from_fn(d, |_| rng.gen_range(-1.0..1.0))
}

pub fn noise_vector(d: Domain, ncomp: usize, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::from_components((0..ncomp).map(|_| noise(d, rng)).collect()).unwrap()
}

/// Identity plus a Gaussian bump displacement per axis, tapered to zero at the
/// boundary by a sine window.
pub fn smooth_map(d: Domain, rng: &mut ChaCha8Rng, amp: f64) -> Transform {
    let nd = d.ndim();
    let shape = d.shape();
    let comps = (0..nd)
        .map(|a| {
            let c: Vec<f64> = (0..3).map(|b| rng.gen_range(0.3..0.7) * shape[b] as f64).collect();
            let s = rng.gen_range(-amp..amp);
            let w = shape[0] as f64 / 4.0;
            ScalarField::from_fn(d, move |p| {
                let r2: f64 = (0..nd).map(|b| (p[b] - c[b]).powi(2)).sum();
                let window: f64 = (0..nd)
                    .map(|b| (std::f64::consts::PI * p[b] / (shape[b] - 1) as f64).sin())
                    .product();
                p[a] + s * window * (-r2 / (2.0 * w * w)).exp()
            })
        })
        .collect();
    Transform::from_coords_pinned(VectorField::from_components(comps).unwrap())
}

/// `x + amp * prod sin^2(pi x_b / (n_b - 1))` along axis 0: zero on the boundary.
pub fn sine_bump_map(d: Domain, amp: f64) -> Transform {
    let nd = d.ndim();
    let shape = d.shape();
    let comps = (0..nd)
        .map(|a| {
            ScalarField::from_fn(d, move |p| {
                let bump: f64 = (0..nd)
                    .map(|b| (std::f64::consts::PI * p[b] / (shape[b] - 1) as f64).sin().powi(2))
                    .product();
                p[a] + if a == 0 { amp * bump } else { 0.0 }
            })
        })
        .collect();
    Transform::from_coords(VectorField::from_components(comps).unwrap()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
