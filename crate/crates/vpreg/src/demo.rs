//! Inverse-consistency and transitivity demonstration on synthetic 2-D grids.
//!
//! Three grids `a`, `b`, `c` are generated from seeded random Jacobian and
//! curl targets. The target-grid method then finds `phi_ab` with
//! `phi_ab(a) = b` and likewise `phi_ba`, `phi_ac`, `phi_cb`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vpreg_core::diffops::compose;
use vpreg_core::vpgrid::{
    consistency_report, grid_svg, lm_target_grid, vp_generate, ConsistencyReport, GridGenOptions,
    GridTargets,
};
use vpreg_core::{Domain, Result, ScalarField, Transform, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DemoOptions {
    pub size: usize,
    pub seed: u64,
    /// Gaussian bumps per target.
    pub bumps: usize,
    /// Largest bump amplitude of the determinant target.
    pub amplitude: f64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self {
            size: 64,
            seed: 1,
            bumps: 4,
            amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoResult {
    pub grids: [Transform; 3],
    pub phi_ab: Transform,
    pub phi_ba: Transform,
    pub phi_ac: Transform,
    pub phi_cb: Transform,
    pub report: ConsistencyReport,
}

fn bump_field(d: Domain, rng: &mut ChaCha8Rng, n: usize, amp: f64) -> ScalarField {
    let size = d.shape()[0] as f64;
    let bumps: Vec<([f64; 2], f64, f64)> = (0..n)
        .map(|_| {
            let c = [rng.gen_range(0.25..0.75) * size, rng.gen_range(0.25..0.75) * size];
            let a = rng.gen_range(-amp..amp);
            let w = rng.gen_range(0.06..0.12) * size;
            (c, a, w)
        })
        .collect();
    ScalarField::from_fn(d, |p| {
        bumps
            .iter()
            .map(|(c, a, w)| {
                let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
                a * (-r2 / (2.0 * w * w)).exp()
            })
            .sum()
    })
}

/// Seeded random determinant and curl targets on a square 2-D grid.
pub fn random_targets(d: Domain, rng: &mut ChaCha8Rng, opts: &DemoOptions) -> GridTargets {
    let s = bump_field(d, rng, opts.bumps, opts.amplitude);
    let mean = s.sum() / d.len() as f64;
    let mut t = GridTargets::identity(d);
    t.f_t = s.map(|v| 1.0 + v - mean);
    t.renormalize();
    let g = bump_field(d, rng, opts.bumps, 0.5 * opts.amplitude);
    t.g_t = VectorField::from_components(vec![g]).expect("one component");
    t
}

pub fn run(opts: &DemoOptions) -> Result<DemoResult> {
    let d = Domain::new(&[opts.size, opts.size])?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let gen = GridGenOptions::default();
    let id = Transform::identity(d);
    let mut grids = Vec::with_capacity(3);
    for _ in 0..3 {
        let t = random_targets(d, &mut rng, opts);
        grids.push(vp_generate(&id, &t, &gen)?.phi);
    }
    let [a, b, c]: [Transform; 3] = grids.try_into().expect("three grids");
    let lm = GridGenOptions {
        residual_tol: 1e-3,
        ..GridGenOptions::default()
    };
    let phi_ab = lm_target_grid(&a, &b, &lm)?.phi_m;
    let phi_ba = lm_target_grid(&b, &a, &lm)?.phi_m;
    let phi_ac = lm_target_grid(&a, &c, &lm)?.phi_m;
    let phi_cb = lm_target_grid(&c, &b, &lm)?.phi_m;
    let report = consistency_report(&phi_ab, &phi_ba, &phi_ac, &phi_cb)?;
    Ok(DemoResult {
        grids: [a, b, c],
        phi_ab,
        phi_ba,
        phi_ac,
        phi_cb,
        report,
    })
}

/// Grid drawings: the three grids, `phi_ab(a)` over `b`, `phi_ba(phi_ab)` over
/// the identity and `phi_cb(phi_ac)` over `phi_ab`.
pub fn panels(r: &DemoResult, every: usize) -> Result<Vec<(&'static str, String)>> {
    let [a, b, c] = &r.grids;
    let ab_a = compose(&r.phi_ab, a)?;
    let round = compose(&r.phi_ba, &r.phi_ab)?;
    let trans = compose(&r.phi_cb, &r.phi_ac)?;
    Ok(vec![
        ("grids.svg", grid_svg(&[(a, "red"), (b, "blue"), (c, "green")], every)),
        ("ab_over_b.svg", grid_svg(&[(b, "blue"), (&ab_a, "red")], every)),
        ("inverse_consistency.svg", grid_svg(&[(&round, "red")], every)),
        ("transitivity.svg", grid_svg(&[(&r.phi_ab, "blue"), (&trans, "red")], every)),
    ])
}
