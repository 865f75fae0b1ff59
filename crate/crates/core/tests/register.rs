mod common;

use vpreg_core::diffops::BcMode;
use vpreg_core::metrics::{dice, warp_labels, LabelPair};
use vpreg_core::phantom::{disk_to_c, shifted_blob};
use vpreg_core::register::{
    mse, register, stage1_global, stage2_local, vpreg_pipeline, zscore, ControlUpdate, Engine, RegOptions, Stage,
    Trace,
};
use vpreg_core::{Domain, Error, ScalarField, Transform};

fn strictly_decreasing(trace: &Trace, stage: Stage) -> bool {
    let v: Vec<f64> = trace.stage(stage).map(|p| p.mse).collect();
    v.windows(2).all(|w| w[1] < w[0])
}

fn disk() -> (ScalarField, ScalarField) {
    let p = disk_to_c(64);
    (zscore(&p.moving), zscore(&p.fixed))
}

#[test]
fn stage_traces_strictly_decrease_for_both_engines() {
    let (m, f) = disk();
    for engine in [Engine::Penalty, Engine::Control] {
        let opts = RegOptions {
            engine,
            ..RegOptions::default()
        };
        let r = register(&m, &f, &opts).unwrap();
        assert!(strictly_decreasing(&r.trace, Stage::Stage1), "{engine:?}");
        assert!(strictly_decreasing(&r.trace, Stage::Stage2), "{engine:?}");
        assert!(r.trace.points.iter().all(|p| p.min_jd > 0.0), "{engine:?}");
        assert!(r.phi.is_diffeomorphic());
        let solves: Vec<usize> = r.trace.points.iter().map(|p| p.solves).collect();
        assert!(solves.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn homotopy_keeps_jd_positive_without_guard() {
    let (m, f) = disk();
    for tau0 in [0.1, 0.2, 0.5] {
        let mut opts = RegOptions {
            fold_guard: false,
            ..RegOptions::default()
        };
        opts.stage1.tau0 = tau0;
        let (_, trace) = stage1_global(&m, &f, &opts).unwrap();
        assert!(trace.points.iter().all(|p| p.min_jd > 0.0), "tau0 {tau0}");
    }
}

#[test]
fn engines_reach_similar_final_mse() {
    let (m, f) = disk();
    let fin = |engine| {
        let opts = RegOptions {
            engine,
            ..RegOptions::default()
        };
        register(&m, &f, &opts).unwrap().trace.final_mse().unwrap()
    };
    let (p, c) = (fin(Engine::Penalty), fin(Engine::Control));
    assert!((p - c).abs() <= 0.2 * p.max(c), "penalty {p} control {c}");
}

#[test]
fn penalty_engine_needs_fewer_solves() {
    let (m, f) = disk();
    let id = Transform::identity(*m.domain());
    let initial = mse(&m, &f, &id).unwrap();
    let run = |engine| {
        let opts = RegOptions {
            engine,
            ..RegOptions::default()
        };
        register(&m, &f, &opts).unwrap().trace
    };
    let (tp, tc) = (run(Engine::Penalty), run(Engine::Control));
    for frac in [0.5, 0.25, 0.1] {
        let thr = frac * initial;
        let sp = tp.solves_to_reach(thr).expect("penalty reaches threshold");
        let sc = tc.solves_to_reach(thr).expect("control reaches threshold");
        assert!(sp < sc, "{frac}: penalty {sp} control {sc}");
    }
}

#[test]
fn trajectory_is_invariant_under_affine_intensity_change() {
    let p = disk_to_c(48);
    let opts = RegOptions::default();
    let a = register(&zscore(&p.moving), &zscore(&p.fixed), &opts).unwrap();
    let scaled = |s: &ScalarField| s.map(|v| 3.0 * v + 5.0);
    let b = register(&zscore(&scaled(&p.moving)), &zscore(&scaled(&p.fixed)), &opts).unwrap();
    let key = |t: &Trace| t.points.iter().map(|q| (q.stage, q.iteration, q.solves)).collect::<Vec<_>>();
    assert_eq!(key(&a.trace), key(&b.trace));
    for (x, y) in a.trace.points.iter().zip(&b.trace.points) {
        assert!((x.mse - y.mse).abs() <= 1e-9 * x.mse.max(1e-12));
    }
}

#[test]
fn control_update_modes_and_periodic_boundary_run() {
    let (m, f) = shifted_blob(32, 2.0);
    let (m, f) = (zscore(&m), zscore(&f));
    for (bc, cu) in [
        (BcMode::DirichletZero, ControlUpdate::Accumulate),
        (BcMode::Periodic, ControlUpdate::Reset),
    ] {
        let opts = RegOptions {
            bc,
            control_update: cu,
            ..RegOptions::default()
        };
        let r = register(&m, &f, &opts).unwrap();
        let id = Transform::identity(*m.domain());
        assert!(mse(&m, &f, &r.phi).unwrap() < 0.5 * mse(&m, &f, &id).unwrap(), "{bc:?} {cu:?}");
        assert!(r.phi.is_diffeomorphic());
    }
}

#[test]
fn stage2_alone_improves_a_small_shift() {
    let (m, f) = shifted_blob(32, 1.0);
    let (phi, trace) = stage2_local(&m, &f, &RegOptions::default()).unwrap();
    assert!(trace.stage(Stage::Stage1).next().is_none());
    let id = Transform::identity(*m.domain());
    assert!(mse(&m, &f, &phi).unwrap() < mse(&m, &f, &id).unwrap());
}

#[test]
fn pipeline_reports_metrics_for_the_disk() {
    let p = disk_to_c(64);
    let r = vpreg_pipeline(
        &p.moving,
        &p.fixed,
        Some(LabelPair {
            moving: &p.moving_labels,
            fixed: &p.fixed_labels,
        }),
        &RegOptions::default(),
    )
    .unwrap();
    assert!(r.metrics.mse_ratio < 0.2);
    let d = dice(&warp_labels(&p.moving_labels, &r.phi), &p.fixed_labels, 1).unwrap();
    assert_eq!(r.metrics.dice[&1], d);
    assert!(r.metrics.inverse.is_some());
    assert!(r.warped_fixed.is_some() && r.phi_inv.is_some());
}

#[test]
fn invalid_options_and_domains_are_rejected() {
    let (m, _) = shifted_blob(16, 0.0);
    let (f, _) = shifted_blob(20, 0.0);
    assert!(matches!(
        register(&m, &f, &RegOptions::default()),
        Err(Error::DomainMismatch { .. })
    ));
    let mut bad = RegOptions::default();
    bad.stage1.tau0 = 0.0;
    assert!(matches!(register(&m, &m, &bad), Err(Error::InvalidOptions(_))));
    let d = Domain::new(&[16, 16]).unwrap();
    let z = ScalarField::zeros(d);
    let r = register(&z, &z, &RegOptions::default()).unwrap();
    assert_eq!(r.phi, Transform::identity(d));
}
