mod common;

use std::fs;

use common::*;
use tempfile::tempdir;
use vpreg::io::{read_image, read_labels, read_record_json, read_transform};
use vpreg_core::diffops::jacobian_determinant;
use vpreg_core::metrics::{cohort_summary, metric_record, LabelPair, SummaryStats};
use vpreg_core::phantom::{disk_to_c, shifted_blob};
use vpreg_core::vpgrid::Deviation;
use vpreg_core::{Domain, ScalarField, Transform, VectorField};

fn folded_map(d: Domain) -> Transform {
    let mut coords = Transform::identity(d).into_coords();
    let idx = d.index(5, 5, 0);
    coords.component_mut(0).values_mut()[idx] = 2.0;
    Transform::from_coords(coords).unwrap()
}

#[test]
fn register_equal_images_writes_identity() {
    let dir = tempdir().unwrap();
    let (m, _) = shifted_blob(16, 0.0);
    let mp = save(dir.path(), "m", m.clone());
    let out = dir.path().join("run");
    let o = run(&["register", "--moving", s(&mp), "--fixed", s(&mp), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let phi = read_transform(&out.join("phi")).unwrap();
    assert_eq!(Deviation::between(&phi, &Transform::identity(*m.domain())).max, 0.0);
    for f in [
        "phi_inv.vpv.json",
        "phi_inv.vpv.raw",
        "warped_moving.vpv.json",
        "warped_fixed.vpv.json",
        "metrics.csv",
        "metrics.json",
        "metrics_inverse.csv",
        "metrics_inverse.json",
        "table_dice.csv",
        "table_quality.csv",
        "table_inverse.csv",
        "trace.csv",
        "options.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn register_mismatched_dims_exits_2() {
    let dir = tempdir().unwrap();
    let (a, _) = shifted_blob(16, 0.0);
    let (b, _) = shifted_blob(20, 0.0);
    let ap = save(dir.path(), "a", a);
    let bp = save(dir.path(), "b", b);
    let out = dir.path().join("run");
    let o = run(&["register", "--moving", s(&ap), "--fixed", s(&bp), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn register_missing_input_exits_2() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.vpv.json");
    let o = run(&["register", "--moving", s(&missing), "--fixed", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn both_engines_produce_complete_outputs() {
    let dir = tempdir().unwrap();
    let p = save_phantom(dir.path(), &disk_to_c(64));
    for engine in ["penalty", "control"] {
        let out = dir.path().join(engine);
        let o = run(&[
            "register",
            "--moving",
            s(&p.moving),
            "--fixed",
            s(&p.fixed),
            "--labels-moving",
            s(&p.labels_moving),
            "--labels-fixed",
            s(&p.labels_fixed),
            "--engine",
            engine,
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{engine}: {}", stderr(&o));
        let fwd = read_record_json(&out.join("metrics.json")).unwrap();
        let inv = read_record_json(&out.join("metrics_inverse.json")).unwrap();
        assert!(fwd.mse_ratio < 1.0, "{engine}: {}", fwd.mse_ratio);
        assert!(fwd.inverse.is_some() && inv.inverse.is_some());
        assert_eq!(fwd.dice.keys().collect::<Vec<_>>(), vec![&1]);
        let (header, rows) = csv_rows(&out.join("table_dice.csv"));
        assert_eq!(header, ["map", "dice_1", "dice_mean"]);
        assert_eq!(rows.len(), 2);
        let (_, rows) = csv_rows(&out.join("trace.csv"));
        assert!(rows.len() > 1);
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempdir().unwrap();
    let (m, f) = shifted_blob(16, 1.0);
    let mp = save(dir.path(), "m", m);
    let fp = save(dir.path(), "f", f);
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[register]\nengine = \"control\"\nfold_guard = false\n").unwrap();
    let out = dir.path().join("run");
    let o = run(&[
        "--config",
        s(&cfg),
        "register",
        "--moving",
        s(&mp),
        "--fixed",
        s(&fp),
        "--engine",
        "penalty",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resolved: toml::Value = fs::read_to_string(out.join("options.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["register"]["engine"].as_str(), Some("penalty"));
    assert_eq!(resolved["register"]["fold_guard"].as_bool(), Some(false));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[register]\nunknown_key = 1\n").unwrap();
    let o = run(&["--config", s(&cfg), "demo-consistency", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invert_identity_is_identity() {
    let dir = tempdir().unwrap();
    let d = Domain::new(&[12, 12]).unwrap();
    let p = save(dir.path(), "id", Transform::identity(d));
    let out = dir.path().join("inv");
    let o = run(&["invert", "--map", s(&p), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let inv = read_transform(&out.join("phi_inv")).unwrap();
    assert!(Deviation::between(&inv, &Transform::identity(d)).max < 1e-12);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("consistency.json")).unwrap()).unwrap();
    for dir in ["inv_after_fwd", "fwd_after_inv"] {
        let c = &report["consistency"][dir];
        for key in ["max_det", "sum_det", "sum_det_per_voxel", "max_norm", "sum_norm", "sum_norm_per_voxel"] {
            assert!(c[key].is_number(), "{dir}.{key}");
        }
    }
    let (header, rows) = csv_rows(&out.join("table_inverse.csv"));
    assert_eq!(header, ["composition", "measure", "max", "sum", "sum_per_voxel"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn invert_folded_map_exits_2_with_min_jd() {
    let dir = tempdir().unwrap();
    let d = Domain::new(&[12, 12]).unwrap();
    let phi = folded_map(d);
    assert!(phi.min_interior_jd() <= 0.0);
    let p = save(dir.path(), "fold", phi);
    let o = run(&["invert", "--map", s(&p), "--out", s(&dir.path().join("inv"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("min JD"), "{}", stderr(&o));
}

#[test]
fn gridgen_uniform_is_identity() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run(&["gridgen", "--preset", "uniform", "--size", "16", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let phi = read_transform(&out.join("phi")).unwrap();
    let d = Domain::new(&[16, 16]).unwrap();
    assert!(Deviation::between(&phi, &Transform::identity(d)).max < 1e-12);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["diffeomorphic"], true);
    assert!(report["jd_residual_rel"].as_f64().unwrap() < 1e-12);
}

#[test]
fn gridgen_radial_bump_reports_small_residual() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run(&["gridgen", "--preset", "radial-bump", "--size", "64", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let reported = report["jd_residual_rel"].as_f64().unwrap();
    assert!(reported < 0.05, "{reported}");
    let phi = read_transform(&out.join("phi")).unwrap();
    let d = *phi.domain();
    let c = 31.5;
    let bump = ScalarField::from_fn(d, |p| (-((p[0] - c).powi(2) + (p[1] - c).powi(2)) / 72.0).exp());
    let mean = bump.sum() / d.len() as f64;
    let f_t = bump.map(|b| 1.0 + 0.8 * (b - mean));
    let f_t = f_t.map(|v| v * d.len() as f64 / f_t.sum());
    let jd = jacobian_determinant(&phi);
    let brute = jd.zip_map(&f_t, |a, b| a - b).norm() / f_t.norm();
    assert!((brute - reported).abs() < 1e-6 * reported.max(1.0), "{brute} vs {reported}");
}

#[test]
fn gridgen_mass_mismatch_needs_renormalize() {
    let dir = tempdir().unwrap();
    let d = Domain::new(&[16, 16]).unwrap();
    let f_t = ScalarField::from_fn(d, |p| 1.0 + 1e-4 * p[0]);
    let fp = save(dir.path(), "ft", f_t);
    let out = dir.path().join("g");
    let o = run(&["gridgen", "--f-target", s(&fp), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["gridgen", "--f-target", s(&fp), "--renormalize", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let g = VectorField::zeros(d, 1);
    let gp = save(dir.path(), "gt", g);
    let o = run(&["gridgen", "--f-target", s(&fp), "--g-target", s(&gp), "--renormalize", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn metrics_identity_equal_labels_gives_unit_dice() {
    let dir = tempdir().unwrap();
    let p = save_phantom(dir.path(), &disk_to_c(16));
    let d = *read_image(&p.moving).unwrap().domain();
    let id = save(dir.path(), "id", Transform::identity(d));
    let out = dir.path().join("m");
    let o = run(&[
        "metrics",
        "--moving",
        s(&p.moving),
        "--fixed",
        s(&p.moving),
        "--phi",
        s(&id),
        "--phi-inv",
        s(&id),
        "--labels-moving",
        s(&p.labels_moving),
        "--labels-fixed",
        s(&p.labels_moving),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec = read_record_json(&out.join("metrics.json")).unwrap();
    assert!(!rec.dice.is_empty());
    assert!(rec.dice.values().all(|&v| v == 1.0));
}

#[test]
fn metrics_without_inverse_leaves_empty_cells() {
    let dir = tempdir().unwrap();
    let (m, f) = shifted_blob(16, 1.0);
    let mp = save(dir.path(), "m", m.clone());
    let fp = save(dir.path(), "f", f);
    let id = save(dir.path(), "id", Transform::identity(*m.domain()));
    let out = dir.path().join("m");
    let o = run(&["metrics", "--moving", s(&mp), "--fixed", s(&fp), "--phi", s(&id), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("inverse"), "warning expected: {}", stderr(&o));
    let (header, rows) = csv_rows(&out.join("metrics.csv"));
    for (h, v) in header.iter().zip(&rows[0]) {
        if h.starts_with("inv_") || h.starts_with("rinv_") {
            assert!(v.is_empty(), "{h} = {v:?}");
        }
    }
    let (_, rows) = csv_rows(&out.join("table_inverse.csv"));
    assert!(rows.iter().all(|r| r[2].is_empty() && r[3].is_empty() && r[4].is_empty()));
    assert!(!out.join("metrics_inverse.csv").exists());
}

#[test]
fn metrics_domain_mismatch_exits_2() {
    let dir = tempdir().unwrap();
    let (m, _) = shifted_blob(16, 0.0);
    let mp = save(dir.path(), "m", m);
    let id = save(dir.path(), "id", Transform::identity(Domain::new(&[12, 12]).unwrap()));
    let o = run(&["metrics", "--moving", s(&mp), "--fixed", s(&mp), "--phi", s(&id), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn metrics_record_matches_library() {
    let dir = tempdir().unwrap();
    let ph = disk_to_c(64);
    let p = save_phantom(dir.path(), &ph);
    let run_dir = dir.path().join("reg");
    let o = run(&[
        "register",
        "--moving",
        s(&p.moving),
        "--fixed",
        s(&p.fixed),
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("m");
    let phi_path = run_dir.join("phi.vpv.json");
    let inv_path = run_dir.join("phi_inv.vpv.json");
    let o = run(&[
        "metrics",
        "--moving",
        s(&p.moving),
        "--fixed",
        s(&p.fixed),
        "--phi",
        s(&phi_path),
        "--phi-inv",
        s(&inv_path),
        "--labels-moving",
        s(&p.labels_moving),
        "--labels-fixed",
        s(&p.labels_fixed),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = read_record_json(&out.join("metrics.json")).unwrap();
    let phi = read_transform(&phi_path).unwrap();
    let inv = read_transform(&inv_path).unwrap();
    let lm = read_labels(&p.labels_moving).unwrap();
    let lf = read_labels(&p.labels_fixed).unwrap();
    let want = metric_record(
        &ph.moving,
        &ph.fixed,
        &phi,
        Some(&inv),
        Some(LabelPair { moving: &lm, fixed: &lf }),
    )
    .unwrap();
    assert_eq!(got, want);
}

fn write_manifest(dir: &std::path::Path, n: usize) -> std::path::PathBuf {
    let mut text = String::from("moving,fixed,labels_moving,labels_fixed\n");
    for i in 0..n {
        let sub = dir.join(format!("p{i}"));
        fs::create_dir_all(&sub).unwrap();
        let (m, f) = shifted_blob(16, 0.5 + 0.5 * i as f64);
        save(&sub, "m", m);
        save(&sub, "f", f);
        if i % 2 == 0 {
            let ph = disk_to_c(16);
            save(&sub, "lm", ph.moving_labels);
            save(&sub, "lf", ph.fixed_labels);
            text += &format!("p{i}/m.vpv.json,p{i}/f.vpv.json,p{i}/lm.vpv.json,p{i}/lf.vpv.json\n");
        } else {
            text += &format!("p{i}/m.vpv.json,p{i}/f.vpv.json,,\n");
        }
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn cohort_is_independent_of_thread_count() {
    let dir = tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 4);
    let a = dir.path().join("n2");
    let b = dir.path().join("n4");
    let o = run(&["--threads", "2", "cohort", "--manifest", s(&manifest), "--inverse-tol", "0.05", "--out", s(&a)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vpreg()
        .env("VPREG_THREADS", "4")
        .args(["cohort", "--manifest", s(&manifest), "--inverse-tol", "0.05", "--out", s(&b)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    for i in 0..4 {
        let p = format!("pair_{i:03}/metrics.csv");
        assert_eq!(fs::read(a.join(&p)).unwrap(), fs::read(b.join(&p)).unwrap());
    }
    let (header, rows) = csv_rows(&a.join("metrics.csv"));
    assert_eq!(&header[..3], ["pair", "moving", "fixed"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn cohort_summary_matches_oracle() {
    let dir = tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 3);
    let out = dir.path().join("c");
    let o = run(&["cohort", "--manifest", s(&manifest), "--inverse-tol", "0.05", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let records: Vec<_> = (0..3)
        .map(|i| read_record_json(&out.join(format!("pair_{i:03}/metrics.json"))).unwrap())
        .collect();
    let mut ratios: Vec<f64> = records.iter().map(|r| r.mse_ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let (header, rows) = csv_rows(&out.join("summary.csv"));
    assert_eq!(header, ["metric", "min", "q25", "median", "q75", "max", "mean", "std", "count"]);
    let row = rows.iter().find(|r| r[0] == "mse_ratio").expect("mse_ratio row");
    let num = |i: usize| row[i].parse::<f64>().unwrap();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    let mean = ratios.iter().sum::<f64>() / 3.0;
    assert!(close(num(1), ratios[0]));
    assert!(close(num(3), ratios[1]));
    assert!(close(num(5), ratios[2]));
    assert!(close(num(6), mean));
    assert!(close(num(2), 0.5 * (ratios[0] + ratios[1])));
    assert!(close(num(4), 0.5 * (ratios[1] + ratios[2])));
    let summary = cohort_summary(&records).unwrap();
    let lib: &SummaryStats = &summary.metrics.iter().find(|(n, _)| n == "mse_ratio").unwrap().1;
    assert!(close(lib.median, num(3)));
}

#[test]
fn cohort_empty_manifest_exits_2() {
    let dir = tempdir().unwrap();
    let manifest = dir.path().join("empty.csv");
    fs::write(&manifest, "moving,fixed\n").unwrap();
    let o = run(&["cohort", "--manifest", s(&manifest), "--out", s(&dir.path().join("c"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn cohort_pair_failure_is_nonzero_and_recorded() {
    let dir = tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 2);
    let mut text = fs::read_to_string(&manifest).unwrap();
    text += "missing/m.vpv.json,missing/f.vpv.json,,\n";
    fs::write(&manifest, text).unwrap();
    let out = dir.path().join("c");
    let o = run(&["cohort", "--manifest", s(&manifest), "--inverse-tol", "0.05", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let (_, rows) = csv_rows(&out.join("failures.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "2");
    let (_, rows) = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn unreachable_inverse_tolerance_exits_3() {
    let dir = tempdir().unwrap();
    let (m, f) = shifted_blob(16, 2.0);
    let mp = save(dir.path(), "m", m);
    let fp = save(dir.path(), "f", f);
    let out = dir.path().join("run");
    let o = run(&[
        "register", "--moving", s(&mp), "--fixed", s(&fp), "--inverse-tol", "1e-9", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("phi.vpv.json").is_file());
    assert!(out.join("metrics.csv").is_file());
    assert!(!out.join("phi_inv.vpv.json").exists());
}

#[test]
fn zero_threads_exits_2() {
    let dir = tempdir().unwrap();
    let manifest = write_manifest(dir.path(), 1);
    let o = run(&["--threads", "0", "cohort", "--manifest", s(&manifest), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn demo_is_deterministic() {
    let dir = tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["demo-consistency", "--out", s(&a), "--seed", "7", "--size", "32"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = vpreg()
        .env("VPREG_THREADS", "3")
        .args(["demo-consistency", "--out", s(&b), "--seed", "7", "--size", "32"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["consistency.json", "grids.svg", "ab_over_b.svg", "inverse_consistency.svg", "transitivity.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
