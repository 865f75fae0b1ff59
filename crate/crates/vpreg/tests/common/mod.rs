#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vpreg::io::{write_volume, Volume};
use vpreg_core::phantom::Phantom;

pub fn vpreg() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vpreg"));
    c.env_remove("VPREG_THREADS").env_remove("RUST_LOG");
    c
}

pub fn run(args: &[&str]) -> Output {
    vpreg().args(args).output().expect("spawn vpreg")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn save(dir: &Path, name: &str, v: impl Into<Volume>) -> PathBuf {
    let p = dir.join(format!("{name}.vpv.json"));
    write_volume(&v.into(), &p).expect("write volume");
    p
}

/// Moving, fixed and label volumes of a phantom, written as vpv files.
pub struct PhantomFiles {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    pub labels_moving: PathBuf,
    pub labels_fixed: PathBuf,
}

pub fn save_phantom(dir: &Path, p: &Phantom) -> PhantomFiles {
    PhantomFiles {
        moving: save(dir, "moving", p.moving.clone()),
        fixed: save(dir, "fixed", p.fixed.clone()),
        labels_moving: save(dir, "labels_moving", p.moving_labels.clone()),
        labels_fixed: save(dir, "labels_fixed", p.fixed_labels.clone()),
    }
}

pub fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).expect("open csv");
    let header = r.headers().expect("header").iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.expect("row").iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}
