//! Command-line front end.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vpreg_core::diffops::{self, warp, BcMode};
use vpreg_core::metrics::{cohort_summary, inverse_consistency, metric_record, LabelPair, MetricRecord};
use vpreg_core::register::{register, zscore, ControlUpdate, Engine, RegOptions};
use vpreg_core::vpgrid::{
    self, radial_bump_targets, vp_generate, Deviation, GridGenOptions, GridTargets, Multipliers,
};
use vpreg_core::{Domain, Error, LabelVolume, ScalarField, Transform, VectorField};

use crate::demo::{self, DemoOptions};
use crate::io::{self, Dtype, Format, IoError, Report, Volume};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "vpreg", version, about = "Diffeomorphic registration and grid generation")]
pub struct Cli {
    /// More log output on standard error (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads for cohort runs (falls back to VPREG_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with option defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving image onto a fixed image.
    Register(RegisterArgs),
    /// Invert a transform.
    Invert(InvertArgs),
    /// Generate a grid with prescribed Jacobian determinant and curl.
    Gridgen(GridgenArgs),
    /// Evaluate given transforms.
    Metrics(MetricsArgs),
    /// Register every pair of a manifest and summarise.
    Cohort(CohortArgs),
    /// Inverse-consistency and transitivity demonstration.
    DemoConsistency(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Penalty,
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BcArg {
    Dirichlet,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UpdateArg {
    Reset,
    Accumulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MultipliersArg {
    Centered,
    Literal,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RegFlags {
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long, value_enum)]
    pub bc: Option<BcArg>,
    #[arg(long, value_enum)]
    pub control_update: Option<UpdateArg>,
    /// Iteration cap of the homotopy stage.
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    /// Iteration cap of the local stage.
    #[arg(long)]
    pub stage2_iters: Option<usize>,
    /// Accept folding trial maps.
    #[arg(long)]
    pub no_fold_guard: bool,
    /// Mean residual the inverse must reach.
    #[arg(long)]
    pub inverse_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridFlags {
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub reg_weight: Option<f64>,
    #[arg(long, value_enum)]
    pub multipliers: Option<MultipliersArg>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub labels_moving: Option<PathBuf>,
    #[arg(long)]
    pub labels_fixed: Option<PathBuf>,
    /// Sample type of written volumes.
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub reg: RegFlags,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Uniform,
    RadialBump,
}

#[derive(Debug, Args)]
pub struct GridgenArgs {
    #[arg(long, value_enum, conflicts_with = "f_target")]
    pub preset: Option<Preset>,
    /// Determinant target volume.
    #[arg(long)]
    pub f_target: Option<PathBuf>,
    /// Curl target volume (zero when omitted).
    #[arg(long, requires = "f_target")]
    pub g_target: Option<PathBuf>,
    /// Initial map the generated grid is composed with.
    #[arg(long)]
    pub phi_o: Option<PathBuf>,
    /// Rescale the determinant target to unit mean.
    #[arg(long)]
    pub renormalize: bool,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub ndim: usize,
    #[arg(long, default_value_t = 0.8)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 6.0)]
    pub width: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub grid: GridFlags,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub moving: PathBuf,
    #[arg(long)]
    pub fixed: PathBuf,
    #[arg(long)]
    pub phi: PathBuf,
    #[arg(long)]
    pub phi_inv: Option<PathBuf>,
    #[arg(long)]
    pub labels_moving: Option<PathBuf>,
    #[arg(long)]
    pub labels_fixed: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    /// CSV with columns moving,fixed[,labels_moving,labels_fixed].
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,
    #[command(flatten)]
    pub reg: RegFlags,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Grid line spacing of the drawings, in voxels.
    #[arg(long, default_value_t = 2)]
    pub every: usize,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub register: RegOptions,
    pub gridgen: GridGenOptions,
}

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Stalled { .. } | Error::FoldingDetected { .. } => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Core(c) => c.into(),
            other => Failure::input(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

pub fn load_config(path: Option<&Path>) -> std::result::Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let cfg: ConfigFile =
        toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    cfg.register.validate()?;
    cfg.gridgen.validate()?;
    Ok(cfg)
}

impl RegFlags {
    pub fn apply(&self, mut o: RegOptions) -> std::result::Result<RegOptions, Failure> {
        if let Some(e) = self.engine {
            o.engine = match e {
                EngineArg::Penalty => Engine::Penalty,
                EngineArg::Control => Engine::Control,
            };
        }
        if let Some(b) = self.bc {
            o.bc = match b {
                BcArg::Dirichlet => BcMode::DirichletZero,
                BcArg::Periodic => BcMode::Periodic,
            };
        }
        if let Some(u) = self.control_update {
            o.control_update = match u {
                UpdateArg::Reset => ControlUpdate::Reset,
                UpdateArg::Accumulate => ControlUpdate::Accumulate,
            };
        }
        if let Some(n) = self.stage1_iters {
            o.stage1.max_iters = n;
            o.control_stage1.max_iters = n;
        }
        if let Some(n) = self.stage2_iters {
            o.stage2.max_iters = n;
        }
        if self.no_fold_guard {
            o.fold_guard = false;
        }
        if let Some(t) = self.inverse_tol {
            o.inverse.residual_tol = t;
        }
        o.validate()?;
        Ok(o)
    }
}

impl GridFlags {
    pub fn apply(&self, mut o: GridGenOptions) -> std::result::Result<GridGenOptions, Failure> {
        if let Some(t) = self.residual_tol {
            o.residual_tol = t;
        }
        if let Some(w) = self.reg_weight {
            o.reg_weight = w;
        }
        if let Some(m) = self.multipliers {
            o.multipliers = match m {
                MultipliersArg::Centered => Multipliers::Centered,
                MultipliersArg::Literal => Multipliers::Literal,
            };
        }
        if let Some(n) = self.max_iters {
            o.schedule.max_iters = n;
        }
        o.validate()?;
        Ok(o)
    }
}

/// Thread count from the flag, then `VPREG_THREADS`, then one.
pub fn thread_count(flag: Option<usize>) -> std::result::Result<usize, Failure> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("VPREG_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::input(format!("VPREG_THREADS={v:?} is not a count")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(Failure::input("thread count must be at least 1"));
    }
    Ok(n)
}

pub fn run(cli: &Cli) -> CmdResult {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Register(a) => cmd_register(a, &cfg),
        Command::Invert(a) => cmd_invert(a, &cfg),
        Command::Gridgen(a) => cmd_gridgen(a, &cfg),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Cohort(a) => cmd_cohort(a, &cfg, thread_count(cli.threads)?),
        Command::DemoConsistency(a) => cmd_demo_consistency(a),
    }
}

fn write_vol(value: impl Into<Volume>, dir: &Path, name: &str, dtype: Dtype) -> CmdResult {
    io::write_volume_as(&value.into(), &dir.join(name), dtype)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))
}

fn read_label_pair(
    moving: Option<&Path>,
    fixed: Option<&Path>,
) -> std::result::Result<Option<(LabelVolume, LabelVolume)>, Failure> {
    match (moving, fixed) {
        (Some(m), Some(f)) => Ok(Some((io::read_labels(m)?, io::read_labels(f)?))),
        (None, None) => Ok(None),
        _ => Err(Failure::input("labels need both --labels-moving and --labels-fixed")),
    }
}

/// Forward record of `(m, f, phi)` and, with an inverse, the record of the
/// reverse direction `(f, m, phi_inv)`.
pub fn evaluate(
    m: &ScalarField,
    f: &ScalarField,
    phi: &Transform,
    phi_inv: Option<&Transform>,
    labels: Option<&(LabelVolume, LabelVolume)>,
) -> std::result::Result<(MetricRecord, Option<MetricRecord>), Error> {
    let fwd_labels = labels.map(|(lm, lf)| LabelPair { moving: lm, fixed: lf });
    let forward = metric_record(m, f, phi, phi_inv, fwd_labels)?;
    let inverse = match phi_inv {
        Some(inv) => {
            let inv_labels = labels.map(|(lm, lf)| LabelPair { moving: lf, fixed: lm });
            Some(metric_record(f, m, inv, Some(phi), inv_labels)?)
        }
        None => None,
    };
    Ok((forward, inverse))
}

/// `metrics.{csv,json}`, `metrics_inverse.{csv,json}` and the three tables.
pub fn write_metric_reports(dir: &Path, forward: &MetricRecord, inverse: Option<&MetricRecord>) -> CmdResult {
    io::write_report(Report::Record(forward), &dir.join("metrics.csv"), Format::Csv)?;
    io::write_report(Report::Record(forward), &dir.join("metrics.json"), Format::Json)?;
    let mut rows = vec![("forward", forward)];
    if let Some(inv) = inverse {
        io::write_report(Report::Record(inv), &dir.join("metrics_inverse.csv"), Format::Csv)?;
        io::write_report(Report::Record(inv), &dir.join("metrics_inverse.json"), Format::Json)?;
        rows.push(("inverse", inv));
    }
    io::write_dice_table(&dir.join("table_dice.csv"), &rows)?;
    io::write_quality_table(&dir.join("table_quality.csv"), &rows)?;
    io::write_inverse_table(&dir.join("table_inverse.csv"), forward.inverse.as_ref())?;
    Ok(())
}

/// Registration of one pair into `out`; returns the forward record.
pub fn register_pair(
    moving: &Path,
    fixed: &Path,
    labels: (Option<&Path>, Option<&Path>),
    out: &Path,
    opts: &RegOptions,
    dtype: Dtype,
) -> std::result::Result<MetricRecord, Failure> {
    let m = io::read_image(moving)?;
    let f = io::read_image(fixed)?;
    m.domain().check_same(f.domain())?;
    let labels = read_label_pair(labels.0, labels.1)?;
    if let Some((lm, lf)) = &labels {
        m.domain().check_same(lm.domain())?;
        m.domain().check_same(lf.domain())?;
    }
    create_dir(out)?;
    let reg = register(&zscore(&m), &zscore(&f), opts)?;
    log::info!(
        "registered {} -> {}: {} accepted iterates, final mse {:?}",
        moving.display(),
        fixed.display(),
        reg.trace.points.len(),
        reg.trace.final_mse()
    );
    io::write_trace(&out.join("trace.csv"), &reg.trace)?;
    write_vol(reg.phi.clone(), out, "phi", dtype)?;
    write_vol(warp(&m, &reg.phi), out, "warped_moving", dtype)?;
    let config = ConfigFile {
        register: *opts,
        gridgen: GridGenOptions::default(),
    };
    let toml = toml::to_string(&config).map_err(|e| Failure::input(e.to_string()))?;
    write_text(&out.join("options.toml"), &toml)?;
    let phi_inv = match vpgrid::invert(&reg.phi, &opts.inverse) {
        Ok(inv) => inv,
        Err(e) => {
            let (fwd, _) = evaluate(&m, &f, &reg.phi, None, labels.as_ref())?;
            write_metric_reports(out, &fwd, None)?;
            return Err(e.into());
        }
    };
    write_vol(phi_inv.clone(), out, "phi_inv", dtype)?;
    write_vol(warp(&f, &phi_inv), out, "warped_fixed", dtype)?;
    let (fwd, inv) = evaluate(&m, &f, &reg.phi, Some(&phi_inv), labels.as_ref())?;
    write_metric_reports(out, &fwd, inv.as_ref())?;
    Ok(fwd)
}

pub fn cmd_register(a: &RegisterArgs, cfg: &ConfigFile) -> CmdResult {
    let opts = a.reg.apply(cfg.register)?;
    register_pair(
        &a.moving,
        &a.fixed,
        (a.labels_moving.as_deref(), a.labels_fixed.as_deref()),
        &a.out,
        &opts,
        a.dtype.into(),
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct InvertReport {
    residual_tol: f64,
    min_jd_input: f64,
    min_jd_inverse: f64,
    inv_after_fwd: Deviation,
    fwd_after_inv: Deviation,
    consistency: vpreg_core::metrics::InverseConsistency,
}

pub fn cmd_invert(a: &InvertArgs, cfg: &ConfigFile) -> CmdResult {
    let opts = a.grid.apply(cfg.gridgen)?;
    let phi = io::read_transform(&a.map)?;
    let min_jd = phi.min_interior_jd();
    if !(min_jd > 0.0) {
        return Err(Failure::input(format!(
            "input map is not diffeomorphic: min JD {min_jd}"
        )));
    }
    let inv = vpgrid::invert(&phi, &opts)?;
    create_dir(&a.out)?;
    write_vol(inv.clone(), &a.out, "phi_inv", a.dtype.into())?;
    let id = Transform::identity(*phi.domain());
    let consistency = inverse_consistency(&phi, &inv)?;
    let report = InvertReport {
        residual_tol: opts.residual_tol,
        min_jd_input: min_jd,
        min_jd_inverse: inv.min_interior_jd(),
        inv_after_fwd: Deviation::between(&diffops::compose(&inv, &phi)?, &id),
        fwd_after_inv: Deviation::between(&diffops::compose(&phi, &inv)?, &id),
        consistency,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::input(e.to_string()))?;
    write_text(&a.out.join("consistency.json"), &(json + "\n"))?;
    io::write_inverse_table(&a.out.join("table_inverse.csv"), Some(&consistency))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GridReport {
    iterations: usize,
    accepted: usize,
    objective: f64,
    jd_residual_l2: f64,
    jd_residual_rel: f64,
    curl_residual_l2: f64,
    curl_residual_rel: Option<f64>,
    min_jd: f64,
    diffeomorphic: bool,
}

fn grid_targets(a: &GridgenArgs) -> std::result::Result<GridTargets, Failure> {
    if let Some(fp) = &a.f_target {
        let f_t = io::read_image(fp)?;
        let d = *f_t.domain();
        let g_t = match &a.g_target {
            Some(gp) => match io::read_volume(gp)? {
                Volume::Vector(v) => v,
                Volume::Scalar(s) => VectorField::from_components(vec![s])?,
                other => return Err(Failure::input(format!("curl target is a {} volume", other.kind()))),
            },
            None => VectorField::zeros(d, d.curl_components()),
        };
        let mut t = GridTargets::new(f_t, g_t)?;
        if a.renormalize {
            t.renormalize();
        }
        return Ok(t);
    }
    let dims = vec![a.size; a.ndim];
    let d = Domain::new(&dims)?;
    Ok(match a.preset.unwrap_or(Preset::Uniform) {
        Preset::Uniform => GridTargets::identity(d),
        Preset::RadialBump => radial_bump_targets(d, a.amplitude, a.width),
    })
}

pub fn cmd_gridgen(a: &GridgenArgs, cfg: &ConfigFile) -> CmdResult {
    let mut opts = a.grid.apply(cfg.gridgen)?;
    if a.grid.residual_tol.is_none() {
        opts.residual_tol = cfg.gridgen.residual_tol;
    }
    let t = grid_targets(a)?;
    let phi_o = match &a.phi_o {
        Some(p) => io::read_transform(p)?,
        None => Transform::identity(*t.domain()),
    };
    let run = vp_generate(&phi_o, &t, &opts)?;
    let jd = diffops::jacobian_determinant(&run.phi);
    let curl = diffops::curl(run.phi.coords());
    let jd_l2 = jd.zip_map(&t.f_t, |a, b| a - b).norm();
    let curl_l2 = curl.zip_map(&t.g_t, |a, b| a - b).norm();
    let g_norm = t.g_t.norm();
    let report = GridReport {
        iterations: run.iterations,
        accepted: run.trace.len().saturating_sub(1),
        objective: run.trace.last().copied().unwrap_or(0.0),
        jd_residual_l2: jd_l2,
        jd_residual_rel: jd_l2 / t.f_t.norm(),
        curl_residual_l2: curl_l2,
        curl_residual_rel: (g_norm > 0.0).then(|| curl_l2 / g_norm),
        min_jd: run.phi.min_interior_jd(),
        diffeomorphic: run.phi.is_diffeomorphic(),
    };
    create_dir(&a.out)?;
    write_vol(run.phi, &a.out, "phi", a.dtype.into())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::input(e.to_string()))?;
    write_text(&a.out.join("report.json"), &(json + "\n"))?;
    println!("jd_residual_rel {}", report.jd_residual_rel);
    Ok(())
}

pub fn cmd_metrics(a: &MetricsArgs) -> CmdResult {
    let m = io::read_image(&a.moving)?;
    let f = io::read_image(&a.fixed)?;
    let phi = io::read_transform(&a.phi)?;
    let phi_inv = a.phi_inv.as_deref().map(io::read_transform).transpose()?;
    if phi_inv.is_none() {
        log::warn!("no inverse map given; inverse-consistency columns are left empty");
    }
    let labels = read_label_pair(a.labels_moving.as_deref(), a.labels_fixed.as_deref())?;
    let (fwd, inv) = evaluate(&m, &f, &phi, phi_inv.as_ref(), labels.as_ref())?;
    create_dir(&a.out)?;
    write_metric_reports(&a.out, &fwd, inv.as_ref())
}

#[derive(Debug, Clone, Deserialize)]
struct ManifestRow {
    moving: PathBuf,
    fixed: PathBuf,
    #[serde(default)]
    labels_moving: Option<PathBuf>,
    #[serde(default)]
    labels_fixed: Option<PathBuf>,
}

fn read_manifest(path: &Path) -> std::result::Result<Vec<ManifestRow>, Failure> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        let r: ManifestRow = r.map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let fix = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let blank = |p: Option<PathBuf>| p.filter(|p| !p.as_os_str().is_empty()).map(fix);
        rows.push(ManifestRow {
            moving: fix(r.moving),
            fixed: fix(r.fixed),
            labels_moving: blank(r.labels_moving),
            labels_fixed: blank(r.labels_fixed),
        });
    }
    Ok(rows)
}

pub fn cmd_cohort(a: &CohortArgs, cfg: &ConfigFile, threads: usize) -> CmdResult {
    let opts = a.reg.apply(cfg.register)?;
    let rows = read_manifest(&a.manifest)?;
    if rows.is_empty() {
        return Err(Failure::input(Error::EmptyCohort.to_string()));
    }
    create_dir(&a.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::input(e.to_string()))?;
    let dtype: Dtype = a.dtype.into();
    let results: Vec<_> = pool.install(|| {
        rows.par_iter()
            .enumerate()
            .map(|(i, r)| {
                let dir = a.out.join(format!("pair_{i:03}"));
                register_pair(
                    &r.moving,
                    &r.fixed,
                    (r.labels_moving.as_deref(), r.labels_fixed.as_deref()),
                    &dir,
                    &opts,
                    dtype,
                )
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (i, (row, res)) in rows.iter().zip(results).enumerate() {
        match res {
            Ok(rec) => ok.push((i, row, rec)),
            Err(f) => {
                log::error!("pair {i}: {}", f.message);
                failures.push((i, row, f));
            }
        }
    }
    let keyed: Vec<(Vec<String>, &MetricRecord)> = ok
        .iter()
        .map(|(i, row, rec)| {
            (
                vec![
                    i.to_string(),
                    row.moving.display().to_string(),
                    row.fixed.display().to_string(),
                ],
                rec,
            )
        })
        .collect();
    io::write_record_rows(&a.out.join("metrics.csv"), &["pair", "moving", "fixed"], &keyed)?;
    let mut w = csv::Writer::from_path(a.out.join("failures.csv"))
        .map_err(|e| Failure::input(e.to_string()))?;
    let io_err = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(["pair", "moving", "fixed", "exit_code", "message"]).map_err(io_err)?;
    for (i, row, f) in &failures {
        w.write_record([
            i.to_string(),
            row.moving.display().to_string(),
            row.fixed.display().to_string(),
            f.code.to_string(),
            f.message.clone(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Failure::input(e.to_string()))?;
    let records: Vec<MetricRecord> = ok.into_iter().map(|(_, _, r)| r).collect();
    if !records.is_empty() {
        let summary = cohort_summary(&records)?;
        io::write_report(Report::Summary(&summary), &a.out.join("summary.csv"), Format::Csv)?;
        io::write_report(Report::Summary(&summary), &a.out.join("summary.json"), Format::Json)?;
    }
    match failures.iter().map(|(_, _, f)| f.code).max() {
        None => Ok(()),
        Some(code) => Err(Failure {
            code,
            message: format!("{} of {} pairs failed", failures.len(), rows.len()),
        }),
    }
}

pub fn cmd_demo_consistency(a: &DemoArgs) -> CmdResult {
    let opts = DemoOptions {
        size: a.size,
        seed: a.seed,
        ..DemoOptions::default()
    };
    let r = demo::run(&opts)?;
    create_dir(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        options: &'a DemoOptions,
        report: &'a vpgrid::ConsistencyReport,
    }
    let json = serde_json::to_string_pretty(&Out {
        options: &opts,
        report: &r.report,
    })
    .map_err(|e| Failure::input(e.to_string()))?;
    write_text(&a.out.join("consistency.json"), &(json + "\n"))?;
    for (name, svg) in demo::panels(&r, a.every)? {
        write_text(&a.out.join(name), &svg)?;
    }
    println!(
        "inverse consistency mean {} voxel, transitivity mean {} voxel",
        r.report.ba_after_ab.mean, r.report.transitivity.mean
    );
    Ok(())
}
