//! CSV and JSON reports.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Serialize;
use vpreg_core::metrics::{CohortSummary, IcStats, InverseConsistency, MetricRecord};
use vpreg_core::register::{Stage, Trace};

use super::{fs_err, IoResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy)]
pub enum Report<'a> {
    Record(&'a MetricRecord),
    Summary(&'a CohortSummary),
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "metric", "min", "q25", "median", "q75", "max", "mean", "std", "count",
];

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn ensure_parent(path: &Path) -> IoResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> IoResult<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(fs_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> IoResult<()> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(fs_err(path))
}

pub fn write_report(report: Report<'_>, path: &Path, format: Format) -> IoResult<()> {
    match (report, format) {
        (Report::Record(r), Format::Json) => write_json(r, path),
        (Report::Summary(s), Format::Json) => write_json(s, path),
        (Report::Record(r), Format::Csv) => write_record_rows(path, &[], &[(Vec::new(), r)]),
        (Report::Summary(s), Format::Csv) => {
            let mut w = csv_writer(path)?;
            w.write_record(SUMMARY_COLUMNS)?;
            for (name, st) in &s.metrics {
                let mut row = vec![name.clone()];
                row.extend(
                    [st.min, st.q25, st.median, st.q75, st.max, st.mean, st.std]
                        .iter()
                        .map(|v| v.to_string()),
                );
                row.push(st.count.to_string());
                w.write_record(&row)?;
            }
            w.flush().map_err(fs_err(path))
        }
    }
}

pub fn read_record_json(path: &Path) -> IoResult<MetricRecord> {
    Ok(serde_json::from_slice(&fs::read(path).map_err(fs_err(path))?)?)
}

/// Records as CSV rows, each prefixed by its key cells. The dice columns are
/// the union of all labels; missing entries are empty cells.
pub fn write_record_rows(
    path: &Path,
    key_names: &[&str],
    rows: &[(Vec<String>, &MetricRecord)],
) -> IoResult<()> {
    let labels: BTreeSet<u32> = rows.iter().flat_map(|(_, r)| r.dice.keys().copied()).collect();
    let mut header: Vec<String> = key_names.iter().map(|s| s.to_string()).collect();
    header.extend(MetricRecord::fixed_columns());
    header.extend(labels.iter().map(|l| format!("dice_{l}")));
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for (keys, r) in rows {
        let cols = r.columns();
        let mut row = keys.clone();
        row.extend(cols.iter().take(MetricRecord::fixed_columns().len()).map(|(_, v)| cell(*v)));
        row.extend(labels.iter().map(|l| cell(r.dice.get(l).copied())));
        w.write_record(&row)?;
    }
    w.flush().map_err(fs_err(path))
}

/// DICE per label, one row per map direction.
pub fn write_dice_table(path: &Path, rows: &[(&str, &MetricRecord)]) -> IoResult<()> {
    let labels: BTreeSet<u32> = rows.iter().flat_map(|(_, r)| r.dice.keys().copied()).collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["map".to_string()];
    header.extend(labels.iter().map(|l| format!("dice_{l}")));
    header.push("dice_mean".into());
    w.write_record(&header)?;
    for (name, r) in rows {
        let mut row = vec![name.to_string()];
        row.extend(labels.iter().map(|l| cell(r.dice.get(l).copied())));
        row.push(cell(r.dice_mean()));
        w.write_record(&row)?;
    }
    w.flush().map_err(fs_err(path))
}

pub const QUALITY_COLUMNS: [&str; 6] = ["map", "mse_ratio", "mi_incr_pct", "jd_min", "jd_max", "jd_neg_pct"];

pub fn quality_table(rows: &[(&str, &MetricRecord)]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|(name, r)| {
            vec![
                name.to_string(),
                r.mse_ratio.to_string(),
                cell(r.mi_incr_pct),
                r.jd_min.to_string(),
                r.jd_max.to_string(),
                (100.0 * r.jd_neg_fraction).to_string(),
            ]
        })
        .collect()
}

/// Registration quality (MSE ratio, MI increase, Jacobian statistics), one
/// row per map direction.
pub fn write_quality_table(path: &Path, rows: &[(&str, &MetricRecord)]) -> IoResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(QUALITY_COLUMNS)?;
    for row in quality_table(rows) {
        w.write_record(&row)?;
    }
    w.flush().map_err(fs_err(path))
}

pub const INVERSE_COLUMNS: [&str; 5] = ["composition", "measure", "max", "sum", "sum_per_voxel"];

/// Rows of the inverse-error table; empty cells when no inverse is known.
pub fn inverse_table(ic: Option<&InverseConsistency>) -> Vec<Vec<String>> {
    let parts = [
        ("inv_after_fwd", ic.map(|i| i.inv_after_fwd)),
        ("fwd_after_inv", ic.map(|i| i.fwd_after_inv)),
    ];
    let mut rows = Vec::new();
    for (name, s) in parts {
        let s: Option<IcStats> = s;
        rows.push(vec![
            name.to_string(),
            "det".into(),
            cell(s.map(|s| s.max_det)),
            cell(s.map(|s| s.sum_det)),
            cell(s.map(|s| s.sum_det_per_voxel)),
        ]);
        rows.push(vec![
            name.to_string(),
            "norm".into(),
            cell(s.map(|s| s.max_norm)),
            cell(s.map(|s| s.sum_norm)),
            cell(s.map(|s| s.sum_norm_per_voxel)),
        ]);
    }
    rows
}

/// Deviation of the map composed with its inverse from the identity.
pub fn write_inverse_table(path: &Path, ic: Option<&InverseConsistency>) -> IoResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(INVERSE_COLUMNS)?;
    for row in inverse_table(ic) {
        w.write_record(&row)?;
    }
    w.flush().map_err(fs_err(path))
}

pub fn write_trace(path: &Path, trace: &Trace) -> IoResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["stage", "iteration", "mse", "solves", "min_jd", "step"])?;
    for p in &trace.points {
        let stage = match p.stage {
            Stage::Stage1 => "1",
            Stage::Stage2 => "2",
        };
        w.write_record([
            stage.to_string(),
            p.iteration.to_string(),
            p.mse.to_string(),
            p.solves.to_string(),
            p.min_jd.to_string(),
            p.step.to_string(),
        ])?;
    }
    w.flush().map_err(fs_err(path))
}
