//! Registration and transformation quality measures.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diffops::{compose, jacobian_determinant, warp};
use crate::error::{Error, Result};
use crate::field::{LabelVolume, ScalarField, Transform};
use crate::register::mse;

/// Default histogram resolution of [`mutual_information`].
pub const MI_BINS: usize = 64;

/// Overlap `2 |A_l & B_l| / (|A_l| + |B_l|)`; 1 when both sets are empty.
pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u32) -> Result<f64> {
    a.domain().check_same(b.domain())?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// DICE for every foreground label present in either volume.
pub fn dice_all(a: &LabelVolume, b: &LabelVolume) -> Result<BTreeMap<u32, f64>> {
    let labels: BTreeSet<u32> = a.foreground_labels().union(&b.foreground_labels()).copied().collect();
    labels.into_iter().map(|l| Ok((l, dice(a, b, l)?))).collect()
}

/// Nearest-neighbour resampling `L(phi(x))`, clamped to the domain.
pub fn warp_labels(l: &LabelVolume, phi: &Transform) -> LabelVolume {
    let dom = *l.domain();
    let shape = dom.shape();
    let labels = (0..dom.len())
        .map(|idx| {
            let p = phi.at(idx);
            let mut q = [0usize; 3];
            for a in 0..dom.ndim() {
                q[a] = p[a].round().clamp(0.0, (shape[a] - 1) as f64) as usize;
            }
            l.labels()[dom.index(q[0], q[1], q[2])]
        })
        .collect();
    LabelVolume::from_vec(dom, labels).expect("same domain")
}

/// `mse(M, F, phi) / mse(M, F, id)`; 1 when the denominator is zero.
pub fn mse_ratio(m: &ScalarField, f: &ScalarField, phi: &Transform) -> Result<f64> {
    let base = mse(m, f, &Transform::identity(*m.domain()))?;
    if base == 0.0 {
        return Ok(1.0);
    }
    Ok(mse(m, f, phi)? / base)
}

fn bin_indices(s: &ScalarField, bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = (s.min(), s.max());
    if !(hi > lo) {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    Some(
        s.values()
            .iter()
            .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
            .collect(),
    )
}

/// Histogram mutual information (natural log), `bins` equal-width bins over
/// each image's own range. Zero when either image is constant.
pub fn mutual_information(m: &ScalarField, f: &ScalarField, bins: usize) -> Result<f64> {
    m.domain().check_same(f.domain())?;
    if bins < 2 {
        return Err(Error::InvalidOptions("mutual information needs at least 2 bins".into()));
    }
    let (Some(bm), Some(bf)) = (bin_indices(m, bins), bin_indices(f, bins)) else {
        return Ok(0.0);
    };
    let n = bm.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut pm = vec![0usize; bins];
    let mut pf = vec![0usize; bins];
    for (&i, &j) in bm.iter().zip(&bf) {
        joint[i * bins + j] += 1;
        pm[i] += 1;
        pf[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (pm[i] as f64 * pf[j] as f64)).ln();
            }
        }
    }
    Ok(mi)
}

/// Relative gain `(MI(M(phi), F) - MI(M, F)) / MI(M, F)`.
pub fn mi_increment(m: &ScalarField, f: &ScalarField, phi: &Transform, bins: usize) -> Result<f64> {
    let base = mutual_information(m, f, bins)?;
    if base == 0.0 {
        return Err(Error::ZeroBaselineMi);
    }
    let after = mutual_information(&warp(m, phi), f, bins)?;
    Ok((after - base) / base)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JdStats {
    pub min: f64,
    pub max: f64,
    /// Fraction of interior voxels with a non-positive determinant.
    pub neg_fraction: f64,
}

/// Jacobian determinant statistics over the interior voxels.
pub fn jd_stats(phi: &Transform) -> JdStats {
    let jd = jacobian_determinant(phi);
    let dom = *phi.domain();
    let (mut min, mut max, mut neg, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0usize, 0usize);
    for idx in dom.interior() {
        let v = jd.values()[idx];
        min = min.min(v);
        max = max.max(v);
        neg += (v <= 0.0) as usize;
        n += 1;
    }
    JdStats {
        min,
        max,
        neg_fraction: neg as f64 / n as f64,
    }
}

/// Deviation of a composed map `psi` from the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcStats {
    /// `max |det grad(psi) - 1|`.
    pub max_det: f64,
    /// `sum |det grad(psi) - 1|`.
    pub sum_det: f64,
    pub sum_det_per_voxel: f64,
    /// `max |psi - id|`, Euclidean, voxels.
    pub max_norm: f64,
    pub sum_norm: f64,
    pub sum_norm_per_voxel: f64,
}

impl IcStats {
    pub fn of(psi: &Transform) -> Self {
        let dom = *psi.domain();
        let n = dom.len() as f64;
        let det = jacobian_determinant(psi).map(|v| (v - 1.0).abs());
        let norm = psi.displacement().magnitude();
        Self {
            max_det: det.max(),
            sum_det: det.sum(),
            sum_det_per_voxel: det.sum() / n,
            max_norm: norm.max(),
            sum_norm: norm.sum(),
            sum_norm_per_voxel: norm.sum() / n,
        }
    }
}

/// Both compositions of a map with its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseConsistency {
    /// `phi_inv(phi)`.
    pub inv_after_fwd: IcStats,
    /// `phi(phi_inv)`.
    pub fwd_after_inv: IcStats,
}

pub fn inverse_consistency(phi: &Transform, phi_inv: &Transform) -> Result<InverseConsistency> {
    Ok(InverseConsistency {
        inv_after_fwd: IcStats::of(&compose(phi_inv, phi)?),
        fwd_after_inv: IcStats::of(&compose(phi, phi_inv)?),
    })
}

/// Everything reported for one registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// DICE per foreground label after warping the moving labels.
    pub dice: BTreeMap<u32, f64>,
    pub mse_ratio: f64,
    /// Relative MI increment in percent; absent when the baseline MI is zero.
    pub mi_incr_pct: Option<f64>,
    pub jd_min: f64,
    pub jd_max: f64,
    pub jd_neg_fraction: f64,
    /// Absent when no inverse is available.
    pub inverse: Option<InverseConsistency>,
}

/// Labels of a moving/fixed pair, for DICE.
#[derive(Debug, Clone, Copy)]
pub struct LabelPair<'a> {
    pub moving: &'a LabelVolume,
    pub fixed: &'a LabelVolume,
}

/// Computes the full record for `(M, F, phi)`.
pub fn metric_record(
    m: &ScalarField,
    f: &ScalarField,
    phi: &Transform,
    phi_inv: Option<&Transform>,
    labels: Option<LabelPair<'_>>,
) -> Result<MetricRecord> {
    m.domain().check_same(f.domain())?;
    m.domain().check_same(phi.domain())?;
    let dice = match labels {
        Some(lp) => {
            lp.moving.domain().check_same(m.domain())?;
            dice_all(&warp_labels(lp.moving, phi), lp.fixed)?
        }
        None => BTreeMap::new(),
    };
    let mi_incr_pct = match mi_increment(m, f, phi, MI_BINS) {
        Ok(v) => Some(100.0 * v),
        Err(Error::ZeroBaselineMi) => None,
        Err(e) => return Err(e),
    };
    let jd = jd_stats(phi);
    let inverse = phi_inv.map(|inv| inverse_consistency(phi, inv)).transpose()?;
    Ok(MetricRecord {
        dice,
        mse_ratio: mse_ratio(m, f, phi)?,
        mi_incr_pct,
        jd_min: jd.min,
        jd_max: jd.max,
        jd_neg_fraction: jd.neg_fraction,
        inverse,
    })
}

const IC_COLUMNS: [&str; 6] = [
    "maxdet",
    "sumdet",
    "sumdet_per_voxel",
    "maxnorm",
    "sumnorm",
    "sumnorm_per_voxel",
];

impl MetricRecord {
    /// Mean DICE over the reported labels.
    pub fn dice_mean(&self) -> Option<f64> {
        (!self.dice.is_empty()).then(|| self.dice.values().sum::<f64>() / self.dice.len() as f64)
    }

    /// Fixed column names, in report order. DICE columns follow them.
    pub fn fixed_columns() -> Vec<String> {
        let mut c: Vec<String> = ["mse_ratio", "mi_incr_pct", "jd_min", "jd_max", "jd_neg_fraction"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for prefix in ["inv", "rinv"] {
            c.extend(IC_COLUMNS.iter().map(|s| format!("{prefix}_{s}")));
        }
        c.push("dice_mean".into());
        c
    }

    /// Flattened `(column, value)` pairs: the fixed columns followed by
    /// `dice_<label>` in label order.
    pub fn columns(&self) -> Vec<(String, Option<f64>)> {
        let ic = |s: Option<IcStats>| -> [Option<f64>; 6] {
            match s {
                Some(s) => [
                    Some(s.max_det),
                    Some(s.sum_det),
                    Some(s.sum_det_per_voxel),
                    Some(s.max_norm),
                    Some(s.sum_norm),
                    Some(s.sum_norm_per_voxel),
                ],
                None => [None; 6],
            }
        };
        let mut values = vec![
            Some(self.mse_ratio),
            self.mi_incr_pct,
            Some(self.jd_min),
            Some(self.jd_max),
            Some(self.jd_neg_fraction),
        ];
        values.extend(ic(self.inverse.map(|i| i.inv_after_fwd)));
        values.extend(ic(self.inverse.map(|i| i.fwd_after_inv)));
        values.push(self.dice_mean());
        let mut out: Vec<(String, Option<f64>)> = Self::fixed_columns().into_iter().zip(values).collect();
        out.extend(self.dice.iter().map(|(l, d)| (format!("dice_{l}"), Some(*d))));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    /// Number of records that reported the metric.
    pub count: usize,
}

/// Percentile by linear interpolation between order statistics, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl SummaryStats {
    /// # Panics
    /// If `values` is empty.
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let mean = s.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            min: s[0],
            q25: percentile(&s, 0.25),
            median: percentile(&s, 0.5),
            q75: percentile(&s, 0.75),
            max: s[n - 1],
            mean,
            std,
            count: n,
        }
    }
}

/// Box-whisker statistics per metric column across a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    /// `(column, stats)` in column order; columns nobody reported are left out.
    pub metrics: Vec<(String, SummaryStats)>,
}

pub fn cohort_summary(records: &[MetricRecord]) -> Result<CohortSummary> {
    if records.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let mut order: Vec<String> = MetricRecord::fixed_columns();
    let labels: BTreeSet<u32> = records.iter().flat_map(|r| r.dice.keys().copied()).collect();
    order.extend(labels.iter().map(|l| format!("dice_{l}")));
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        for (name, v) in r.columns() {
            if let Some(v) = v {
                values.entry(name).or_default().push(v);
            }
        }
    }
    let metrics = order
        .into_iter()
        .filter_map(|name| {
            let v = values.get(&name)?;
            Some((name, SummaryStats::of(v)))
        })
        .collect();
    Ok(CohortSummary { metrics })
}
