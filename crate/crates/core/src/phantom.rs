//! Synthetic image pairs with known foreground labels.

use crate::field::{Domain, LabelVolume, ScalarField};

/// Smoothed indicator of `{d < 0}` for a signed distance `d`.
fn soft(d: f64, width: f64) -> f64 {
    1.0 / (1.0 + (d / width).exp())
}

/// Edge width of the phantoms, in voxels.
pub const EDGE: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct Phantom {
    pub moving: ScalarField,
    pub fixed: ScalarField,
    pub moving_labels: LabelVolume,
    pub fixed_labels: LabelVolume,
}

impl Phantom {
    fn from_images(moving: ScalarField, fixed: ScalarField) -> Self {
        Self {
            moving_labels: LabelVolume::threshold(&moving, 0.5),
            fixed_labels: LabelVolume::threshold(&fixed, 0.5),
            moving,
            fixed,
        }
    }
}

/// Disk (moving) and C-shape (fixed) on an `n x n` grid: a disk of radius
/// `0.28 n` with a bite of radius `0.125 n` centred on its right edge.
pub fn disk_to_c(n: usize) -> Phantom {
    let d = Domain::new(&[n, n]).expect("n >= 8");
    let c = (n as f64 - 1.0) / 2.0;
    let r = 0.28 * n as f64;
    let rb = 0.125 * n as f64;
    let disk = |p: [f64; 3]| soft(((p[0] - c).powi(2) + (p[1] - c).powi(2)).sqrt() - r, EDGE);
    let bite = |p: [f64; 3]| soft(((p[0] - c - r).powi(2) + (p[1] - c).powi(2)).sqrt() - rb, EDGE);
    let moving = ScalarField::from_fn(d, disk);
    let fixed = ScalarField::from_fn(d, |p| disk(p) * (1.0 - bite(p)));
    Phantom::from_images(moving, fixed)
}

/// Sphere (moving) of radius `n/4` and ellipsoid (fixed) with semi-axes
/// `(0.3 n, 0.22 n, 0.22 n)` on an `n^3` grid.
pub fn sphere_to_ellipsoid(n: usize) -> Phantom {
    let d = Domain::new(&[n, n, n]).expect("n >= 8");
    let c = (n as f64 - 1.0) / 2.0;
    let nf = n as f64;
    let r = 0.25 * nf;
    let axes = [0.3 * nf, 0.22 * nf, 0.22 * nf];
    let moving = ScalarField::from_fn(d, |p| {
        let q: f64 = (0..3).map(|a| (p[a] - c).powi(2)).sum();
        soft(q.sqrt() - r, EDGE)
    });
    let fixed = ScalarField::from_fn(d, |p| {
        let q: f64 = (0..3).map(|a| ((p[a] - c) / axes[a]).powi(2)).sum();
        // approximate signed distance: level-set value scaled by the mean axis
        soft((q.sqrt() - 1.0) * 0.25 * nf, EDGE)
    });
    Phantom::from_images(moving, fixed)
}

/// Gaussian blob shifted by `shift` voxels along x.
pub fn shifted_blob(n: usize, shift: f64) -> (ScalarField, ScalarField) {
    let d = Domain::new(&[n, n]).expect("n >= 8");
    let c = (n as f64 - 1.0) / 2.0;
    let s = n as f64 / 8.0;
    let blob = move |cx: f64| {
        ScalarField::from_fn(d, move |p| (-((p[0] - cx).powi(2) + (p[1] - c).powi(2)) / (2.0 * s * s)).exp())
    };
    (blob(c + shift), blob(c))
}
