use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Domain, ScalarField, VectorField};

/// Boundary treatment of the Poisson solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcMode {
    /// Complex exponential basis; the mean mode is projected out.
    Periodic,
    /// Sine basis on the interior; the solution is zero on the boundary.
    #[default]
    DirichletZero,
}

/// Pseudo-spectral inverse of the `(2d+1)`-point Laplacian.
///
/// The solver is immutable once built and can be shared between threads.
/// It counts every solve it performs (one per scalar component batch; a
/// vector-field solve counts once).
pub struct PoissonSolver {
    domain: Domain,
    bc: BcMode,
    /// Transform extents per axis (interior size for the sine basis).
    ext: [usize; 3],
    eig: [Vec<f64>; 3],
    fwd: [Option<Arc<dyn Fft<f64>>>; 3],
    inv: [Option<Arc<dyn Fft<f64>>>; 3],
    solves: AtomicUsize,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver")
            .field("domain", &self.domain)
            .field("bc", &self.bc)
            .field("solves", &self.solve_count())
            .finish()
    }
}

impl PoissonSolver {
    pub fn new(domain: Domain, bc: BcMode) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let shape = domain.shape();
        let mut ext = [1; 3];
        let mut eig: [Vec<f64>; 3] = Default::default();
        let mut fwd: [Option<Arc<dyn Fft<f64>>>; 3] = Default::default();
        let mut inv: [Option<Arc<dyn Fft<f64>>>; 3] = Default::default();
        for a in 0..domain.ndim() {
            let n = shape[a];
            match bc {
                BcMode::DirichletZero => {
                    ext[a] = n - 2;
                    let m = n - 1;
                    eig[a] = (1..m)
                        .map(|k| {
                            let s = (std::f64::consts::PI * k as f64 / (2 * m) as f64).sin();
                            -4.0 * s * s
                        })
                        .collect();
                    fwd[a] = Some(planner.plan_fft_forward(2 * m));
                }
                BcMode::Periodic => {
                    ext[a] = n;
                    eig[a] = (0..n)
                        .map(|k| {
                            let c = (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos();
                            -(2.0 - 2.0 * c)
                        })
                        .collect();
                    fwd[a] = Some(planner.plan_fft_forward(n));
                    inv[a] = Some(planner.plan_fft_inverse(n));
                }
            }
        }
        for e in eig.iter_mut().skip(domain.ndim()) {
            e.push(0.0);
        }
        Self {
            domain,
            bc,
            ext,
            eig,
            fwd,
            inv,
            solves: AtomicUsize::new(0),
        }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn bc(&self) -> BcMode {
        self.bc
    }

    /// Number of solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.solves.store(0, Ordering::Relaxed);
    }

    /// Solves `laplacian(v) = rhs` componentwise.
    pub fn solve(&self, rhs: &VectorField) -> Result<VectorField> {
        self.domain.check_same(rhs.domain())?;
        check_finite(rhs.components())?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let comps = rhs.components().iter().map(|c| self.apply(c, 0.0)).collect();
        Ok(VectorField::from_raw(self.domain, comps))
    }

    /// Solves `(laplacian - shift) v = rhs` componentwise, `shift >= 0`.
    pub fn solve_shifted(&self, rhs: &VectorField, shift: f64) -> Result<VectorField> {
        self.domain.check_same(rhs.domain())?;
        check_finite(rhs.components())?;
        if !(shift >= 0.0) {
            return Err(Error::InvalidOptions("shift must be non-negative".into()));
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        let comps = rhs.components().iter().map(|c| self.apply(c, shift)).collect();
        Ok(VectorField::from_raw(self.domain, comps))
    }

    /// Solves `laplacian(v) = rhs` for one scalar field.
    pub fn solve_scalar(&self, rhs: &ScalarField) -> Result<ScalarField> {
        self.domain.check_same(rhs.domain())?;
        check_finite(std::slice::from_ref(rhs))?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(self.apply(rhs, 0.0))
    }

    fn apply(&self, rhs: &ScalarField, shift: f64) -> ScalarField {
        match self.bc {
            BcMode::DirichletZero => self.apply_dirichlet(rhs, shift),
            BcMode::Periodic => self.apply_periodic(rhs, shift),
        }
    }

    fn apply_dirichlet(&self, rhs: &ScalarField, shift: f64) -> ScalarField {
        let dom = self.domain;
        let [ex, ey, ez] = self.ext;
        let off = if dom.ndim() == 3 { 1 } else { 0 };
        let mut buf = vec![0.0; ex * ey * ez];
        for k in 0..ez {
            for j in 0..ey {
                for i in 0..ex {
                    buf[i + ex * (j + ey * k)] = rhs.get(i + 1, j + 1, k + off);
                }
            }
        }
        for a in 0..dom.ndim() {
            self.dst_axis(&mut buf, a);
        }
        let mut scale = 1.0;
        for a in 0..dom.ndim() {
            scale *= 2.0 / (self.ext[a] + 1) as f64;
        }
        for k in 0..ez {
            for j in 0..ey {
                for i in 0..ex {
                    let lam = self.eig[0][i] + self.eig[1][j] + self.eig[2][k] - shift;
                    buf[i + ex * (j + ey * k)] *= scale / lam;
                }
            }
        }
        for a in 0..dom.ndim() {
            self.dst_axis(&mut buf, a);
        }
        let mut out = vec![0.0; dom.len()];
        for k in 0..ez {
            for j in 0..ey {
                for i in 0..ex {
                    out[dom.index(i + 1, j + 1, k + off)] = buf[i + ex * (j + ey * k)];
                }
            }
        }
        ScalarField::from_raw(dom, out)
    }

    /// Unnormalized DST-I along `axis` of the interior buffer, two real
    /// lines per complex FFT of length `2 (N + 1)`.
    fn dst_axis(&self, buf: &mut [f64], axis: usize) {
        let ext = self.ext;
        let n = ext[axis];
        let m = 2 * (n + 1);
        let fft = self.fwd[axis].as_ref().expect("planned axis");
        let stride = [1, ext[0], ext[0] * ext[1]][axis];
        let starts = line_starts(ext, axis);
        let mut z = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for pair in starts.chunks(2) {
            let a = pair[0];
            let b = pair.get(1).copied();
            z.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for j in 0..n {
                let xa = buf[a + j * stride];
                let xb = b.map_or(0.0, |b| buf[b + j * stride]);
                z[j + 1] = Complex64::new(xa, xb);
                z[m - 1 - j] = Complex64::new(-xa, -xb);
            }
            fft.process_with_scratch(&mut z, &mut scratch);
            for k in 0..n {
                let y = z[k + 1];
                buf[a + k * stride] = -0.5 * y.im;
                if let Some(b) = b {
                    buf[b + k * stride] = 0.5 * y.re;
                }
            }
        }
    }

    fn apply_periodic(&self, rhs: &ScalarField, shift: f64) -> ScalarField {
        let dom = self.domain;
        let ext = self.ext;
        let mut buf: Vec<Complex64> = rhs.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for a in 0..dom.ndim() {
            fft_axis(&mut buf, ext, a, self.fwd[a].as_ref().expect("planned axis"));
        }
        let norm = dom.len() as f64;
        for (idx, c) in buf.iter_mut().enumerate() {
            let p = dom.position(idx);
            let lam = self.eig[0][p[0]] + self.eig[1][p[1]] + self.eig[2][p[2]] - shift;
            *c = if lam == 0.0 { Complex64::new(0.0, 0.0) } else { *c / (lam * norm) };
        }
        for a in 0..dom.ndim() {
            fft_axis(&mut buf, ext, a, self.inv[a].as_ref().expect("planned axis"));
        }
        ScalarField::from_raw(dom, buf.into_iter().map(|c| c.re).collect())
    }
}

fn check_finite(comps: &[ScalarField]) -> Result<()> {
    for c in comps {
        if let Some(index) = c.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

fn line_starts(ext: [usize; 3], axis: usize) -> Vec<usize> {
    let idx = |i: usize, j: usize, k: usize| i + ext[0] * (j + ext[1] * k);
    let mut out = Vec::new();
    match axis {
        0 => (0..ext[2]).for_each(|k| (0..ext[1]).for_each(|j| out.push(idx(0, j, k)))),
        1 => (0..ext[2]).for_each(|k| (0..ext[0]).for_each(|i| out.push(idx(i, 0, k)))),
        _ => (0..ext[1]).for_each(|j| (0..ext[0]).for_each(|i| out.push(idx(i, j, 0)))),
    }
    out
}

pub(crate) fn fft_axis(buf: &mut [Complex64], ext: [usize; 3], axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let n = ext[axis];
    let stride = [1, ext[0], ext[0] * ext[1]][axis];
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for s in line_starts(ext, axis) {
        for j in 0..n {
            line[j] = buf[s + j * stride];
        }
        fft.process_with_scratch(&mut line, &mut scratch);
        for j in 0..n {
            buf[s + j * stride] = line[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffops::laplacian_scalar;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rhs_gives_zero() {
        for bc in [BcMode::DirichletZero, BcMode::Periodic] {
            let d = Domain::new(&[8, 10, 9]).unwrap();
            let s = PoissonSolver::new(d, bc);
            let v = s.solve(&VectorField::zeros(d, 3)).unwrap();
            assert_eq!(v.norm(), 0.0);
            assert_eq!(s.solve_count(), 1);
        }
    }

    #[test]
    fn dirichlet_is_right_inverse_of_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dims in [vec![9usize, 12], vec![8, 11, 10], vec![13, 8]] {
            let d = Domain::new(&dims).unwrap();
            let rhs = ScalarField::from_fn(d, |_| rng.gen_range(-1.0..1.0));
            let s = PoissonSolver::new(d, BcMode::DirichletZero);
            let v = s.solve_scalar(&rhs).unwrap();
            for idx in 0..d.len() {
                if d.is_boundary(idx) {
                    assert_eq!(v.values()[idx], 0.0);
                }
            }
            let back = laplacian_scalar(&v, BcMode::DirichletZero);
            for idx in d.interior() {
                assert!((back.values()[idx] - rhs.values()[idx]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn periodic_is_right_inverse_on_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Domain::new(&[8, 12, 10]).unwrap();
        let mut rhs = ScalarField::from_fn(d, |_| rng.gen_range(-1.0..1.0));
        let mean = rhs.sum() / d.len() as f64;
        rhs.values_mut().iter_mut().for_each(|v| *v -= mean);
        let s = PoissonSolver::new(d, BcMode::Periodic);
        let v = s.solve_scalar(&rhs).unwrap();
        assert!(v.sum().abs() < 1e-10);
        let back = laplacian_scalar(&v, BcMode::Periodic);
        let err = back.zip_map(&rhs, |a, b| a - b).norm() / rhs.norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rejects_non_finite_rhs() {
        let d = Domain::new(&[8, 8]).unwrap();
        let mut rhs = ScalarField::zeros(d);
        rhs.values_mut()[5] = f64::INFINITY;
        let s = PoissonSolver::new(d, BcMode::DirichletZero);
        assert_eq!(s.solve_scalar(&rhs), Err(Error::NonFinite { index: 5 }));
    }
}
