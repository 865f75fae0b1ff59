//! Grid generation with prescribed Jacobian determinant and curl, the
//! target-grid method and inverse-map construction.
//!
//! Both methods act on an intermediate map `phi_m` that is composed with a
//! given map `phi_o`. The Jacobian of the composite is evaluated by the chain
//! rule, `grad(phi_m)(phi_o(x)) * grad(phi_o)(x)`, so determinant and curl
//! targets refer to the composite map.

use serde::{Deserialize, Serialize};

use crate::diffops::{
    self, cofactor3, compose_unchecked, det3, matmul3, partial_adjoint, sample, warp,
    warp_transpose, BcMode, Jacobian, PoissonSolver,
};
use crate::error::{Error, Result};
use crate::field::{Domain, ScalarField, Transform, VectorField};
use crate::schedule::{Descent, Outcome, StepSchedule};

/// Tolerance on the mean of `f_t` around one, i.e. on the integral relative to the domain volume.
pub const MASS_TOL: f64 = 1e-6;

/// Prescribed Jacobian determinant `f_t` and curl `g_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTargets {
    pub f_t: ScalarField,
    /// One component in 2-D, three in 3-D.
    pub g_t: VectorField,
}

impl GridTargets {
    pub fn new(f_t: ScalarField, g_t: VectorField) -> Result<Self> {
        f_t.domain().check_same(g_t.domain())?;
        let need = f_t.domain().curl_components();
        if g_t.ncomp() != need {
            return Err(Error::InvalidOptions(format!(
                "curl target needs {need} components, got {}",
                g_t.ncomp()
            )));
        }
        Ok(Self { f_t, g_t })
    }

    /// `f_t = 1`, `g_t = 0`.
    pub fn identity(domain: Domain) -> Self {
        Self {
            f_t: ScalarField::constant(domain, 1.0),
            g_t: VectorField::zeros(domain, domain.curl_components()),
        }
    }

    pub fn domain(&self) -> &Domain {
        self.f_t.domain()
    }

    /// Scales `f_t` so that its mean is exactly one.
    pub fn renormalize(&mut self) {
        let n = self.f_t.domain().len() as f64;
        let s = n / self.f_t.sum();
        self.f_t.values_mut().iter_mut().for_each(|v| *v *= s);
    }
}

/// Radially symmetric, mass-preserving determinant target
/// `1 + a (exp(-r^2 / (2 w^2)) - mean)` centred in the domain, with zero curl.
pub fn radial_bump_targets(domain: Domain, amplitude: f64, width: f64) -> GridTargets {
    let shape = domain.shape();
    let c: Vec<f64> = (0..3).map(|a| (shape[a] as f64 - 1.0) / 2.0).collect();
    let nd = domain.ndim();
    let bump = ScalarField::from_fn(domain, |p| {
        let r2: f64 = (0..nd).map(|a| (p[a] - c[a]).powi(2)).sum();
        (-r2 / (2.0 * width * width)).exp()
    });
    let mean = bump.sum() / domain.len() as f64;
    let mut t = GridTargets::identity(domain);
    t.f_t = bump.map(|b| 1.0 + amplitude * (b - mean));
    t.renormalize();
    t
}

/// Options of [`vp_generate`], [`lm_target_grid`] and [`invert`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridGenOptions {
    pub schedule: StepSchedule,
    /// Weight of the determinant and curl terms in the target-grid functional.
    pub reg_weight: f64,
    pub multipliers: Multipliers,
    /// Mean `|phi_m(phi_o) - phi_t|` at which the target-grid loop stops
    /// early; also the accuracy [`invert`] must reach.
    pub residual_tol: f64,
    /// Largest admissible `max |div g_t|` relative to `max(1, max |g_t|)`.
    pub curl_tol: f64,
    /// Descent direction of the target-grid method.
    pub direction: Direction,
    /// Shift `s` of the Sobolev direction `-(laplacian - s)^{-1} grad`.
    pub sobolev_shift: f64,
}

/// Descent direction of [`lm_target_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// The gradient itself.
    Gradient,
    /// `-(laplacian - s)^{-1}` of the gradient (zero boundary), `s` being
    /// [`GridGenOptions::sobolev_shift`].
    #[default]
    Sobolev,
}

impl Default for GridGenOptions {
    fn default() -> Self {
        Self {
            schedule: StepSchedule {
                t0: 0.5,
                ..StepSchedule::default()
            },
            reg_weight: 1.0,
            multipliers: Multipliers::Centered,
            residual_tol: 1e-3,
            curl_tol: 1e-6,
            direction: Direction::Sobolev,
            sobolev_shift: 0.1,
        }
    }
}

impl GridGenOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.reg_weight >= 0.0
            && self.residual_tol > 0.0
            && self.curl_tol > 0.0
            && self.sobolev_shift >= 0.0)
        {
            return Err(Error::InvalidOptions(
                "reg_weight and sobolev_shift must be non-negative, tolerances positive".into(),
            ));
        }
        Ok(())
    }
}

/// Where the determinant and curl penalties of the target-grid functional
/// are centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Multipliers {
    /// `lambda_f = det grad(phi) - det grad(phi_t)`,
    /// `lambda_g = curl(phi) - curl(phi_t)`: zero at an exact match.
    #[default]
    Centered,
    /// `lambda_f = det grad(phi)`, `lambda_g = curl(phi)`.
    Literal,
}

/// Checks positivity, unit mean and (3-D) solenoidality of the targets.
pub fn validate_targets(t: &GridTargets, curl_tol: f64) -> Result<()> {
    let min = t.f_t.min();
    if !(min > 0.0) {
        return Err(Error::NonPositiveJd { min });
    }
    let mean = t.f_t.sum() / t.f_t.domain().len() as f64;
    if (mean - 1.0).abs() > MASS_TOL {
        return Err(Error::MassMismatch { mean });
    }
    if t.domain().ndim() == 3 {
        let div = diffops::divergence(&t.g_t);
        let max_div = div.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = t
            .g_t
            .components()
            .iter()
            .flat_map(|c| c.values())
            .fold(1.0f64, |m, v| m.max(v.abs()));
        if max_div > curl_tol * scale {
            return Err(Error::NonSolenoidalCurl { max_div });
        }
    }
    Ok(())
}

/// Per-voxel determinant and curl centres.
struct Centres {
    f: ScalarField,
    g: VectorField,
}

/// Determinant/curl penalty `1/2 w sum (det J - c_f)^2 + |curl J - c_g|^2`
/// of the composite Jacobian `J = grad(phi_m)(phi_o) grad(phi_o)`.
struct Penalty<'a> {
    phi_o: &'a Transform,
    jac_o: Vec<[[f64; 3]; 3]>,
    centres: Centres,
    weight: f64,
}

/// Composite Jacobian data at every voxel.
struct CompositeJac {
    a: Vec<[[f64; 3]; 3]>,
    min_jd_m: f64,
}

impl<'a> Penalty<'a> {
    fn new(phi_o: &'a Transform, centres: Centres, weight: f64) -> Self {
        let jac = Jacobian::of(phi_o.coords());
        let jac_o = (0..phi_o.domain().len()).map(|i| jac.matrix(i)).collect();
        Self {
            phi_o,
            jac_o,
            centres,
            weight,
        }
    }

    /// `grad(phi_m)` sampled at `phi_o(x)`.
    fn composite(&self, phi_m: &Transform) -> CompositeJac {
        let dom = *phi_m.domain();
        let nd = dom.ndim();
        let jac = Jacobian::of(phi_m.coords());
        let det_m = jac.determinant();
        let min_jd_m = dom
            .interior()
            .map(|i| det_m.values()[i])
            .fold(f64::INFINITY, f64::min);
        let mut a = vec![[[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]; dom.len()];
        for i in 0..nd {
            for b in 0..nd {
                let e = jac.entry(i, b);
                for (idx, m) in a.iter_mut().enumerate() {
                    m[i][b] = sample(e, self.phi_o.at(idx));
                }
            }
        }
        CompositeJac { a, min_jd_m }
    }

    /// Multipliers at one voxel: `(lambda_f, lambda_g)`.
    #[inline]
    fn lambdas(&self, idx: usize, j: &[[f64; 3]; 3], nd: usize) -> (f64, [f64; 3]) {
        let lf = det3(j) - self.centres.f.values()[idx];
        let c = |k: usize| self.centres.g.component(k).values()[idx];
        let lg = if nd == 2 {
            [j[1][0] - j[0][1] - c(0), 0.0, 0.0]
        } else {
            [
                j[2][1] - j[1][2] - c(0),
                j[0][2] - j[2][0] - c(1),
                j[1][0] - j[0][1] - c(2),
            ]
        };
        (lf, lg)
    }

    fn value(&self, cj: &CompositeJac, nd: usize) -> f64 {
        let mut s = 0.0;
        for (idx, a) in cj.a.iter().enumerate() {
            let j = matmul3(a, &self.jac_o[idx]);
            let (lf, lg) = self.lambdas(idx, &j, nd);
            s += lf * lf + lg.iter().map(|x| x * x).sum::<f64>();
        }
        0.5 * self.weight * s
    }

    /// Gradient with respect to the coordinates of `phi_m` at every voxel.
    fn gradient(&self, cj: &CompositeJac, dom: Domain) -> VectorField {
        let nd = dom.ndim();
        // p[i * nd + a] holds dP/dA_{i,a} at each voxel
        let mut p = vec![vec![0.0; dom.len()]; nd * nd];
        for (idx, a) in cj.a.iter().enumerate() {
            let b = &self.jac_o[idx];
            let j = matmul3(a, b);
            let (lf, lg) = self.lambdas(idx, &j, nd);
            let cof = cofactor3(a);
            let det_b = det3(b);
            let mut lam = [[0.0; 3]; 3];
            if nd == 2 {
                lam[1][0] = lg[0];
                lam[0][1] = -lg[0];
            } else {
                lam[2][1] = lg[0];
                lam[1][2] = -lg[0];
                lam[0][2] = lg[1];
                lam[2][0] = -lg[1];
                lam[1][0] = lg[2];
                lam[0][1] = -lg[2];
            }
            for i in 0..nd {
                for ax in 0..nd {
                    let v = lf * det_b * cof[i][ax];
                    let w: f64 = (0..3).map(|q| lam[i][q] * b[ax][q]).sum();
                    p[i * nd + ax][idx] = self.weight * (v + w);
                }
            }
        }
        let comps = (0..nd)
            .map(|i| {
                let mut acc = ScalarField::zeros(dom);
                for ax in 0..nd {
                    let pia = ScalarField::from_raw(dom, std::mem::take(&mut p[i * nd + ax]));
                    let scattered = warp_transpose(&pia, self.phi_o);
                    let d = partial_adjoint(&scattered, ax);
                    acc = acc.zip_map(&d, |x, y| x - y);
                }
                acc
            })
            .collect();
        VectorField::from_raw(dom, comps)
    }
}

/// Result of a grid-generation run.
#[derive(Debug, Clone)]
pub struct GridRun {
    /// Intermediate map.
    pub phi_m: Transform,
    /// `phi_m(phi_o)`.
    pub phi: Transform,
    /// Objective after every accepted iterate, starting with the initial value.
    pub trace: Vec<f64>,
    /// Trials performed.
    pub iterations: usize,
}

/// Generates `phi = phi_m(phi_o)` whose Jacobian determinant and curl match
/// the targets, descending on the controls `(f, g)` of
/// `laplacian(phi_m) = grad f - curl g`.
pub fn vp_generate(
    phi_o: &Transform,
    targets: &GridTargets,
    opts: &GridGenOptions,
) -> Result<GridRun> {
    opts.validate()?;
    let dom = *phi_o.domain();
    dom.check_same(targets.domain())?;
    validate_targets(targets, opts.curl_tol)?;
    let solver = PoissonSolver::new(dom, BcMode::DirichletZero);
    let pen = Penalty::new(
        phi_o,
        Centres {
            f: targets.f_t.clone(),
            g: targets.g_t.clone(),
        },
        1.0,
    );
    let nd = dom.ndim();

    let map_of = |f: &ScalarField, g: &VectorField| -> Result<Transform> {
        let u = solver.solve(&diffops::control_field(f, g))?;
        Ok(Transform::from_displacement(&u))
    };

    let mut f = targets.f_t.clone();
    let mut g = targets.g_t.clone();
    let mut phi_m = map_of(&f, &g)?;
    let mut cj = pen.composite(&phi_m);
    if !(cj.min_jd_m > 0.0) {
        // the linearised start folds; begin from the identity controls
        f = ScalarField::constant(dom, 1.0);
        g = VectorField::zeros(dom, dom.curl_components());
        phi_m = Transform::identity(dom);
        cj = pen.composite(&phi_m);
    }
    let mut obj = pen.value(&cj, nd);
    let mut trace = vec![obj];
    let mut sched = Descent::new(opts.schedule);
    let mut grad: Option<(ScalarField, VectorField)> = None;

    while obj > 0.0 && !sched.exhausted() {
        if grad.is_none() {
            let mut q = pen.gradient(&cj, dom);
            q.zero_boundary();
            let b = solver.solve(&q)?;
            let df = diffops::adjoint_divergence(&b).map(|x| -x);
            let dg = diffops::adjoint_curl(&b).map(|x| -x);
            if df.norm() == 0.0 && dg.norm() == 0.0 {
                break;
            }
            grad = Some((df, dg));
        }
        let (df, dg) = grad.as_ref().expect("gradient computed above");
        let t = sched.t;
        let f_new = f.zip_map(df, |a, b| a - t * b);
        let g_new = g.zip_map(dg, |a, b| a - t * b);
        let trial = map_of(&f_new, &g_new)?;
        let cj_new = pen.composite(&trial);
        let obj_new = pen.value(&cj_new, nd);
        let outcome = if cj_new.min_jd_m > 0.0 && obj_new < obj {
            let before = obj;
            f = f_new;
            g = g_new;
            phi_m = trial;
            cj = cj_new;
            obj = obj_new;
            trace.push(obj);
            grad = None;
            sched.accept(before, obj)
        } else {
            sched.reject()
        };
        match outcome {
            Outcome::Continue => {}
            Outcome::Converged | Outcome::Exhausted => break,
            Outcome::Stalled => {
                return Err(Error::Stalled {
                    iterations: sched.iters,
                    objective: obj,
                    residual: (2.0 * obj).sqrt() / targets.f_t.norm(),
                })
            }
        }
    }
    let phi = compose_unchecked(&phi_m, phi_o);
    let min_jd = phi.min_interior_jd();
    if !(min_jd > 0.0) {
        return Err(Error::FoldingDetected { min_jd });
    }
    Ok(GridRun {
        phi_m,
        phi,
        trace,
        iterations: sched.iters,
    })
}

/// State of the target-grid functional for one `phi_m`.
struct LmEval {
    cj: CompositeJac,
    /// `phi_m(phi_o) - phi_t`.
    resid: VectorField,
    data: f64,
}

struct LmProblem<'a> {
    phi_o: &'a Transform,
    phi_t: &'a Transform,
    pen: Penalty<'a>,
}

impl<'a> LmProblem<'a> {
    fn new(phi_o: &'a Transform, phi_t: &'a Transform, opts: &GridGenOptions) -> Self {
        let dom = *phi_o.domain();
        let centres = match opts.multipliers {
            Multipliers::Centered => Centres {
                f: diffops::jacobian_determinant(phi_t),
                g: diffops::curl(phi_t.coords()),
            },
            Multipliers::Literal => Centres {
                f: ScalarField::zeros(dom),
                g: VectorField::zeros(dom, dom.curl_components()),
            },
        };
        Self {
            phi_o,
            phi_t,
            pen: Penalty::new(phi_o, centres, opts.reg_weight),
        }
    }

    fn eval(&self, phi_m: &Transform) -> LmEval {
        let dom = *phi_m.domain();
        let comps: Vec<ScalarField> = (0..dom.ndim())
            .map(|i| {
                warp(phi_m.component(i), self.phi_o).zip_map(self.phi_t.component(i), |a, b| a - b)
            })
            .collect();
        let resid = VectorField::from_raw(dom, comps);
        let data = 0.5 * resid.dot(&resid);
        LmEval {
            cj: self.pen.composite(phi_m),
            resid,
            data,
        }
    }

    /// Value of the full functional (data plus penalty).
    fn lagrangian(&self, e: &LmEval) -> f64 {
        e.data + self.pen.value(&e.cj, self.phi_o.domain().ndim())
    }

    /// Gradient of the full functional, zero on the boundary.
    fn gradient(&self, e: &LmEval) -> VectorField {
        let dom = *self.phi_o.domain();
        let reg = self.pen.gradient(&e.cj, dom);
        let comps = (0..dom.ndim())
            .map(|i| {
                warp_transpose(e.resid.component(i), self.phi_o)
                    .zip_map(reg.component(i), |a, b| a + b)
            })
            .collect();
        let mut g = VectorField::from_raw(dom, comps);
        g.zero_boundary();
        g
    }
}

fn mean_norm(v: &VectorField) -> f64 {
    v.magnitude().sum() / v.domain().len() as f64
}

/// Target-grid method: finds `phi_m` with `phi_m(phi_o) = phi_t`.
///
/// Descends the functional `1/2 |phi_m(phi_o) - phi_t|^2` plus the weighted
/// determinant and curl penalties. A trial is accepted when the data term
/// decreases and `phi_m` stays non-folding. The loop also stops once the
/// mean residual drops below `opts.residual_tol`.
pub fn lm_target_grid(
    phi_o: &Transform,
    phi_t: &Transform,
    opts: &GridGenOptions,
) -> Result<GridRun> {
    opts.validate()?;
    phi_o.domain().check_same(phi_t.domain())?;
    let dom = *phi_o.domain();
    let prob = LmProblem::new(phi_o, phi_t, opts);
    let mut phi_m = Transform::identity(dom);
    let mut cur = prob.eval(&phi_m);
    let mut trace = vec![cur.data];
    let mut sched = Descent::new(opts.schedule);
    let mut grad: Option<VectorField> = None;
    let solver = PoissonSolver::new(dom, BcMode::DirichletZero);

    while cur.data > 0.0 && mean_norm(&cur.resid) > opts.residual_tol && !sched.exhausted() {
        if grad.is_none() {
            let g = prob.gradient(&cur);
            if g.norm() == 0.0 {
                break;
            }
            grad = Some(match opts.direction {
                Direction::Gradient => g,
                Direction::Sobolev => {
                    solver.solve_shifted(&g, opts.sobolev_shift)?.map(|x| -x)
                }
            });
        }
        let dir = grad.as_ref().expect("gradient computed above");
        let t = sched.t;
        let trial = Transform::from_coords_pinned(phi_m.coords().zip_map(dir, |a, b| a - t * b));
        let next = prob.eval(&trial);
        let outcome = if next.cj.min_jd_m > 0.0 && next.data < cur.data {
            let before = cur.data;
            phi_m = trial;
            cur = next;
            trace.push(cur.data);
            grad = None;
            sched.accept(before, cur.data)
        } else {
            sched.reject()
        };
        match outcome {
            Outcome::Continue => {}
            Outcome::Converged | Outcome::Exhausted => break,
            Outcome::Stalled => {
                return Err(Error::Stalled {
                    iterations: sched.iters,
                    objective: cur.data,
                    residual: mean_norm(&cur.resid),
                })
            }
        }
    }
    let phi = compose_unchecked(&phi_m, phi_o);
    Ok(GridRun {
        phi_m,
        phi,
        trace,
        iterations: sched.iters,
    })
}

/// Value and gradient of the full target-grid functional at `phi_m`.
pub fn lm_functional(
    phi_m: &Transform,
    phi_o: &Transform,
    phi_t: &Transform,
    opts: &GridGenOptions,
) -> (f64, VectorField) {
    let prob = LmProblem::new(phi_o, phi_t, opts);
    let e = prob.eval(phi_m);
    (prob.lagrangian(&e), prob.gradient(&e))
}

/// Value and gradient (with respect to `(f, g)`) of the grid-generation
/// objective at the controls `f`, `g`.
pub fn vp_functional(
    f: &ScalarField,
    g: &VectorField,
    phi_o: &Transform,
    targets: &GridTargets,
) -> Result<(f64, ScalarField, VectorField)> {
    let dom = *phi_o.domain();
    let solver = PoissonSolver::new(dom, BcMode::DirichletZero);
    let pen = Penalty::new(
        phi_o,
        Centres {
            f: targets.f_t.clone(),
            g: targets.g_t.clone(),
        },
        1.0,
    );
    let phi_m = Transform::from_displacement(&solver.solve(&diffops::control_field(f, g))?);
    let cj = pen.composite(&phi_m);
    let mut q = pen.gradient(&cj, dom);
    q.zero_boundary();
    let b = solver.solve(&q)?;
    Ok((
        pen.value(&cj, dom.ndim()),
        diffops::adjoint_divergence(&b).map(|x| -x),
        diffops::adjoint_curl(&b).map(|x| -x),
    ))
}

/// Inverse of `phi` by the target-grid method with `phi_t = id`.
///
/// Fails with [`Error::Stalled`] unless the mean of `|phi_m(phi) - id|`
/// reaches `opts.residual_tol`.
pub fn invert(phi: &Transform, opts: &GridGenOptions) -> Result<Transform> {
    let min_jd = phi.min_interior_jd();
    if !(min_jd > 0.0) {
        return Err(Error::FoldingDetected { min_jd });
    }
    let id = Transform::identity(*phi.domain());
    let run = lm_target_grid(phi, &id, opts)?;
    let resid = run.phi.coords().zip_map(id.coords(), |a, b| a - b);
    let residual = mean_norm(&resid);
    if residual > opts.residual_tol {
        return Err(Error::Stalled {
            iterations: run.iterations,
            objective: *run.trace.last().unwrap_or(&0.0),
            residual,
        });
    }
    Ok(run.phi_m)
}

/// Mean and maximum of a per-voxel deviation, in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub mean: f64,
    pub max: f64,
}

impl Deviation {
    pub fn between(a: &Transform, b: &Transform) -> Self {
        let m = a.coords().zip_map(b.coords(), |x, y| x - y).magnitude();
        Self {
            mean: m.sum() / m.domain().len() as f64,
            max: m.max(),
        }
    }
}

/// Inverse consistency and transitivity of three pairwise maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `phi_ba(phi_ab)` against the identity.
    pub ba_after_ab: Deviation,
    /// `phi_ab(phi_ba)` against the identity.
    pub ab_after_ba: Deviation,
    /// `phi_cb(phi_ac)` against `phi_ab`.
    pub transitivity: Deviation,
}

pub fn consistency_report(
    phi_ab: &Transform,
    phi_ba: &Transform,
    phi_ac: &Transform,
    phi_cb: &Transform,
) -> Result<ConsistencyReport> {
    let dom = *phi_ab.domain();
    for t in [phi_ba, phi_ac, phi_cb] {
        dom.check_same(t.domain())?;
    }
    let id = Transform::identity(dom);
    Ok(ConsistencyReport {
        ba_after_ab: Deviation::between(&compose_unchecked(phi_ba, phi_ab), &id),
        ab_after_ba: Deviation::between(&compose_unchecked(phi_ab, phi_ba), &id),
        transitivity: Deviation::between(&compose_unchecked(phi_cb, phi_ac), phi_ab),
    })
}

/// Grid-line drawing of 2-D maps: the identity lattice in black with each
/// map overlaid in its own colour.
///
/// # Panics
/// If a map is not two-dimensional.
pub fn grid_svg(maps: &[(&Transform, &str)], every: usize) -> String {
    use std::fmt::Write;
    let every = every.max(1);
    let scale = 8.0;
    let dom = maps.first().map(|m| *m.0.domain());
    let mut s = String::new();
    let Some(dom) = dom else {
        return s;
    };
    assert_eq!(dom.ndim(), 2, "grid drawings are two-dimensional");
    let [nx, ny, _] = dom.shape();
    let (w, h) = ((nx - 1) as f64 * scale, (ny - 1) as f64 * scale);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="-2 -2 {} {}">"#,
        w + 4.0,
        h + 4.0
    );
    let _ = writeln!(s, r#"<rect x="-2" y="-2" width="{}" height="{}" fill="white"/>"#, w + 4.0, h + 4.0);
    let id = Transform::identity(dom);
    let mut layers = vec![(&id, "black")];
    layers.extend(maps.iter().copied());
    for (phi, colour) in layers {
        let pt = |i: usize, j: usize| {
            let p = phi.at(dom.index(i, j, 0));
            format!("{:.3},{:.3}", p[0] * scale, p[1] * scale)
        };
        let mut line = |pts: Vec<String>| {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="0.8" points="{}"/>"#,
                pts.join(" ")
            );
        };
        for j in (0..ny).step_by(every) {
            line((0..nx).map(|i| pt(i, j)).collect());
        }
        for i in (0..nx).step_by(every) {
            line((0..ny).map(|j| pt(i, j)).collect());
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump_map(dom: Domain, amp: f64) -> Transform {
        let c: Vec<f64> = dom.shape().iter().map(|&n| (n as f64 - 1.0) / 2.0).collect();
        let nd = dom.ndim();
        let comps = (0..nd)
            .map(|a| {
                ScalarField::from_fn(dom, |p| {
                    let r2: f64 = (0..nd).map(|b| (p[b] - c[b]).powi(2)).sum();
                    let s = if a == 0 { 1.0 } else { 0.5 };
                    p[a] + s * amp * (-r2 / 30.0).exp()
                })
            })
            .collect();
        Transform::from_coords_pinned(VectorField::from_raw(dom, comps))
    }

    #[test]
    fn identity_targets_validate() {
        let d = Domain::new(&[8, 8, 8]).unwrap();
        validate_targets(&GridTargets::identity(d), 1e-6).unwrap();
    }

    #[test]
    fn doubled_mass_is_rejected() {
        let d = Domain::new(&[8, 8]).unwrap();
        let mut t = GridTargets::identity(d);
        t.f_t = ScalarField::constant(d, 2.0);
        assert!(matches!(validate_targets(&t, 1e-6), Err(Error::MassMismatch { .. })));
        t.renormalize();
        validate_targets(&t, 1e-6).unwrap();
    }

    #[test]
    fn gradient_field_is_not_a_curl() {
        let d = Domain::new(&[10, 10, 10]).unwrap();
        let s = ScalarField::from_fn(d, |p| (0.3 * p[0]).sin() * p[1] + p[2] * p[2] * 0.05);
        let mut t = GridTargets::identity(d);
        t.g_t = diffops::gradient(&s);
        assert!(matches!(validate_targets(&t, 1e-6), Err(Error::NonSolenoidalCurl { .. })));
        t.g_t = diffops::curl(&diffops::gradient(&s).map(|x| x * x));
        validate_targets(&t, 1e-6).unwrap();
    }

    #[test]
    fn negative_target_is_rejected() {
        let d = Domain::new(&[8, 8]).unwrap();
        let mut t = GridTargets::identity(d);
        t.f_t.values_mut()[0] = -1.0;
        t.f_t.values_mut()[1] = 3.0;
        assert!(matches!(validate_targets(&t, 1e-6), Err(Error::NonPositiveJd { .. })));
    }

    #[test]
    fn identity_targets_generate_identity() {
        let d = Domain::new(&[12, 12]).unwrap();
        let run = vp_generate(&Transform::identity(d), &GridTargets::identity(d), &GridGenOptions::default()).unwrap();
        assert_eq!(run.phi, Transform::identity(d));
        assert_eq!(run.trace, vec![0.0]);
    }

    #[test]
    fn equal_maps_need_no_target_grid_step() {
        let d = Domain::new(&[16, 16]).unwrap();
        let phi = bump_map(d, 1.5);
        let run = lm_target_grid(&phi, &phi, &GridGenOptions::default()).unwrap();
        assert_eq!(run.phi_m, Transform::identity(d));
        assert_eq!(run.iterations, 0);
    }

    #[test]
    fn invert_identity() {
        let d = Domain::new(&[10, 10, 10]).unwrap();
        let id = Transform::identity(d);
        assert_eq!(invert(&id, &GridGenOptions::default()).unwrap(), id);
    }

    #[test]
    fn consistency_of_identity_is_zero() {
        let d = Domain::new(&[8, 8]).unwrap();
        let id = Transform::identity(d);
        let r = consistency_report(&id, &id, &id, &id).unwrap();
        assert_eq!(r.transitivity.max, 0.0);
        assert_eq!(r.ba_after_ab.mean, 0.0);
    }

    #[test]
    fn svg_has_one_polyline_per_grid_line() {
        let d = Domain::new(&[8, 8]).unwrap();
        let id = Transform::identity(d);
        let s = grid_svg(&[(&id, "red")], 1);
        assert_eq!(s.matches("<polyline").count(), 2 * 16);
    }
}
