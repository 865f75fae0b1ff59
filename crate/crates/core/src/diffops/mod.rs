//! Discrete differential operators, the spectral Poisson solver and
//! map composition.
//!
//! Derivatives use second-order central differences in the interior and
//! second-order one-sided stencils on the two boundary layers of each axis.
//! Every operator acts axis by axis, so operators along different axes
//! commute exactly and `curl(gradient(s))`, `divergence(curl(v))` vanish to
//! round-off even with the boundary stencils in place.
//!
//! The `*_adjoint` variants apply the negative transpose of the derivative
//! matrix. They agree with central differences away from the boundary and
//! are what gradient computations need when an objective is written in terms
//! of the forward stencils.

mod interp;
mod poisson;
pub mod spectral;

pub use interp::{compose, sample, warp, warp_transpose};
pub(crate) use interp::compose_unchecked;
pub use poisson::{BcMode, PoissonSolver};

use crate::field::{ScalarField, Transform, VectorField};

/// First derivative along `axis`.
pub fn partial(s: &ScalarField, axis: usize) -> ScalarField {
    let dom = *s.domain();
    let n = dom.shape()[axis];
    let st = dom.strides()[axis];
    let v = s.values();
    let mut out = vec![0.0; v.len()];
    for b in dom.line_starts(axis) {
        let at = |i: usize| v[b + i * st];
        out[b] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * 0.5;
        for i in 1..n - 1 {
            out[b + i * st] = (at(i + 1) - at(i - 1)) * 0.5;
        }
        out[b + (n - 1) * st] = (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * 0.5;
    }
    ScalarField::from_raw(dom, out)
}

/// Negative transpose of [`partial`]: `<partial(f), g> = -<f, partial_adjoint(g)>`.
pub fn partial_adjoint(s: &ScalarField, axis: usize) -> ScalarField {
    let dom = *s.domain();
    let n = dom.shape()[axis];
    let st = dom.strides()[axis];
    let v = s.values();
    let mut out = vec![0.0; v.len()];
    for b in dom.line_starts(axis) {
        let at = |i: usize| v[b + i * st];
        let o = |i: usize| b + i * st;
        // row 0: (-3 f0 + 4 f1 - f2) / 2
        out[o(0)] += 1.5 * at(0);
        out[o(1)] -= 2.0 * at(0);
        out[o(2)] += 0.5 * at(0);
        for i in 1..n - 1 {
            out[o(i + 1)] -= 0.5 * at(i);
            out[o(i - 1)] += 0.5 * at(i);
        }
        // row n-1: (3 f_{n-1} - 4 f_{n-2} + f_{n-3}) / 2
        let e = at(n - 1);
        out[o(n - 1)] -= 1.5 * e;
        out[o(n - 2)] += 2.0 * e;
        out[o(n - 3)] -= 0.5 * e;
    }
    ScalarField::from_raw(dom, out)
}

/// Central difference with periodic wrap-around.
pub fn partial_periodic(s: &ScalarField, axis: usize) -> ScalarField {
    let dom = *s.domain();
    let n = dom.shape()[axis];
    let st = dom.strides()[axis];
    let v = s.values();
    let mut out = vec![0.0; v.len()];
    for b in dom.line_starts(axis) {
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            out[b + i * st] = (v[b + ip * st] - v[b + im * st]) * 0.5;
        }
    }
    ScalarField::from_raw(dom, out)
}

pub fn gradient(s: &ScalarField) -> VectorField {
    let dom = *s.domain();
    VectorField::from_raw(dom, (0..dom.ndim()).map(|a| partial(s, a)).collect())
}

pub fn divergence(v: &VectorField) -> ScalarField {
    sum_partials(v, partial)
}

/// Divergence built from [`partial_adjoint`]; equals `-gradient^T`.
pub fn adjoint_divergence(v: &VectorField) -> ScalarField {
    sum_partials(v, partial_adjoint)
}

fn sum_partials(v: &VectorField, d: fn(&ScalarField, usize) -> ScalarField) -> ScalarField {
    let dom = *v.domain();
    let mut acc = vec![0.0; dom.len()];
    for a in 0..dom.ndim() {
        let p = d(v.component(a), a);
        acc.iter_mut().zip(p.values()).for_each(|(s, x)| *s += x);
    }
    ScalarField::from_raw(dom, acc)
}

/// Curl of a vector field: three components in 3-D, the scalar
/// `dv2/dx - dv1/dy` (one component) in 2-D.
pub fn curl(v: &VectorField) -> VectorField {
    curl_with(v, partial)
}

/// Curl assembled from [`partial_adjoint`].
pub fn adjoint_curl(v: &VectorField) -> VectorField {
    curl_with(v, partial_adjoint)
}

fn curl_with(v: &VectorField, d: fn(&ScalarField, usize) -> ScalarField) -> VectorField {
    let dom = *v.domain();
    let sub = |a: ScalarField, b: ScalarField| a.zip_map(&b, |x, y| x - y);
    if dom.ndim() == 2 {
        let c = sub(d(v.component(1), 0), d(v.component(0), 1));
        VectorField::from_raw(dom, vec![c])
    } else {
        let c0 = sub(d(v.component(2), 1), d(v.component(1), 2));
        let c1 = sub(d(v.component(0), 2), d(v.component(2), 0));
        let c2 = sub(d(v.component(1), 0), d(v.component(0), 1));
        VectorField::from_raw(dom, vec![c0, c1, c2])
    }
}

/// `curl` applied to a curl field `g`, returning a vector field: the usual
/// curl in 3-D and `(dg/dy, -dg/dx)` for a scalar `g` in 2-D.
pub fn rot(g: &VectorField) -> VectorField {
    let dom = *g.domain();
    if dom.ndim() == 2 {
        let s = g.component(0);
        VectorField::from_raw(dom, vec![partial(s, 1), partial(s, 0).map(|x| -x)])
    } else {
        curl(g)
    }
}

/// Control right-hand side `grad f - curl g`.
pub fn control_field(f: &ScalarField, g: &VectorField) -> VectorField {
    gradient(f).zip_map(&rot(g), |a, b| a - b)
}

/// Per-voxel Jacobian matrix of a vector field with `ndim` components.
#[derive(Debug, Clone)]
pub struct Jacobian {
    ndim: usize,
    /// `entries[i * ndim + a]` holds `d v_i / d x_a`.
    entries: Vec<ScalarField>,
}

impl Jacobian {
    pub fn of(v: &VectorField) -> Self {
        let ndim = v.domain().ndim();
        let mut entries = Vec::with_capacity(ndim * ndim);
        for i in 0..ndim {
            for a in 0..ndim {
                entries.push(partial(v.component(i), a));
            }
        }
        Self { ndim, entries }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn entry(&self, i: usize, a: usize) -> &ScalarField {
        &self.entries[i * self.ndim + a]
    }

    /// Matrix at one voxel, padded with the identity in 2-D.
    #[inline]
    pub fn matrix(&self, idx: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        m[2][2] = 1.0;
        for i in 0..self.ndim {
            for a in 0..self.ndim {
                m[i][a] = self.entries[i * self.ndim + a].values()[idx];
            }
        }
        m
    }

    pub fn determinant(&self) -> ScalarField {
        let dom = *self.entries[0].domain();
        let values = (0..dom.len()).map(|idx| det3(&self.matrix(idx))).collect();
        ScalarField::from_raw(dom, values)
    }
}

#[inline]
pub(crate) fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Cofactor matrix; `cof[i][a] = d det / d m[i][a]`.
#[inline]
pub(crate) fn cofactor3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    [
        [
            m[1][1] * m[2][2] - m[1][2] * m[2][1],
            m[1][2] * m[2][0] - m[1][0] * m[2][2],
            m[1][0] * m[2][1] - m[1][1] * m[2][0],
        ],
        [
            m[0][2] * m[2][1] - m[0][1] * m[2][2],
            m[0][0] * m[2][2] - m[0][2] * m[2][0],
            m[0][1] * m[2][0] - m[0][0] * m[2][1],
        ],
        [
            m[0][1] * m[1][2] - m[0][2] * m[1][1],
            m[0][2] * m[1][0] - m[0][0] * m[1][2],
            m[0][0] * m[1][1] - m[0][1] * m[1][0],
        ],
    ]
}

#[inline]
pub(crate) fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn jacobian_determinant(phi: &Transform) -> ScalarField {
    Jacobian::of(phi.coords()).determinant()
}

/// Componentwise `(2d+1)`-point Laplacian.
///
/// `Periodic` wraps around. `DirichletZero` evaluates the stencil at interior
/// voxels only (reading the stored boundary values) and returns zero on the
/// boundary, matching the operator inverted by [`PoissonSolver`].
pub fn laplacian(v: &VectorField, bc: BcMode) -> VectorField {
    let dom = *v.domain();
    let comps = v
        .components()
        .iter()
        .map(|c| laplacian_scalar(c, bc))
        .collect();
    VectorField::from_raw(dom, comps)
}

pub fn laplacian_scalar(s: &ScalarField, bc: BcMode) -> ScalarField {
    let dom = *s.domain();
    let shape = dom.shape();
    let strides = dom.strides();
    let v = s.values();
    let mut out = vec![0.0; v.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let p = dom.position(idx);
        if bc == BcMode::DirichletZero && dom.is_boundary(idx) {
            continue;
        }
        let mut acc = -2.0 * dom.ndim() as f64 * v[idx];
        for a in 0..dom.ndim() {
            let n = shape[a];
            let up = if p[a] + 1 == n { idx + strides[a] - n * strides[a] } else { idx + strides[a] };
            let dn = if p[a] == 0 { idx + (n - 1) * strides[a] } else { idx - strides[a] };
            acc += v[up] + v[dn];
        }
        *o = acc;
    }
    ScalarField::from_raw(dom, out)
}

/// Sum of the principal 2x2 minors of a 3x3 matrix.
#[inline]
fn principal_minor_sum(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
        + m[1][1] * m[2][2]
        - m[1][2] * m[2][1]
}

/// The six-term cubic in the displacement gradient,
/// `u1x u2y u3z + u1z u2x u3y + u1y u2z u3x - u1x u2z u3y - u1y u2x u3z - u1z u2y u3x`.
///
/// Expanding the six products shows this is `det(grad u)` itself.
pub fn tail_cubic(phi: &Transform) -> ScalarField {
    let jac = Jacobian::of(&phi.displacement());
    let dom = *phi.domain();
    let values = (0..dom.len())
        .map(|idx| {
            let g = jac.matrix(idx);
            g[0][0] * g[1][1] * g[2][2] + g[0][2] * g[1][0] * g[2][1] + g[0][1] * g[1][2] * g[2][0]
                - g[0][0] * g[1][2] * g[2][1]
                - g[0][1] * g[1][0] * g[2][2]
                - g[0][2] * g[1][1] * g[2][0]
        })
        .collect();
    ScalarField::from_raw(dom, values)
}

/// Divergence / Jacobian-determinant identity residual for 3-D maps:
/// `div(phi) - det(grad phi) - 2 + det(grad u) + m2(grad u)`, with `m2` the
/// sum of principal 2x2 minors. Since `det(I + A) = 1 + tr A + m2(A) + det A`
/// holds exactly for the discrete Jacobian, the residual is round-off only.
///
/// # Panics
/// If the domain is not three-dimensional.
pub fn small_displacement_residual(phi: &Transform) -> ScalarField {
    let dom = *phi.domain();
    assert_eq!(dom.ndim(), 3, "the residual is defined for 3-D maps");
    let div = divergence(phi.coords());
    let jac_phi = Jacobian::of(phi.coords());
    let jac_u = Jacobian::of(&phi.displacement());
    let values = (0..dom.len())
        .map(|idx| {
            let a = jac_phi.matrix(idx);
            let g = jac_u.matrix(idx);
            div.values()[idx] - det3(&a) - 2.0 + det3(&g) + principal_minor_sum(&g)
        })
        .collect();
    ScalarField::from_raw(dom, values)
}
