use crate::error::Result;
use crate::field::{Domain, ScalarField, Transform, VectorField};

/// Interpolation stencil of a continuous position: up to eight voxel
/// indices and their multilinear weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    pub len: usize,
}

#[inline]
pub(crate) fn cell(dom: &Domain, p: [f64; 3]) -> Cell {
    let shape = dom.shape();
    let strides = dom.strides();
    let mut base = 0;
    let mut frac = [0.0; 3];
    for a in 0..dom.ndim() {
        let hi = (shape[a] - 1) as f64;
        let x = p[a].clamp(0.0, hi);
        let i = (x.floor() as usize).min(shape[a] - 2);
        frac[a] = x - i as f64;
        base += i * strides[a];
    }
    let mut c = Cell {
        idx: [0; 8],
        w: [0.0; 8],
        len: 1 << dom.ndim(),
    };
    for corner in 0..c.len {
        let mut idx = base;
        let mut w = 1.0;
        for a in 0..dom.ndim() {
            if corner >> a & 1 == 1 {
                idx += strides[a];
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        c.idx[corner] = idx;
        c.w[corner] = w;
    }
    c
}

/// Multilinear sample of `s` at a continuous position, clamped to the domain.
#[inline]
pub fn sample(s: &ScalarField, p: [f64; 3]) -> f64 {
    let c = cell(s.domain(), p);
    let v = s.values();
    (0..c.len).map(|k| c.w[k] * v[c.idx[k]]).sum()
}

/// `img(phi(x))` by multilinear interpolation with clamping.
pub fn warp(img: &ScalarField, phi: &Transform) -> ScalarField {
    let dom = *phi.domain();
    debug_assert_eq!(&dom, img.domain());
    let values = (0..dom.len()).map(|idx| sample(img, phi.at(idx))).collect();
    ScalarField::from_raw(dom, values)
}

/// Transpose of [`warp`] as a linear map of the image values: scatters
/// `s(x)` onto the interpolation stencil of `phi(x)`.
pub fn warp_transpose(s: &ScalarField, phi: &Transform) -> ScalarField {
    let dom = *phi.domain();
    let mut out = vec![0.0; dom.len()];
    for (idx, &v) in s.values().iter().enumerate() {
        let c = cell(&dom, phi.at(idx));
        for k in 0..c.len {
            out[c.idx[k]] += c.w[k] * v;
        }
    }
    ScalarField::from_raw(dom, out)
}

/// `outer(inner(x))`, with the boundary re-pinned to the identity.
pub fn compose(outer: &Transform, inner: &Transform) -> Result<Transform> {
    outer.domain().check_same(inner.domain())?;
    Ok(compose_unchecked(outer, inner))
}

pub(crate) fn compose_unchecked(outer: &Transform, inner: &Transform) -> Transform {
    let dom: Domain = *outer.domain();
    let comps = outer
        .coords()
        .components()
        .iter()
        .map(|c| warp(c, inner))
        .collect();
    Transform::from_coords_pinned(VectorField::from_raw(dom, comps))
}
