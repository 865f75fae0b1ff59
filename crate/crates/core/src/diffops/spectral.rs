//! Fourier differentiation on periodic domains, for verification.
//!
//! The Nyquist mode of even-length axes is dropped, so the derivative of a
//! real field stays real and mixed partials commute to round-off.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::poisson::fft_axis;
use crate::field::{ScalarField, VectorField};

pub fn partial(s: &ScalarField, axis: usize) -> ScalarField {
    let dom = *s.domain();
    let ext = dom.shape();
    let n = ext[axis];
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = s.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_axis(&mut buf, ext, axis, &fwd);
    for (idx, c) in buf.iter_mut().enumerate() {
        let k = dom.position(idx)[axis];
        let signed = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        let w = 2.0 * PI * signed / n as f64;
        *c = Complex64::new(0.0, w) * *c / n as f64;
    }
    fft_axis(&mut buf, ext, axis, &inv);
    ScalarField::from_raw(dom, buf.into_iter().map(|c| c.re).collect())
}

pub fn gradient(s: &ScalarField) -> VectorField {
    let dom = *s.domain();
    VectorField::from_raw(dom, (0..dom.ndim()).map(|a| partial(s, a)).collect())
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let dom = *v.domain();
    let mut acc = ScalarField::zeros(dom);
    for a in 0..dom.ndim() {
        let p = partial(v.component(a), a);
        acc = acc.zip_map(&p, |x, y| x + y);
    }
    acc
}

pub fn curl(v: &VectorField) -> VectorField {
    let dom = *v.domain();
    let d = |c: usize, a: usize| partial(v.component(c), a);
    let sub = |a: ScalarField, b: ScalarField| a.zip_map(&b, |x, y| x - y);
    let comps = if dom.ndim() == 2 {
        vec![sub(d(1, 0), d(0, 1))]
    } else {
        vec![
            sub(d(2, 1), d(1, 2)),
            sub(d(0, 2), d(2, 0)),
            sub(d(1, 0), d(0, 1)),
        ]
    };
    VectorField::from_raw(dom, comps)
}
