//! Lattice domain and the containers every other module operates on.
//!
//! All fields use an x-fastest linear layout: voxel `(i, j, k)` lives at
//! `i + nx * (j + ny * k)`. Two-dimensional domains are stored with `nz = 1`.
//! Vector fields are component-major (one contiguous [`ScalarField`] per
//! component). Voxel spacing is one everywhere.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible extent along any axis. Central differences and the
/// one-sided boundary stencils must not overlap.
pub const MIN_EXTENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Domain {
    shape: [usize; 3],
    ndim: usize,
}

impl Domain {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::InvalidDomain(format!(
                "dimensionality must be 2 or 3, got {}",
                dims.len()
            )));
        }
        if let Some(&n) = dims.iter().find(|&&n| n < MIN_EXTENT) {
            return Err(Error::InvalidDomain(format!(
                "every axis needs at least {MIN_EXTENT} voxels, got {n}"
            )));
        }
        let mut shape = [1; 3];
        shape[..dims.len()].copy_from_slice(dims);
        Ok(Self {
            shape,
            ndim: dims.len(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.shape[..self.ndim]
    }

    /// Extents padded to three axes (`nz = 1` in 2-D).
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn strides(&self) -> [usize; 3] {
        [1, self.shape[0], self.shape[0] * self.shape[1]]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.shape[0] * (j + self.shape[1] * k)
    }

    #[inline]
    pub fn position(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn is_boundary(&self, idx: usize) -> bool {
        let p = self.position(idx);
        (0..self.ndim).any(|a| p[a] == 0 || p[a] + 1 == self.shape[a])
    }

    /// Number of curl components: one in 2-D (scalar curl), three in 3-D.
    pub fn curl_components(&self) -> usize {
        if self.ndim == 2 {
            1
        } else {
            3
        }
    }

    pub fn check_same(&self, other: &Domain) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            })
        }
    }

    /// Base offsets of every lattice line running along `axis`.
    pub(crate) fn line_starts(&self, axis: usize) -> Vec<usize> {
        let [nx, ny, nz] = self.shape;
        let mut out = Vec::with_capacity(self.len() / self.shape[axis]);
        match axis {
            0 => {
                for k in 0..nz {
                    for j in 0..ny {
                        out.push(self.index(0, j, k));
                    }
                }
            }
            1 => {
                for k in 0..nz {
                    for i in 0..nx {
                        out.push(self.index(i, 0, k));
                    }
                }
            }
            _ => {
                for j in 0..ny {
                    for i in 0..nx {
                        out.push(self.index(i, j, 0));
                    }
                }
            }
        }
        out
    }

    /// Indices of voxels that are not on the boundary.
    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.is_boundary(i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    /// Builds a field, rejecting wrong lengths and non-finite values.
    pub fn from_vec(domain: Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::LengthMismatch {
                expected: domain.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { domain, values })
    }

    pub(crate) fn from_raw(domain: Domain, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn constant(domain: Domain, value: f64) -> Self {
        Self::from_raw(domain, vec![value; domain.len()])
    }

    pub fn zeros(domain: Domain) -> Self {
        Self::constant(domain, 0.0)
    }

    /// Evaluates `f` at the integer position of every voxel.
    pub fn from_fn(domain: Domain, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let values = (0..domain.len())
            .map(|idx| {
                let p = domain.position(idx);
                f([p[0] as f64, p[1] as f64, p[2] as f64])
            })
            .collect();
        Self::from_raw(domain, values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.domain.index(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.domain, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.domain, other.domain);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(self.domain, values)
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A field with an arbitrary number of components sharing one domain.
///
/// Displacements, controls and adjoints carry `ndim` components. Curl fields
/// carry [`Domain::curl_components`] components, so a 2-D curl is stored as a
/// one-component vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    domain: Domain,
    comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn from_components(comps: Vec<ScalarField>) -> Result<Self> {
        let domain = *comps
            .first()
            .ok_or_else(|| Error::InvalidDomain("vector field needs a component".into()))?
            .domain();
        for c in &comps[1..] {
            domain.check_same(c.domain())?;
        }
        Ok(Self { domain, comps })
    }

    pub(crate) fn from_raw(domain: Domain, comps: Vec<ScalarField>) -> Self {
        Self { domain, comps }
    }

    pub fn zeros(domain: Domain, ncomp: usize) -> Self {
        Self::from_raw(domain, vec![ScalarField::zeros(domain); ncomp])
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.comps
    }

    pub fn component(&self, c: usize) -> &ScalarField {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut ScalarField {
        &mut self.comps[c]
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.comps
    }

    pub fn zip_map(&self, other: &VectorField, f: impl Fn(f64, f64) -> f64 + Copy) -> Self {
        debug_assert_eq!(self.comps.len(), other.comps.len());
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.zip_map(b, f))
            .collect();
        Self::from_raw(self.domain, comps)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        Self::from_raw(self.domain, self.comps.iter().map(|c| c.map(f)).collect())
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Per-voxel Euclidean length.
    pub fn magnitude(&self) -> ScalarField {
        let mut out = vec![0.0; self.domain.len()];
        for c in &self.comps {
            for (o, v) in out.iter_mut().zip(c.values()) {
                *o += v * v;
            }
        }
        out.iter_mut().for_each(|o| *o = o.sqrt());
        ScalarField::from_raw(self.domain, out)
    }

    /// Zeroes every component on the boundary.
    pub fn zero_boundary(&mut self) {
        let dom = self.domain;
        for c in &mut self.comps {
            for (idx, v) in c.values_mut().iter_mut().enumerate() {
                if dom.is_boundary(idx) {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(ScalarField::is_finite)
    }
}

/// A map of the domain onto itself, stored as absolute voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    coords: VectorField,
}

impl Transform {
    pub fn identity(domain: Domain) -> Self {
        let comps = (0..domain.ndim())
            .map(|a| ScalarField::from_fn(domain, |p| p[a]))
            .collect();
        Self {
            coords: VectorField::from_raw(domain, comps),
        }
    }

    /// Wraps absolute coordinates. The boundary must already be the identity.
    pub fn from_coords(coords: VectorField) -> Result<Self> {
        let dom = *coords.domain();
        if coords.ncomp() != dom.ndim() {
            return Err(Error::InvalidDomain(format!(
                "transform needs {} components, got {}",
                dom.ndim(),
                coords.ncomp()
            )));
        }
        if !coords.is_finite() {
            let index = coords
                .components()
                .iter()
                .find_map(|c| c.values().iter().position(|v| !v.is_finite()))
                .unwrap_or(0);
            return Err(Error::NonFinite { index });
        }
        let t = Self { coords };
        if let Some(index) = t.boundary_violation() {
            return Err(Error::BoundaryNotIdentity { index });
        }
        Ok(t)
    }

    /// Wraps absolute coordinates and forces the boundary to the identity.
    pub fn from_coords_pinned(coords: VectorField) -> Self {
        let mut t = Self { coords };
        t.pin_boundary();
        t
    }

    /// `id + u`, with `u` ignored on the boundary.
    pub fn from_displacement(u: &VectorField) -> Self {
        let dom = *u.domain();
        let mut t = Self::identity(dom);
        for (c, uc) in t.coords.comps.iter_mut().zip(u.components()) {
            for (idx, (x, d)) in c.values.iter_mut().zip(uc.values()).enumerate() {
                if !dom.is_boundary(idx) {
                    *x += d;
                }
            }
        }
        t
    }

    pub fn domain(&self) -> &Domain {
        self.coords.domain()
    }

    pub fn coords(&self) -> &VectorField {
        &self.coords
    }

    pub fn into_coords(self) -> VectorField {
        self.coords
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        self.coords.component(a)
    }

    /// `u = phi - id`.
    pub fn displacement(&self) -> VectorField {
        let dom = *self.domain();
        let comps = self
            .coords
            .components()
            .iter()
            .enumerate()
            .map(|(a, c)| {
                let values = c
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(idx, &x)| x - dom.position(idx)[a] as f64)
                    .collect();
                ScalarField::from_raw(dom, values)
            })
            .collect();
        VectorField::from_raw(dom, comps)
    }

    /// Position `phi(idx)`.
    #[inline]
    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (a, c) in self.coords.components().iter().enumerate() {
            p[a] = c.values()[idx];
        }
        p
    }

    pub fn pin_boundary(&mut self) {
        let dom = *self.domain();
        for (a, c) in self.coords.comps.iter_mut().enumerate() {
            for (idx, x) in c.values.iter_mut().enumerate() {
                if dom.is_boundary(idx) {
                    *x = dom.position(idx)[a] as f64;
                }
            }
        }
    }

    fn boundary_violation(&self) -> Option<usize> {
        let dom = *self.domain();
        (0..dom.len()).find(|&idx| {
            dom.is_boundary(idx) && {
                let p = dom.position(idx);
                (0..dom.ndim()).any(|a| self.coords.comps[a].values[idx] != p[a] as f64)
            }
        })
    }

    /// Convex blend `(1 - tau) * self + tau * other`.
    pub fn blend(&self, other: &Transform, tau: f64) -> Transform {
        Transform {
            coords: self
                .coords
                .zip_map(&other.coords, |a, b| (1.0 - tau) * a + tau * b),
        }
    }

    /// Membership in the admissible set: positive Jacobian determinant at
    /// every interior voxel.
    pub fn is_diffeomorphic(&self) -> bool {
        self.min_interior_jd() > 0.0
    }

    pub fn min_interior_jd(&self) -> f64 {
        let jd = crate::diffops::jacobian_determinant(self);
        let dom = *self.domain();
        dom.interior()
            .map(|i| jd.values()[i])
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    domain: Domain,
    labels: Vec<u32>,
}

impl LabelVolume {
    pub fn from_vec(domain: Domain, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != domain.len() {
            return Err(Error::LengthMismatch {
                expected: domain.len(),
                got: labels.len(),
            });
        }
        Ok(Self { domain, labels })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Distinct labels present, background included.
    pub fn label_set(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    /// Distinct non-background labels.
    pub fn foreground_labels(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    /// Binary mask of voxels where `field > threshold`, labelled 1.
    pub fn threshold(field: &ScalarField, threshold: f64) -> Self {
        Self {
            domain: *field.domain(),
            labels: field
                .values()
                .iter()
                .map(|&v| u32::from(v > threshold))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Spread estimator for [`field_stats_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdEstimator {
    /// `sqrt(sum (x - mean)^2 / (N - 1))`.
    #[default]
    Sample,
    /// `sqrt(sum (x - mean)^2) / (N - 1)`, the square root taken over the sum only.
    RootOfSum,
}

pub fn field_stats(s: &ScalarField) -> Result<FieldStats> {
    field_stats_with(s, StdEstimator::Sample)
}

pub fn field_stats_with(s: &ScalarField, estimator: StdEstimator) -> Result<FieldStats> {
    let n = s.values().len();
    if n < 2 {
        return Err(Error::DegenerateDomain);
    }
    let mean = s.sum() / n as f64;
    let ss: f64 = s.values().iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = match estimator {
        StdEstimator::Sample => (ss / (n - 1) as f64).sqrt(),
        StdEstimator::RootOfSum => ss.sqrt() / (n - 1) as f64,
    };
    Ok(FieldStats {
        mean,
        std,
        min: s.min(),
        max: s.max(),
    })
}
