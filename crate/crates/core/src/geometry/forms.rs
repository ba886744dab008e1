use crate::algebra::Su2;

use super::grid::Grid;
use super::metric::{matvec, MetricField};
use super::GeometryError;

/// su(2)-valued differential form sampled on a grid.
///
/// Degree 0 stores one element per point; degrees 1 and 2 store three, with
/// 2-forms indexed by their Hodge-dual direction (`dx₂∧dx₃ ↦ 0`, `dx₃∧dx₁ ↦ 1`,
/// `dx₁∧dx₂ ↦ 2`). Inactive points hold zero and are never read by stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct FormField {
    pub degree: u8,
    pub values: Vec<Su2>,
}

/// Connection coefficients `A = Σ A_k dx_k`.
pub type ConnectionField = FormField;

pub fn ncomp(degree: u8) -> usize {
    if degree == 0 {
        1
    } else {
        3
    }
}

impl FormField {
    pub fn zeros(degree: u8, points: usize) -> Self {
        FormField { degree, values: vec![Su2::ZERO; points * ncomp(degree)] }
    }

    /// Samples `f(point index)` into a form of the given degree; inactive points stay zero.
    pub fn from_fn(grid: &Grid, degree: u8, mut f: impl FnMut(usize) -> [Su2; 3]) -> Self {
        let nc = ncomp(degree);
        let mut out = Self::zeros(degree, grid.len());
        for i in 0..grid.len() {
            if grid.active[i] {
                let v = f(i);
                out.values[i * nc..(i + 1) * nc].copy_from_slice(&v[..nc]);
            }
        }
        out
    }

    pub fn ncomp(&self) -> usize {
        ncomp(self.degree)
    }

    pub fn points(&self) -> usize {
        self.values.len() / self.ncomp()
    }

    #[inline]
    pub fn get(&self, idx: usize, comp: usize) -> Su2 {
        self.values[idx * self.ncomp() + comp]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, comp: usize, v: Su2) {
        let nc = self.ncomp();
        self.values[idx * nc + comp] = v;
    }

    /// The three components at a point (degree ≥ 1).
    #[inline]
    pub fn triple(&self, idx: usize) -> [Su2; 3] {
        let b = idx * 3;
        [self.values[b], self.values[b + 1], self.values[b + 2]]
    }

    pub fn check_on(&self, grid: &Grid) -> Result<(), GeometryError> {
        if self.points() != grid.len() {
            return Err(GeometryError::DomainMismatch { expected: grid.len(), found: self.points() });
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        FormField { degree: self.degree, values: self.values.iter().map(|v| v.scale(s)).collect() }
    }

    pub fn axpy(&mut self, a: f64, other: &FormField) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += y.scale(a);
        }
    }

    pub fn add(&self, other: &FormField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &FormField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Pointwise Euclidean magnitude (coefficients treated as orthonormal).
    pub fn magnitude_at(&self, idx: usize) -> f64 {
        let nc = self.ncomp();
        self.values[idx * nc..(idx + 1) * nc].iter().map(|v| v.norm_sq()).sum::<f64>().sqrt()
    }

    /// Sup of pointwise magnitude over points where `mask` holds.
    pub fn sup_norm(&self, mask: &[bool]) -> f64 {
        (0..self.points()).filter(|&i| mask[i]).map(|i| self.magnitude_at(i)).fold(0.0, f64::max)
    }

    /// Zeroes every point where `mask` is false.
    pub fn restrict(&mut self, mask: &[bool]) {
        let nc = self.ncomp();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                for v in &mut self.values[i * nc..(i + 1) * nc] {
                    *v = Su2::ZERO;
                }
            }
        }
    }

    /// Multiplies each point by `w(i)`.
    pub fn weighted(&self, w: impl Fn(usize) -> f64) -> Self {
        let nc = self.ncomp();
        let mut out = self.clone();
        for i in 0..self.points() {
            let s = w(i);
            for v in &mut out.values[i * nc..(i + 1) * nc] {
                *v = v.scale(s);
            }
        }
        out
    }

    /// Flat Euclidean dot product of all coefficients (no measure).
    pub fn dot(&self, other: &FormField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.inner(*b)).sum()
    }
}

/// Pointwise metric inner product of two forms of the same degree at `idx`.
pub fn pointwise_inner(metric: &MetricField, degree: u8, idx: usize, a: &[Su2], b: &[Su2]) -> f64 {
    match degree {
        0 => a[0].inner(b[0]),
        _ if metric.is_flat() => (0..3).map(|k| a[k].inner(b[k])).sum(),
        1 => {
            let pm = metric.at(idx);
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += pm.ginv[k][l] * a[k].inner(b[l]);
                }
            }
            s
        }
        _ => {
            let pm = metric.at(idx);
            let det = pm.vol * pm.vol;
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += pm.g[k][l] * a[k].inner(b[l]);
                }
            }
            s / det
        }
    }
}

/// `∫ ⟨a, b⟩_g vol_g` by midpoint quadrature over active points.
pub fn l2_inner(grid: &Grid, metric: &MetricField, a: &FormField, b: &FormField) -> f64 {
    let nc = a.ncomp();
    let mut s = 0.0;
    for i in 0..grid.len() {
        if grid.active[i] {
            let r = i * nc..(i + 1) * nc;
            s += metric.vol(i) * pointwise_inner(metric, a.degree, i, &a.values[r.clone()], &b.values[r]);
        }
    }
    s * grid.cell_volume()
}

pub fn l2_norm(grid: &Grid, metric: &MetricField, a: &FormField) -> f64 {
    l2_inner(grid, metric, a, a).max(0.0).sqrt()
}

/// Applies the pointwise metric to a 1-form: `V_k = vol · g^{kl} v_l`.
pub(crate) fn raise_1form(metric: &MetricField, idx: usize, v: [Su2; 3]) -> [Su2; 3] {
    if metric.is_flat() {
        return v;
    }
    let pm = metric.at(idx);
    let mut out = [Su2::ZERO; 3];
    for (k, o) in out.iter_mut().enumerate() {
        for (l, vl) in v.iter().enumerate() {
            *o += vl.scale(pm.vol * pm.ginv[k][l]);
        }
    }
    out
}

/// Inverse of [`raise_1form`].
pub(crate) fn lower_1form(metric: &MetricField, idx: usize, v: [Su2; 3]) -> [Su2; 3] {
    if metric.is_flat() {
        return v;
    }
    let pm = metric.at(idx);
    let mut out = [Su2::ZERO; 3];
    for (k, o) in out.iter_mut().enumerate() {
        for (l, vl) in v.iter().enumerate() {
            *o += vl.scale(pm.g[k][l] / pm.vol);
        }
    }
    out
}

/// Pointwise Hodge star of a 2-form (dual-index components) to a 1-form:
/// `(∗β)_k = g_km b^m / √det g`.
pub fn star2_at(metric: &MetricField, idx: usize, b: [Su2; 3]) -> [Su2; 3] {
    if metric.is_flat() {
        return b;
    }
    let pm = metric.at(idx);
    let mut out = [Su2::ZERO; 3];
    for (k, o) in out.iter_mut().enumerate() {
        for (m, bm) in b.iter().enumerate() {
            *o += bm.scale(pm.g[k][m] / pm.vol);
        }
    }
    out
}

/// Pointwise Hodge star of a 1-form to a 2-form: `b^m = √det g · g^{mk} α_k`.
pub fn star1_at(metric: &MetricField, idx: usize, a: [Su2; 3]) -> [Su2; 3] {
    if metric.is_flat() {
        return a;
    }
    let pm = metric.at(idx);
    let mut out = [Su2::ZERO; 3];
    for (m, o) in out.iter_mut().enumerate() {
        for (k, ak) in a.iter().enumerate() {
            *o += ak.scale(pm.vol * pm.ginv[m][k]);
        }
    }
    out
}

/// Hodge star on whole fields: degree 2 → 1 or 1 → 2.
pub fn hodge_star(grid: &Grid, beta: &FormField, metric: &MetricField) -> Result<FormField, GeometryError> {
    beta.check_on(grid)?;
    let (deg, f): (u8, fn(&MetricField, usize, [Su2; 3]) -> [Su2; 3]) = match beta.degree {
        2 => (1, star2_at),
        1 => (2, star1_at),
        d => return Err(GeometryError::DegreeUnsupported(d)),
    };
    Ok(FormField::from_fn(grid, deg, |i| f(metric, i, beta.triple(i))))
}

/// Real-valued helper: `g_km v^m / √det g` on a plain vector (used for abelian fields).
pub fn star2_real(metric: &MetricField, idx: usize, b: [f64; 3]) -> [f64; 3] {
    if metric.is_flat() {
        return b;
    }
    let pm = metric.at(idx);
    let v = matvec(&pm.g, b);
    [v[0] / pm.vol, v[1] / pm.vol, v[2] / pm.vol]
}
