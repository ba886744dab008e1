//! Finite-difference exterior calculus for su(2)-valued forms.
//!
//! Derivatives use second-order central differences, switching to
//! second-order one-sided stencils where a neighbour is missing. The
//! codifferential is the exact transpose of the covariant derivative with
//! respect to the metric-weighted quadrature, so summation by parts holds to
//! rounding error on every grid.

use crate::algebra::Su2;

use super::forms::{lower_1form, raise_1form, star2_at, FormField};
use super::grid::Grid;
use super::metric::MetricField;
use super::GeometryError;

const EPS: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// `∂_axis f` at `idx`.
#[inline]
pub fn deriv_at(grid: &Grid, idx: usize, axis: usize, f: impl Fn(usize) -> Su2) -> Su2 {
    let mut t = [(0usize, 0.0f64); 3];
    let k = grid.taps(idx, axis, &mut t);
    let mut s = Su2::ZERO;
    for &(j, c) in &t[..k] {
        s += f(j).scale(c);
    }
    s
}

/// Transpose of [`deriv_at`] evaluated at `idx`.
#[inline]
pub fn deriv_t_at(grid: &Grid, idx: usize, axis: usize, f: impl Fn(usize) -> Su2) -> Su2 {
    let mut t = [(0usize, 0.0f64); 5];
    let k = grid.transpose_taps(idx, axis, &mut t);
    let mut s = Su2::ZERO;
    for &(j, c) in &t[..k] {
        s += f(j).scale(c);
    }
    s
}

/// Real-valued derivative.
#[inline]
pub fn deriv_real_at(grid: &Grid, idx: usize, axis: usize, f: impl Fn(usize) -> f64) -> f64 {
    let mut t = [(0usize, 0.0f64); 3];
    let k = grid.taps(idx, axis, &mut t);
    t[..k].iter().map(|&(j, c)| c * f(j)).sum()
}

/// `d_A f` for a 0-form at `idx`, given `A` at `idx`.
#[inline]
pub fn d0_at(grid: &Grid, idx: usize, a: [Su2; 3], f: impl Fn(usize) -> Su2) -> [Su2; 3] {
    let fi = f(idx);
    let mut out = [Su2::ZERO; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = deriv_at(grid, idx, k, &f) + a[k].bracket(fi);
    }
    out
}

/// `d_A a` for a 1-form at `idx` (dual-index components), given `A` at `idx`.
#[inline]
pub fn d1_at(grid: &Grid, idx: usize, a: [Su2; 3], f: impl Fn(usize, usize) -> Su2) -> [Su2; 3] {
    let fi = [f(idx, 0), f(idx, 1), f(idx, 2)];
    let mut out = [Su2::ZERO; 3];
    for &(m, j, k) in &EPS {
        out[m] = deriv_at(grid, idx, j, |p| f(p, k)) - deriv_at(grid, idx, k, |p| f(p, j)) + a[j].bracket(fi[k])
            - a[k].bracket(fi[j]);
    }
    out
}

/// `F_A = dA + ½[A∧A]` at `idx` (dual-index components).
#[inline]
pub fn curvature_at(grid: &Grid, idx: usize, a: impl Fn(usize, usize) -> Su2) -> [Su2; 3] {
    let ai = [a(idx, 0), a(idx, 1), a(idx, 2)];
    let mut out = [Su2::ZERO; 3];
    for &(m, j, k) in &EPS {
        out[m] = deriv_at(grid, idx, j, |p| a(p, k)) - deriv_at(grid, idx, k, |p| a(p, j)) + ai[j].bracket(ai[k]);
    }
    out
}

fn check_connection(grid: &Grid, a: &FormField) -> Result<(), GeometryError> {
    a.check_on(grid)?;
    if a.degree != 1 {
        return Err(GeometryError::DegreeUnsupported(a.degree));
    }
    Ok(())
}

/// Covariant exterior derivative `d_A f` of a 0- or 1-form.
pub fn covariant_d(grid: &Grid, a: &FormField, f: &FormField) -> Result<FormField, GeometryError> {
    check_connection(grid, a)?;
    f.check_on(grid)?;
    match f.degree {
        0 => Ok(FormField::from_fn(grid, 1, |i| d0_at(grid, i, a.triple(i), |p| f.values[p]))),
        1 => Ok(FormField::from_fn(grid, 2, |i| d1_at(grid, i, a.triple(i), |p, c| f.values[3 * p + c]))),
        d => Err(GeometryError::DegreeUnsupported(d)),
    }
}

/// Curvature 2-form of a connection.
pub fn curvature(grid: &Grid, a: &FormField) -> Result<FormField, GeometryError> {
    check_connection(grid, a)?;
    Ok(FormField::from_fn(grid, 2, |i| curvature_at(grid, i, |p, c| a.values[3 * p + c])))
}

/// Exact discrete adjoint of [`covariant_d`] under the metric quadrature.
pub fn codifferential(grid: &Grid, a: &FormField, f: &FormField, metric: &MetricField) -> Result<FormField, GeometryError> {
    check_connection(grid, a)?;
    f.check_on(grid)?;
    match f.degree {
        1 => Ok(codiff1(grid, a, f, metric)),
        2 => Ok(codiff2(grid, a, f, metric)),
        d => Err(GeometryError::DegreeUnsupported(d)),
    }
}

pub(crate) fn codiff1(grid: &Grid, a: &FormField, v: &FormField, metric: &MetricField) -> FormField {
    let raised = if metric.is_flat() {
        v.clone()
    } else {
        FormField::from_fn(grid, 1, |i| raise_1form(metric, i, v.triple(i)))
    };
    FormField::from_fn(grid, 0, |j| {
        let vj = raised.triple(j);
        let aj = a.triple(j);
        let mut s = Su2::ZERO;
        for k in 0..3 {
            s += deriv_t_at(grid, j, k, |p| raised.values[3 * p + k]) - aj[k].bracket(vj[k]);
        }
        let r = s.scale(1.0 / metric.vol(j));
        [r, Su2::ZERO, Su2::ZERO]
    })
}

pub(crate) fn codiff2(grid: &Grid, a: &FormField, c: &FormField, metric: &MetricField) -> FormField {
    let lowered = if metric.is_flat() {
        c.clone()
    } else {
        FormField::from_fn(grid, 1, |i| star2_at(metric, i, c.triple(i)))
    };
    FormField::from_fn(grid, 1, |j| {
        let cj = lowered.triple(j);
        let aj = a.triple(j);
        let mut t = [Su2::ZERO; 3];
        for &(m, jj, k) in &EPS {
            // (d_A a)^m contains +D_jj a_k + A_jj×a_k and −D_k a_jj − A_k×a_jj.
            t[k] += deriv_t_at(grid, j, jj, |p| lowered.values[3 * p + m]) + cj[m].bracket(aj[jj]);
            t[jj] -= deriv_t_at(grid, j, k, |p| lowered.values[3 * p + m]) + cj[m].bracket(aj[k]);
        }
        lower_1form(metric, j, t)
    })
}
