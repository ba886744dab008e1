//! The linearized Bogomolny operator `d₂`, the gauge operator `d₁`, their
//! adjoints, the variational energy and conjugate-gradient solves of
//! `d₂d₂*u = f`.
//!
//! All adjoints are exact with respect to the metric-weighted midpoint
//! quadrature, so the discrete gradient of the energy is exactly
//! `d₂d₂*u − f`.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::Su2;
use crate::geometry::forms::{l2_inner, star1_at, FormField};
use crate::geometry::grid::Grid;
use crate::geometry::metric::MetricField;
use crate::geometry::ops::{codifferential, covariant_d};
use crate::geometry::GeometryError;
use crate::gluing::{GlueSite, LogCutoff, SampledPair};
use crate::spectral::Fft3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("error gate failed: ‖w e₀‖ = {norm:.4e} exceeds δ = {delta:.4e}")]
    GateFailed { norm: f64, delta: f64 },
    #[error("no convergence after {iterations} iterations (relative gradient {relative_gradient:.3e})")]
    NoConvergence { iterations: usize, relative_gradient: f64 },
    #[error("transverse coercivity m̄²/4 − sup|Ric| = {coercivity:.4} does not exceed 1")]
    MassTooSmall { coercivity: f64 },
    #[error("weight exponent {alpha} is an indicial root of the cross-section Laplacian")]
    ExcludedWeight { alpha: f64 },
    #[error("patching contraction factor {factor:.4} is not below 1")]
    ContractionFailed { factor: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Indicial roots excluded as longitudinal weights: for each spherical mode `ℓ`
/// the homogeneous growth rates are `ℓ` and `−ℓ−1`, so every integer up to the
/// tabulated order is excluded.
pub const INDICIAL_ROOTS: [f64; 17] =
    [-8.0, -7.0, -6.0, -5.0, -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];

/// Linearization of the Bogomolny map at a sampled pair.
pub struct LinearizedOperator<'a> {
    pub grid: &'a Grid,
    pub metric: &'a MetricField,
    pub background: &'a SampledPair,
    stencil: Option<Stencil>,
}

const EPS: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// Precomputed neighbours for flat metrics. At a regular node both the
/// derivative and its transpose are the plain central difference (up to sign),
/// so the generic tap search is skipped.
struct Stencil {
    nb: Vec<[u32; 6]>,
    regular: Vec<bool>,
    inv2h: f64,
}

impl Stencil {
    fn new(grid: &Grid) -> Self {
        let mut nb = vec![[0u32; 6]; grid.len()];
        let mut regular = vec![false; grid.len()];
        for i in 0..grid.len() {
            if !grid.active[i] {
                continue;
            }
            let mut ok = true;
            for ax in 0..3 {
                for (slot, step) in [(2 * ax, 1isize), (2 * ax + 1, -1)] {
                    match grid.neighbor(i, ax, step) {
                        Some(j) => nb[i][slot] = j as u32,
                        None => ok = false,
                    }
                }
                // Nodes two steps away must themselves use central taps, or their
                // one-sided stencils reach back to this node.
                ok &= [-3isize, -2, 2, 3].iter().all(|&s| grid.neighbor(i, ax, s).is_some());
            }
            regular[i] = ok;
        }
        Stencil { nb, regular, inv2h: 0.5 / grid.h }
    }

    #[inline]
    fn d(&self, grid: &Grid, i: usize, ax: usize, f: impl Fn(usize) -> Su2) -> Su2 {
        if self.regular[i] {
            let n = self.nb[i];
            (f(n[2 * ax] as usize) - f(n[2 * ax + 1] as usize)).scale(self.inv2h)
        } else {
            crate::geometry::ops::deriv_at(grid, i, ax, f)
        }
    }

    #[inline]
    fn dt(&self, grid: &Grid, i: usize, ax: usize, f: impl Fn(usize) -> Su2) -> Su2 {
        if self.regular[i] {
            let n = self.nb[i];
            (f(n[2 * ax + 1] as usize) - f(n[2 * ax] as usize)).scale(self.inv2h)
        } else {
            crate::geometry::ops::deriv_t_at(grid, i, ax, f)
        }
    }
}

fn pair_fn(grid: &Grid, mut f: impl FnMut(usize) -> ([Su2; 3], Su2)) -> SampledPair {
    let mut out = SampledPair::zeros(grid.len());
    for i in 0..grid.len() {
        if grid.active[i] {
            let (a, p) = f(i);
            out.a.values[3 * i..3 * i + 3].copy_from_slice(&a);
            out.phi.values[i] = p;
        }
    }
    out
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(grid: &'a Grid, metric: &'a MetricField, background: &'a SampledPair) -> Result<Self, LinearError> {
        background.a.check_on(grid)?;
        background.phi.check_on(grid)?;
        let stencil = metric.is_flat().then(|| Stencil::new(grid));
        Ok(LinearizedOperator { grid, metric, background, stencil })
    }

    fn phi0(&self, i: usize) -> Su2 {
        self.background.phi.values[i]
    }

    /// `d₁ξ = (−d_Aξ, −[Φ, ξ])`.
    pub fn apply_d1(&self, xi: &FormField) -> SampledPair {
        let d = covariant_d(self.grid, &self.background.a, xi).expect("shapes checked");
        pair_fn(self.grid, |i| {
            let t = d.triple(i);
            ([-t[0], -t[1], -t[2]], -self.phi0(i).bracket(xi.values[i]))
        })
    }

    /// `d₁*(a, φ) = −d_A*a + [Φ, φ]`, the exact adjoint of [`Self::apply_d1`].
    pub fn apply_d1_star(&self, v: &SampledPair) -> FormField {
        let c = codifferential(self.grid, &self.background.a, &v.a, self.metric).expect("shapes checked");
        FormField::from_fn(self.grid, 0, |i| [self.phi0(i).bracket(v.phi.values[i]) - c.values[i], Su2::ZERO, Su2::ZERO])
    }

    /// `d₂(a, φ) = ∗d_A a − d_Aφ − [a, Φ]`.
    pub fn apply_d2(&self, v: &SampledPair) -> FormField {
        if let Some(st) = &self.stencil {
            return self.d2_flat(st, v);
        }
        let da = covariant_d(self.grid, &self.background.a, &v.a).expect("shapes checked");
        let dphi = covariant_d(self.grid, &self.background.a, &v.phi).expect("shapes checked");
        FormField::from_fn(self.grid, 1, |i| {
            let s = crate::geometry::forms::star2_at(self.metric, i, da.triple(i));
            let dp = dphi.triple(i);
            let ai = v.a.triple(i);
            let p = self.phi0(i);
            [0, 1, 2].map(|k| s[k] - dp[k] - ai[k].bracket(p))
        })
    }

    /// `d₂*u = (∗d_A u + [u, Φ], −d_A*u)`, the exact adjoint of [`Self::apply_d2`].
    pub fn apply_d2_star(&self, u: &FormField) -> SampledPair {
        if let Some(st) = &self.stencil {
            return self.d2_star_flat(st, u);
        }
        let starred = FormField::from_fn(self.grid, 2, |i| star1_at(self.metric, i, u.triple(i)));
        let curl = codifferential(self.grid, &self.background.a, &starred, self.metric).expect("shapes checked");
        let div = codifferential(self.grid, &self.background.a, u, self.metric).expect("shapes checked");
        pair_fn(self.grid, |i| {
            let c = curl.triple(i);
            let ui = u.triple(i);
            let p = self.phi0(i);
            ([0, 1, 2].map(|k| c[k] + ui[k].bracket(p)), -div.values[i])
        })
    }

    fn d2_flat(&self, st: &Stencil, v: &SampledPair) -> FormField {
        let grid = self.grid;
        let bg = &self.background.a.values;
        let a = &v.a.values;
        let phi = &v.phi.values;
        FormField::from_fn(grid, 1, |i| {
            let ai = [a[3 * i], a[3 * i + 1], a[3 * i + 2]];
            let bi = [bg[3 * i], bg[3 * i + 1], bg[3 * i + 2]];
            let p = self.phi0(i);
            let ph = phi[i];
            let mut out = [Su2::ZERO; 3];
            for &(m, j, k) in &EPS {
                out[m] += st.d(grid, i, j, |q| a[3 * q + k]) - st.d(grid, i, k, |q| a[3 * q + j])
                    + bi[j].bracket(ai[k])
                    - bi[k].bracket(ai[j]);
            }
            for k in 0..3 {
                out[k] -= st.d(grid, i, k, |q| phi[q]) + bi[k].bracket(ph) + ai[k].bracket(p);
            }
            out
        })
    }

    fn d2_star_flat(&self, st: &Stencil, u: &FormField) -> SampledPair {
        let grid = self.grid;
        let bg = &self.background.a.values;
        let uv = &u.values;
        pair_fn(grid, |i| {
            let ui = [uv[3 * i], uv[3 * i + 1], uv[3 * i + 2]];
            let bi = [bg[3 * i], bg[3 * i + 1], bg[3 * i + 2]];
            let p = self.phi0(i);
            let mut t = [Su2::ZERO; 3];
            for &(m, j, k) in &EPS {
                t[k] += st.dt(grid, i, j, |q| uv[3 * q + m]) + ui[m].bracket(bi[j]);
                t[j] -= st.dt(grid, i, k, |q| uv[3 * q + m]) + ui[m].bracket(bi[k]);
            }
            let mut div = Su2::ZERO;
            for k in 0..3 {
                t[k] += ui[k].bracket(p);
                div += st.dt(grid, i, k, |q| uv[3 * q + k]) - bi[k].bracket(ui[k]);
            }
            (t, -div)
        })
    }

    /// `D = d₂ ⊕ d₁*`.
    pub fn apply_big_d(&self, v: &SampledPair) -> (FormField, FormField) {
        (self.apply_d2(v), self.apply_d1_star(v))
    }

    /// `d₂d₂*u`.
    pub fn normal(&self, u: &FormField) -> FormField {
        self.apply_d2(&self.apply_d2_star(u))
    }

    /// `E(u) = ½∫|d₂*u|² − ⟨u, f⟩`.
    pub fn energy(&self, u: &FormField, f: &FormField) -> f64 {
        let v = self.apply_d2_star(u);
        0.5 * pair_inner(self.grid, self.metric, &v, &v) - l2_inner(self.grid, self.metric, u, f)
    }

    /// Background Higgs magnitude per node.
    pub fn higgs_magnitude(&self) -> Vec<f64> {
        self.background.phi.values.iter().map(|p| p.norm()).collect()
    }
}

pub fn pair_inner(grid: &Grid, metric: &MetricField, x: &SampledPair, y: &SampledPair) -> f64 {
    l2_inner(grid, metric, &x.a, &y.a) + l2_inner(grid, metric, &x.phi, &y.phi)
}

pub fn pair_norm(grid: &Grid, metric: &MetricField, x: &SampledPair) -> f64 {
    pair_inner(grid, metric, x, x).max(0.0).sqrt()
}

pub fn pair_axpy(y: &mut SampledPair, a: f64, x: &SampledPair) {
    y.a.axpy(a, &x.a);
    y.phi.axpy(a, &x.phi);
}

/// Pointwise scaling of a pair by a real function of the node.
pub fn pair_scaled(x: &SampledPair, s: impl Fn(usize) -> f64) -> SampledPair {
    SampledPair { a: x.a.weighted(&s), phi: x.phi.weighted(&s) }
}

fn norm_of(grid: &Grid, metric: &MetricField, u: &FormField) -> f64 {
    fast_inner(grid, metric, u, u).max(0.0).sqrt()
}

/// [`l2_inner`] with a shortcut for flat metrics (inactive nodes hold zero).
fn fast_inner(grid: &Grid, metric: &MetricField, x: &FormField, y: &FormField) -> f64 {
    if metric.is_flat() {
        x.dot(y) * grid.cell_volume()
    } else {
        l2_inner(grid, metric, x, y)
    }
}

fn masked(u: &FormField, mask: Option<&[bool]>) -> FormField {
    let mut v = u.clone();
    if let Some(m) = mask {
        v.restrict(m);
    }
    v
}

/// Preconditioner for the conjugate-gradient solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Preconditioner {
    None,
    /// Periodic FFT inverse of the flat wide-stencil Laplacian, shifted by
    /// `longitudinal` on the Higgs-parallel part and by the typical `|Φ|²`
    /// on the transverse part. Torus grids with a flat metric only.
    Spectral { longitudinal: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig { tol: 1e-8, max_iter: 5000, preconditioner: Preconditioner::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_gradient: f64,
    /// Energy after each iteration, starting with the initial guess.
    pub energy_trace: Vec<f64>,
    pub gradient_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub u: FormField,
    pub report: CgReport,
}

/// Gate mirroring the smallness hypothesis on the Bogomolny error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorGate {
    /// `‖w e₀‖_{L³}` of the background.
    pub error_norm: f64,
    pub delta: f64,
}

impl ErrorGate {
    pub fn check(&self) -> Result<(), LinearError> {
        if self.error_norm <= self.delta {
            Ok(())
        } else {
            Err(LinearError::GateFailed { norm: self.error_norm, delta: self.delta })
        }
    }
}

struct SpectralPrecond {
    fft: Fft3,
    symbol: Vec<f64>,
    shift_long: f64,
    shift_trans: f64,
    axis: Vec<Option<Su2>>,
    active: Vec<bool>,
}

impl SpectralPrecond {
    fn new(op: &LinearizedOperator, longitudinal: f64) -> Result<Self, LinearError> {
        let grid = op.grid;
        if grid.period.is_none() || !op.metric.is_flat() {
            return Err(LinearError::InvalidInput("spectral preconditioner needs a flat torus".into()));
        }
        let n = grid.n;
        let h = grid.h;
        let axis_sym = |m: usize| -> Vec<f64> {
            (0..m).map(|k| (std::f64::consts::TAU * k as f64 / m as f64).sin().powi(2) / (h * h)).collect()
        };
        let (s0, s1, s2) = (axis_sym(n[0]), axis_sym(n[1]), axis_sym(n[2]));
        let mut symbol = Vec::with_capacity(grid.len());
        for c in &s2 {
            for b in &s1 {
                for a in &s0 {
                    symbol.push(a + b + c);
                }
            }
        }
        let mags = op.higgs_magnitude();
        let mut active_mags: Vec<f64> = (0..grid.len()).filter(|&i| grid.active[i]).map(|i| mags[i]).collect();
        active_mags.sort_by(f64::total_cmp);
        let typical = active_mags.get(active_mags.len() / 2).copied().unwrap_or(0.0);
        let tol = 1e-8 * active_mags.last().copied().unwrap_or(0.0).max(1e-300);
        let axis = (0..grid.len())
            .map(|i| {
                let p = op.background.phi.values[i];
                (p.norm() > tol && typical > 0.0).then(|| p.scale(1.0 / p.norm()))
            })
            .collect();
        Ok(SpectralPrecond {
            fft: Fft3::new(n),
            symbol,
            shift_long: longitudinal,
            shift_trans: (typical * typical).max(longitudinal),
            axis,
            active: grid.active.clone(),
        })
    }

    fn solve_component(&self, data: &mut [Complex<f64>], shift: f64) {
        self.fft.forward(data);
        for (z, s) in data.iter_mut().zip(&self.symbol) {
            *z /= s + shift;
        }
        self.fft.inverse(data);
    }

    fn apply(&self, r: &FormField) -> FormField {
        let n = self.active.len();
        let mut out = FormField::zeros(1, n);
        let mut buf = vec![Complex::default(); n];
        for (long, shift) in [(true, self.shift_long), (false, self.shift_trans)] {
            let part = |i: usize, k: usize| -> Su2 {
                let v = r.values[3 * i + k];
                match self.axis[i] {
                    Some(e) => {
                        let l = e.scale(e.inner(v));
                        if long {
                            l
                        } else {
                            v - l
                        }
                    }
                    None if long => v,
                    None => Su2::ZERO,
                }
            };
            for k in 0..3 {
                for c in 0..3 {
                    for (i, z) in buf.iter_mut().enumerate() {
                        *z = Complex::new(if self.active[i] { part(i, k).0[c] } else { 0.0 }, 0.0);
                    }
                    self.solve_component(&mut buf, shift);
                    for (i, z) in buf.iter().enumerate() {
                        if !self.active[i] {
                            continue;
                        }
                        let mut v = Su2::ZERO;
                        v.0[c] = z.re;
                        let v = match self.axis[i] {
                            Some(e) => {
                                let l = e.scale(e.inner(v));
                                if long {
                                    l
                                } else {
                                    v - l
                                }
                            }
                            None if long => v,
                            None => Su2::ZERO,
                        };
                        out.values[3 * i + k] += v;
                    }
                }
            }
        }
        out
    }
}

/// Preconditioned conjugate gradients for `M d₂d₂* M u = M f`, where `M` is
/// the optional unknown-support mask. Iterates until the relative gradient
/// `‖d₂d₂*u − f‖/‖f‖` drops below `cfg.tol`.
pub fn conjugate_gradient(
    op: &LinearizedOperator,
    f: &FormField,
    mask: Option<&[bool]>,
    cfg: &CgConfig,
    initial: Option<&FormField>,
) -> Result<CgSolution, LinearError> {
    let grid = op.grid;
    let metric = op.metric;
    f.check_on(grid)?;
    if f.degree != 1 {
        return Err(LinearError::InvalidInput(format!("right-hand side must be a 1-form, got degree {}", f.degree)));
    }
    let precond = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Spectral { longitudinal } => Some(SpectralPrecond::new(op, longitudinal)?),
    };
    // Iterates stay inside the masked subspace, so only outputs need restricting.
    let apply = |u: &FormField| {
        let mut v = op.normal(u);
        if let Some(m) = mask {
            v.restrict(m);
        }
        v
    };
    let prec = |r: &FormField| precond.as_ref().map(|p| masked(&p.apply(r), mask));
    let ip = |x: &FormField, y: &FormField| fast_inner(grid, metric, x, y);

    let b = masked(f, mask);
    let fnorm = norm_of(grid, metric, &b);
    let mut u = match initial {
        Some(u0) => masked(u0, mask),
        None => FormField::zeros(1, grid.len()),
    };
    if fnorm == 0.0 {
        let zero = FormField::zeros(1, grid.len());
        return Ok(CgSolution {
            u: zero,
            report: CgReport { iterations: 0, relative_gradient: 0.0, energy_trace: vec![0.0], gradient_trace: vec![0.0] },
        });
    }
    let mut r = b.sub(&apply(&u));
    // E(u) = −½⟨u, b⟩ − ½⟨u, r⟩ with r = b − Au.
    let energy = |u: &FormField, r: &FormField| -0.5 * ip(u, &b) - 0.5 * ip(u, r);
    let mut rel = norm_of(grid, metric, &r) / fnorm;
    let mut energy_trace = vec![energy(&u, &r)];
    let mut gradient_trace = vec![rel];
    let mut p = prec(&r).unwrap_or_else(|| r.clone());
    let mut rz = ip(&r, &p);
    let mut it = 0;
    while rel > cfg.tol {
        if it >= cfg.max_iter {
            return Err(LinearError::NoConvergence { iterations: it, relative_gradient: rel });
        }
        let ap = apply(&p);
        let pap = ip(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        u.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        it += 1;
        rel = norm_of(grid, metric, &r) / fnorm;
        energy_trace.push(energy(&u, &r));
        gradient_trace.push(rel);
        let z = prec(&r);
        let z = z.as_ref().unwrap_or(&r);
        let rz_new = ip(&r, z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pv, zv) in p.values.iter_mut().zip(&z.values) {
            *pv = *zv + pv.scale(beta);
        }
    }
    if rel > cfg.tol {
        return Err(LinearError::NoConvergence { iterations: it, relative_gradient: rel });
    }
    Ok(CgSolution { u, report: CgReport { iterations: it, relative_gradient: rel, energy_trace, gradient_trace } })
}

/// Solves `d₂d₂*u = f` after checking the error gate. `mask` restricts the
/// unknown to a subdomain with zero data outside it.
pub fn solve_d2d2star(
    op: &LinearizedOperator,
    f: &FormField,
    gate: Option<ErrorGate>,
    mask: Option<&[bool]>,
    cfg: &CgConfig,
) -> Result<CgSolution, LinearError> {
    if let Some(g) = gate {
        g.check()?;
    }
    conjugate_gradient(op, f, mask, cfg, None)
}

/// Right inverse `ξ = d₂*u` with `d₂d₂*u = f`.
pub fn right_inverse(
    op: &LinearizedOperator,
    f: &FormField,
    mask: Option<&[bool]>,
    cfg: &CgConfig,
    initial: Option<&FormField>,
) -> Result<(SampledPair, CgSolution), LinearError> {
    let sol = conjugate_gradient(op, f, mask, cfg, initial)?;
    let xi = op.apply_d2_star(&sol.u);
    Ok((xi, sol))
}

fn check_longitudinal_weight(alpha: f64) -> Result<(), LinearError> {
    if INDICIAL_ROOTS.iter().any(|r| (alpha - r).abs() < 1e-3) {
        return Err(LinearError::ExcludedWeight { alpha });
    }
    Ok(())
}

/// Solves `Δu = f` for a real function vanishing outside `mask`, using the
/// same central-difference stencils as `d₂d₂*`. Returns `u` with `−d*du = f`.
pub fn solve_longitudinal(
    grid: &Grid,
    metric: &MetricField,
    f: &[f64],
    alpha2: f64,
    mask: &[bool],
    cfg: &CgConfig,
) -> Result<(Vec<f64>, CgReport), LinearError> {
    check_longitudinal_weight(alpha2)?;
    // Scalars ride along the third su(2) axis with a zero connection.
    let zero_a = FormField::zeros(1, grid.len());
    let apply = |u: &FormField| -> FormField {
        let mut v = u.clone();
        v.restrict(mask);
        let d = covariant_d(grid, &zero_a, &v).expect("shapes checked");
        let mut out = codifferential(grid, &zero_a, &d, metric).expect("shapes checked");
        out.restrict(mask);
        out
    };
    let embed = |x: &[f64]| FormField::from_fn(grid, 0, |i| [Su2::from_u1(x[i]), Su2::ZERO, Su2::ZERO]);
    // d*d = −Δ, so solve d*d u = −f.
    let mut b = embed(f).scale(-1.0);
    b.restrict(mask);
    let ip = |x: &FormField, y: &FormField| l2_inner(grid, metric, x, y);
    let fnorm = ip(&b, &b).sqrt();
    let mut u = FormField::zeros(0, grid.len());
    let mut trace = CgReport { iterations: 0, relative_gradient: 0.0, energy_trace: vec![0.0], gradient_trace: vec![0.0] };
    if fnorm > 0.0 {
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = ip(&r, &r);
        let mut rel = 1.0;
        let mut it = 0;
        while rel > cfg.tol {
            if it >= cfg.max_iter {
                return Err(LinearError::NoConvergence { iterations: it, relative_gradient: rel });
            }
            let ap = apply(&p);
            let alpha = rr / ip(&p, &ap);
            u.axpy(alpha, &p);
            r.axpy(-alpha, &ap);
            let rr_new = ip(&r, &r);
            p = {
                let mut np = r.clone();
                np.axpy(rr_new / rr, &p);
                np
            };
            rr = rr_new;
            it += 1;
            rel = rr.sqrt() / fnorm;
            trace.energy_trace.push(-0.5 * ip(&u, &b) - 0.5 * ip(&u, &r));
            trace.gradient_trace.push(rel);
        }
        trace.iterations = it;
        trace.relative_gradient = rel;
    }
    Ok((u.values.iter().map(|v| v.0[2]).collect(), trace))
}

/// Transverse solve with zero boundary data on `mask`. Checks the coercivity
/// `m̄²/4 − sup|Ric| > 1` and reports `C = ‖u‖_{W^{2,2}}/‖f‖_{L²}`.
pub fn solve_transverse(
    op: &LinearizedOperator,
    f: &FormField,
    mean_mass: f64,
    sup_ricci: f64,
    mask: &[bool],
    cfg: &CgConfig,
) -> Result<(FormField, f64), LinearError> {
    let coercivity = mean_mass * mean_mass / 4.0 - sup_ricci;
    if coercivity <= 1.0 {
        return Err(LinearError::MassTooSmall { coercivity });
    }
    let sol = conjugate_gradient(op, f, Some(mask), cfg, None)?;
    let fnorm = norm_of(op.grid, op.metric, f);
    let c = if fnorm > 0.0 { sobolev_22(op, &sol.u) / fnorm } else { 0.0 };
    Ok((sol.u, c))
}

/// Unweighted `‖u‖ + ‖∇_A u‖ + ‖∇_A∇_A u‖` on interior nodes.
pub fn sobolev_22(op: &LinearizedOperator, u: &FormField) -> f64 {
    let grid = op.grid;
    let a = &op.background.a;
    let grad = |v: &FormField| -> Vec<FormField> {
        // ∇_j v for each direction j, as a field of the same degree.
        (0..3)
            .map(|j| {
                FormField::from_fn(grid, v.degree, |i| {
                    let mut out = [Su2::ZERO; 3];
                    for c in 0..v.ncomp() {
                        out[c] = crate::geometry::ops::deriv_at(grid, i, j, |p| v.values[p * v.ncomp() + c])
                            + a.get(i, j).bracket(v.values[i * v.ncomp() + c]);
                    }
                    out
                })
            })
            .collect()
    };
    let n0 = norm_of(grid, op.metric, u);
    let g1 = grad(u);
    let n1 = g1.iter().map(|g| l2_inner(grid, op.metric, g, g)).sum::<f64>().sqrt();
    let n2 = g1.iter().flat_map(|g| grad(g)).map(|g| l2_inner(grid, op.metric, &g, &g)).sum::<f64>().sqrt();
    n0 + n1 + n2
}

/// Settings of the patched right inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// Cutoff parameter `N`; the log cutoff ramps over `[ε/N, εN]`, clamped to `max_radius`.
    pub n: f64,
    /// Largest radius a local patch may reach.
    pub max_radius: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub cg: CgConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatchReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Geometric mean of successive residual ratios.
    pub contraction: f64,
    pub relative_residual: f64,
}

struct Patch {
    beta: Vec<f64>,
    ball: Vec<bool>,
}

fn patch_for(grid: &Grid, site: &GlueSite, cfg: &PatchConfig) -> Result<Patch, LinearError> {
    let cut = crate::gluing::cutoff_log(cfg.n, site.lambda).map_err(|e| LinearError::InvalidInput(e.to_string()))?;
    let outer = cut.outer().min(cfg.max_radius);
    let inner = (cut.inner()).min(0.5 * outer);
    let log_ratio = (outer / inner).ln();
    let clamped = LogCutoff { eps: (inner * outer).sqrt(), log_n: 0.5 * log_ratio };
    let mut beta = vec![0.0; grid.len()];
    let mut ball = vec![false; grid.len()];
    let reach = outer + 2.5 * grid.h;
    let interior = grid.interior_mask();
    for i in 0..grid.len() {
        if !interior[i] {
            continue;
        }
        let r = grid.distance(grid.point(i), site.position);
        beta[i] = clamped.value(r);
        ball[i] = r < reach;
    }
    Ok(Patch { beta, ball })
}

/// Patched right inverse of `d₂`: local solves on balls around each glue site
/// and an exterior solve, blended with log cutoffs `β_j`, then refined by the
/// Neumann iteration `ξ ← ξ + F(f − d₂ξ)` until `‖f − d₂ξ‖/‖f‖ < tol`.
pub fn patched_right_inverse(
    op: &LinearizedOperator,
    f: &FormField,
    sites: &[GlueSite],
    cfg: &PatchConfig,
) -> Result<(SampledPair, PatchReport), LinearError> {
    let grid = op.grid;
    let patches: Vec<Patch> = sites.iter().map(|s| patch_for(grid, s, cfg)).collect::<Result<_, _>>()?;
    let total_beta: Vec<f64> = (0..grid.len()).map(|i| patches.iter().map(|p| p.beta[i]).sum::<f64>()).collect();
    if total_beta.iter().any(|&b| b > 1.0 + 1e-12) {
        return Err(LinearError::InvalidInput("patches overlap; lower max_radius".into()));
    }
    // Exterior unknowns live where the exterior weight reaches within two stencil widths.
    let ext_weight: Vec<f64> = total_beta.iter().map(|b| 1.0 - b).collect();
    let interior = grid.interior_mask();
    let mut ext_mask = vec![false; grid.len()];
    for i in 0..grid.len() {
        if interior[i] && ext_weight[i] > 0.0 {
            ext_mask[i] = true;
            for ax in 0..3 {
                for s in [-2isize, -1, 1, 2] {
                    if let Some(j) = grid.neighbor(i, ax, s).filter(|&j| interior[j]) {
                        ext_mask[j] = true;
                    }
                }
            }
        }
    }
    let fnorm = norm_of(grid, op.metric, f);
    let mut xi = SampledPair::zeros(grid.len());
    if fnorm == 0.0 {
        return Ok((xi, PatchReport { iterations: 0, residual_history: vec![0.0], contraction: 0.0, relative_residual: 0.0 }));
    }
    let apply_f = |g: &FormField| -> Result<SampledPair, LinearError> {
        let mut out = SampledPair::zeros(grid.len());
        for p in &patches {
            if p.beta.iter().all(|&b| b == 0.0) {
                continue;
            }
            let (local, _) = right_inverse(op, g, Some(&p.ball), &cfg.cg, None)?;
            pair_axpy(&mut out, 1.0, &pair_scaled(&local, |i| p.beta[i]));
        }
        let (ext, _) = right_inverse(op, g, Some(&ext_mask), &cfg.cg, None)?;
        pair_axpy(&mut out, 1.0, &pair_scaled(&ext, |i| ext_weight[i]));
        Ok(out)
    };
    let mut residual = f.clone();
    residual.restrict(&interior);
    let mut history = vec![1.0];
    let mut it = 0;
    while *history.last().unwrap() > cfg.tol && it < cfg.max_iter {
        let step = apply_f(&residual)?;
        pair_axpy(&mut xi, 1.0, &step);
        // d₂ξ is only prescribed on interior nodes; the boundary layer is not part of the equation.
        residual = f.sub(&op.apply_d2(&xi));
        residual.restrict(&interior);
        history.push(norm_of(grid, op.metric, &residual) / fnorm);
        it += 1;
        let k = history.len();
        if k >= 3 && history[k - 1] >= history[k - 2] {
            return Err(LinearError::ContractionFailed { factor: history[k - 1] / history[k - 2] });
        }
    }
    let contraction = geometric_ratio(&history);
    if contraction >= 1.0 {
        return Err(LinearError::ContractionFailed { factor: contraction });
    }
    let relative_residual = *history.last().unwrap();
    Ok((xi, PatchReport { iterations: it, residual_history: history, contraction, relative_residual }))
}

fn geometric_ratio(history: &[f64]) -> f64 {
    // Skip the first step, whose ratio reflects how well F approximates the
    // inverse on the data rather than the asymptotic remainder.
    let tail: Vec<f64> = history.iter().copied().skip(1).filter(|&v| v > 0.0).collect();
    if tail.len() < 2 {
        return history.get(1).copied().unwrap_or(0.0);
    }
    (tail[tail.len() - 1] / tail[0]).powf(1.0 / (tail.len() - 1) as f64)
}

/// Reduced model of the patching remainder across one neck.
///
/// In `s = log(r/ε)` a spherical mode of the longitudinal sector becomes the
/// translation-invariant first-order operator `D = ∂_s + μ` with
/// `DD* = −∂_s² + μ²`. The inner patch is `s ≤ log N` and the outer patch
/// `s ≥ −log N`, each with a Dirichlet solve for `DD*`; `β` is the log
/// cutoff, linear in `s` between the two patch edges. The returned report is
/// the Neumann iteration of the patched inverse on this model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeckModel {
    pub n: f64,
    /// Mode rates `μ = ℓ + ½` for `ℓ = 0..modes`.
    pub modes: usize,
    /// Grid points per unit of `s`.
    pub resolution: usize,
    /// Extra length beyond each patch edge.
    pub margin: f64,
}

impl NeckModel {
    pub fn new(n: f64) -> Self {
        NeckModel { n, modes: 3, resolution: 64, margin: 8.0 }
    }

    /// `(1 − e^{−2μL})/(2μL)` with `L = 2 log N`: the remainder norm of the
    /// continuum model on mode `μ`.
    pub fn exact_factor(&self, mu: f64) -> f64 {
        let l = 2.0 * self.n.ln();
        (1.0 - (-2.0 * mu * l).exp()) / (2.0 * mu * l)
    }

    /// Measured contraction per mode, from the Neumann iteration on the
    /// discretized model started at a random datum.
    pub fn measure(&self, seed: u64) -> Result<Vec<f64>, LinearError> {
        use rand::{Rng, SeedableRng};
        if self.n <= std::f64::consts::E {
            return Err(LinearError::InvalidInput(format!("cutoff parameter N = {} must exceed e", self.n)));
        }
        let half = self.n.ln();
        let s0 = -half - self.margin;
        let s1 = half + self.margin;
        let m = ((s1 - s0) * self.resolution as f64).round() as usize;
        let ds = (s1 - s0) / m as f64;
        // Staggered discretization: ξ on nodes, D maps nodes to cells.
        let s_node = |i: usize| s0 + i as f64 * ds;
        let s_cell = |i: usize| s0 + (i as f64 + 0.5) * ds;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.modes);
        for l in 0..self.modes {
            let mu = l as f64 + 0.5;
            // D u on cells: (u_{i+1} − u_i)/ds + μ (u_i + u_{i+1})/2; D* is its transpose.
            let d = |u: &[f64]| -> Vec<f64> {
                (0..m).map(|i| (u[i + 1] - u[i]) / ds + mu * 0.5 * (u[i] + u[i + 1])).collect()
            };
            let dt = |v: &[f64]| -> Vec<f64> {
                let mut u = vec![0.0; m + 1];
                for i in 0..m {
                    u[i] += -v[i] / ds + mu * 0.5 * v[i];
                    u[i + 1] += v[i] / ds + mu * 0.5 * v[i];
                }
                u
            };
            // Dirichlet solve of D D* w = g with w on the cells strictly inside
            // (lo, hi) and zero elsewhere; D D* is tridiagonal.
            let p = -1.0 / ds + 0.5 * mu;
            let q = 1.0 / ds + 0.5 * mu;
            let solve = |g: &[f64], lo: f64, hi: f64| -> Vec<f64> {
                let idx: Vec<usize> = (0..m).filter(|&i| s_cell(i) > lo && s_cell(i) < hi).collect();
                let k = idx.len();
                let mut b = vec![p * p + q * q; k];
                let c = p * q;
                let mut rhs: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
                for t in 1..k {
                    let w = c / b[t - 1];
                    b[t] -= w * c;
                    rhs[t] -= w * rhs[t - 1];
                }
                let mut x = vec![0.0; k];
                for t in (0..k).rev() {
                    x[t] = (rhs[t] - if t + 1 < k { c * x[t + 1] } else { 0.0 }) / b[t];
                }
                let mut w = vec![0.0; m];
                for (t, &i) in idx.iter().enumerate() {
                    w[i] = x[t];
                }
                w
            };
            let apply_f = |g: &[f64]| -> Vec<f64> {
                let inner = dt(&solve(g, s0, half));
                let outer = dt(&solve(g, -half, s1));
                (0..=m)
                    .map(|i| {
                        let b = ((half - s_node(i)) / (2.0 * half)).clamp(0.0, 1.0);
                        b * inner[i] + (1.0 - b) * outer[i]
                    })
                    .collect()
            };
            // Data supported well inside both patches.
            let mut f: Vec<f64> = (0..m)
                .map(|i| {
                    let s = s_cell(i);
                    if s.abs() < half {
                        rng.gen_range(-1.0..1.0) * (-(s * s)).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() * ds).sqrt();
            let f0 = norm(&f);
            f.iter_mut().for_each(|x| *x /= f0);
            let mut xi = vec![0.0; m + 1];
            let mut res = f.clone();
            let mut hist = vec![1.0];
            for _ in 0..12 {
                let step = apply_f(&res);
                xi.iter_mut().zip(&step).for_each(|(x, s)| *x += s);
                let dxi = d(&xi);
                res = f.iter().zip(&dxi).map(|(a, b)| a - b).collect();
                hist.push(norm(&res));
                if *hist.last().unwrap() < 1e-13 {
                    break;
                }
            }
            out.push(geometric_ratio(&hist));
        }
        Ok(out)
    }

    /// The largest measured mode factor.
    pub fn contraction(&self, seed: u64) -> Result<f64, LinearError> {
        Ok(self.measure(seed)?.into_iter().fold(0.0, f64::max))
    }
}
