//! Abelian Dirac monopoles on the flat 3-torus.
//!
//! Conventions: a site of integer charge `k` is a source `Δφ = 2πk δ`, so the
//! Higgs field behaves like `φ ≈ m − c/r` with `c = k/2` and the flux of
//! `∗dφ` through a small sphere is `2πk`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::grid::{norm, Grid, Point};
use crate::geometry::metric::{matvec, MetricField};
use crate::geometry::ops::deriv_real_at;
use crate::geometry::GeometryError;
use crate::ramp::{smoothstep7, smoothstep7_deriv};
use crate::spectral::{solve_continuum_poisson, solve_periodic_poisson, spectral_gradient, Spectrum};

use std::f64::consts::{PI, TAU};

/// Printed in every report that depends on the charge normalization.
pub const CHARGE_CONVENTION: &str = "source 2*pi*k*delta; near field -(k/2)/r; flux 2*pi*k";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiracError {
    #[error("total charge is {total}; a periodic solution exists only when the charges sum to zero")]
    ChargeImbalance { total: i64 },
    #[error("sites {first} and {second} are {distance} apart, below the minimum {min}")]
    SitesTooClose { first: usize, second: usize, distance: f64, min: f64 },
    #[error("the global Dirac solver needs a torus domain")]
    NotTorus,
    #[error("shell fit at site {site} has residual {residual}, above tolerance {tol}")]
    FitUnstable { site: usize, residual: f64, tol: f64 },
    #[error("closed-surface flux {value} deviates from 2πℤ by {deviation} ({surface})")]
    NonIntegralClass { surface: String, value: f64, deviation: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeSite {
    pub position: Point,
    pub charge: i32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChargeConfig {
    pub sites: Vec<ChargeSite>,
}

impl ChargeConfig {
    pub fn new(sites: impl IntoIterator<Item = (Point, i32)>) -> Self {
        ChargeConfig { sites: sites.into_iter().map(|(position, charge)| ChargeSite { position, charge }).collect() }
    }

    pub fn total_charge(&self) -> i64 {
        self.sites.iter().map(|s| s.charge as i64).sum()
    }

    /// Checks charge balance and pairwise separation (minimum-image on a torus).
    pub fn validate(&self, grid: &Grid, min_separation: f64) -> Result<(), DiracError> {
        let total = self.total_charge();
        if total != 0 {
            return Err(DiracError::ChargeImbalance { total });
        }
        for (i, a) in self.sites.iter().enumerate() {
            for (j, b) in self.sites.iter().enumerate().skip(i + 1) {
                let d = grid.distance(a.position, b.position);
                if d < min_separation {
                    return Err(DiracError::SitesTooClose { first: i, second: j, distance: d, min: min_separation });
                }
            }
        }
        Ok(())
    }
}

/// A site after snapping to its nearest grid node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnappedSite {
    pub index: usize,
    pub position: Point,
    pub charge: i32,
    /// Near-field coefficient `c = k/2`.
    pub coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct DiracSolution {
    pub phi: Vec<f64>,
    pub sites: Vec<SnappedSite>,
    pub mean: f64,
}

impl DiracSolution {
    /// Adds a constant to the Higgs field (shifts every mass by the same amount).
    pub fn shifted(&self, c: f64) -> DiracSolution {
        DiracSolution { phi: self.phi.iter().map(|v| v + c).collect(), sites: self.sites.clone(), mean: self.mean + c }
    }
}

/// Solves `Δφ = Σ 2πk_i δ_{p_i}` on the torus with prescribed domain mean.
pub fn solve_dirac_higgs(grid: &Grid, cfg: &ChargeConfig, mean: f64) -> Result<DiracSolution, DiracError> {
    if grid.period.is_none() {
        return Err(DiracError::NotTorus);
    }
    cfg.validate(grid, 6.0 * grid.h)?;
    let mut rhs = vec![0.0; grid.len()];
    let cell = grid.cell_volume();
    let sites: Vec<SnappedSite> = cfg
        .sites
        .iter()
        .map(|s| {
            let index = grid.nearest_index(s.position);
            rhs[index] += TAU * s.charge as f64 / cell;
            SnappedSite { index, position: grid.point(index), charge: s.charge, coefficient: s.charge as f64 / 2.0 }
        })
        .collect();
    let phi = solve_periodic_poisson(grid.n, grid.h, &rhs, mean);
    Ok(DiracSolution { phi, sites, mean })
}

/// Radii of the blending shell used to subtract the singular part at a site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreShell {
    pub inner: f64,
    pub outer: f64,
}

impl CoreShell {
    fn t(&self, r: f64) -> f64 {
        (r - self.inner) / (self.outer - self.inner)
    }

    /// Septic plateau: 1 inside `inner`, 0 outside `outer`.
    pub fn value(&self, r: f64) -> f64 {
        1.0 - smoothstep7(self.t(r))
    }

    pub fn deriv(&self, r: f64) -> f64 {
        -smoothstep7_deriv(self.t(r)) / (self.outer - self.inner)
    }

    pub fn deriv2(&self, r: f64) -> f64 {
        let t = self.t(r);
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        -420.0 * t * t * (1.0 - t) * (1.0 - t) * (1.0 - 2.0 * t) / (self.outer - self.inner).powi(2)
    }
}

/// Dirac Higgs field with exact point singularities at unsnapped positions.
///
/// `φ = μ − Σ c_i ζ_i(r_i)/r_i + φ_R` where `ζ_i` is a [`CoreShell`] plateau and the
/// smooth remainder solves `Δφ_R = Σ c_i ζ_i''/r_i` spectrally. Sites therefore
/// need not sit on grid nodes, and the near field is exactly `m_i − c_i/r_i`
/// plus the smooth remainder.
#[derive(Debug, Clone)]
pub struct SmoothDirac {
    pub sites: Vec<ChargeSite>,
    pub shells: Vec<CoreShell>,
    pub mean: f64,
    /// `φ_R` at the grid nodes.
    pub regular: Vec<f64>,
    pub regular_gradient: Vec<[f64; 3]>,
    /// Constant term of `φ` at every site.
    pub masses: Vec<f64>,
    spectrum_origin: Point,
}

/// Solves for the singularity-subtracted Dirac field.
pub fn solve_dirac_smooth(
    grid: &Grid,
    cfg: &ChargeConfig,
    shells: &[CoreShell],
    mean: f64,
) -> Result<SmoothDirac, DiracError> {
    let Some(period) = grid.period else {
        return Err(DiracError::NotTorus);
    };
    assert_eq!(shells.len(), cfg.sites.len(), "one core shell per site");
    let min_sep = shells.iter().map(|s| s.outer).fold(0.0, f64::max) * 2.0;
    cfg.validate(grid, min_sep.max(6.0 * grid.h))?;
    let mut rhs = vec![0.0; grid.len()];
    for (s, sh) in cfg.sites.iter().zip(shells) {
        let c = s.charge as f64 / 2.0;
        for (i, v) in rhs.iter_mut().enumerate() {
            let r = grid.distance(grid.point(i), s.position);
            if r < sh.outer && r > sh.inner {
                *v += c * sh.deriv2(r) / r;
            }
        }
    }
    let regular = solve_continuum_poisson(grid.n, period, &rhs);
    let regular_gradient = spectral_gradient(grid.n, period, &regular);
    let mut out = SmoothDirac {
        sites: cfg.sites.clone(),
        shells: shells.to_vec(),
        mean,
        regular,
        regular_gradient,
        masses: Vec::new(),
        spectrum_origin: grid.origin,
    };
    let spec = Spectrum::from_values(grid.n, period, out.spectrum_origin, &out.regular);
    out.masses = cfg
        .sites
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let singular: f64 = (0..cfg.sites.len())
                .filter(|&j| j != i)
                .map(|j| out.singular_value(grid, j, s.position))
                .sum();
            mean + spec.eval_with_gradient(s.position).0 + singular
        })
        .collect();
    Ok(out)
}

impl SmoothDirac {
    fn singular_value(&self, grid: &Grid, j: usize, x: Point) -> f64 {
        let s = &self.sites[j];
        let r = grid.distance(x, s.position);
        let sh = &self.shells[j];
        if r >= sh.outer {
            return 0.0;
        }
        -(s.charge as f64 / 2.0) * sh.value(r) / r
    }

    fn singular_gradient(&self, grid: &Grid, j: usize, x: Point) -> [f64; 3] {
        let s = &self.sites[j];
        let d = grid.displacement(x, s.position);
        let r = norm(d);
        let sh = &self.shells[j];
        if r >= sh.outer {
            return [0.0; 3];
        }
        // ∇(−c ζ/r) = c (ζ/r² − ζ'/r) x̂
        let c = s.charge as f64 / 2.0;
        let g = c * (sh.value(r) / (r * r) - sh.deriv(r) / r) / r;
        [g * d[0], g * d[1], g * d[2]]
    }

    /// Shifts the additive constant so that site `i` has mass `target`.
    pub fn set_mass(&mut self, i: usize, target: f64) {
        let shift = target - self.masses[i];
        self.mean += shift;
        self.masses.iter_mut().for_each(|m| *m += shift);
    }

    /// `φ` at grid node `idx`.
    pub fn value_at_node(&self, grid: &Grid, idx: usize) -> f64 {
        let x = grid.point(idx);
        self.mean + self.regular[idx] + (0..self.sites.len()).map(|j| self.singular_value(grid, j, x)).sum::<f64>()
    }

    /// `∇φ` at grid node `idx`.
    pub fn gradient_at_node(&self, grid: &Grid, idx: usize) -> [f64; 3] {
        let x = grid.point(idx);
        let mut g = self.regular_gradient[idx];
        for j in 0..self.sites.len() {
            let s = self.singular_gradient(grid, j, x);
            (0..3).for_each(|a| g[a] += s[a]);
        }
        g
    }

    /// `φ` on every node as a [`DiracSolution`] (sites snapped only for reporting).
    pub fn to_solution(&self, grid: &Grid) -> DiracSolution {
        let phi = (0..grid.len()).map(|i| self.value_at_node(grid, i)).collect();
        let sites = self
            .sites
            .iter()
            .map(|s| SnappedSite {
                index: grid.nearest_index(s.position),
                position: s.position,
                charge: s.charge,
                coefficient: s.charge as f64 / 2.0,
            })
            .collect();
        DiracSolution { phi, sites, mean: self.mean }
    }

    /// Value and gradient of the smooth remainder at arbitrary points, by
    /// trigonometric interpolation.
    pub fn regular_spectrum(&self, grid: &Grid) -> Spectrum {
        Spectrum::from_values(grid.n, grid.period.unwrap_or(1.0), self.spectrum_origin, &self.regular)
    }
}

/// `F_D = ∗dφ` as a 2-form in dual-index components.
pub fn field_strength(grid: &Grid, phi: &[f64], metric: &MetricField) -> Vec<[f64; 3]> {
    (0..grid.len())
        .map(|i| {
            let d = [0, 1, 2].map(|a| deriv_real_at(grid, i, a, |p| phi[p]));
            if metric.is_flat() {
                d
            } else {
                let pm = metric.at(i);
                matvec(&pm.ginv, d).map(|v| v * pm.vol)
            }
        })
        .collect()
}

/// Outward flux of `∗dφ` through the boundary of the node set `{|x − center| ≤ radius}`,
/// using the same differences as the 7-point Laplacian (discrete Gauss law).
pub fn staircase_flux(grid: &Grid, phi: &[f64], center: Point, radius: f64) -> f64 {
    let inside = |i: usize| grid.distance(grid.point(i), center) <= radius;
    let mut flux = 0.0;
    for i in (0..grid.len()).filter(|&i| inside(i)) {
        for a in 0..3 {
            for step in [-1isize, 1] {
                if let Some(j) = grid.neighbor(i, a, step) {
                    if !inside(j) {
                        flux += grid.h * (phi[j] - phi[i]);
                    }
                }
            }
        }
    }
    flux
}

pub(crate) fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [rho * t.cos(), rho * t.sin(), z]
        })
        .collect()
}

/// Trilinear interpolation of a vector field on a periodic grid.
pub fn interpolate_periodic(grid: &Grid, field: &[[f64; 3]], x: Point) -> [f64; 3] {
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = (x[a] - grid.origin[a]) / grid.h;
        let f = s.floor();
        base[a] = (f as isize).rem_euclid(grid.n[a] as isize) as usize;
        frac[a] = s - f;
    }
    let mut out = [0.0; 3];
    for corner in 0..8 {
        let mut c = base;
        let mut w = 1.0;
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                c[a] = (c[a] + 1) % grid.n[a];
                w *= frac[a];
            } else {
                w *= 1.0 - frac[a];
            }
        }
        let v = field[grid.index(c)];
        for a in 0..3 {
            out[a] += w * v[a];
        }
    }
    out
}

/// Flux of a 2-form through a round sphere by quadrature of the interpolated field.
pub fn sphere_flux(grid: &Grid, field: &[[f64; 3]], center: Point, radius: f64, samples: usize) -> f64 {
    let area = 4.0 * PI * radius * radius / samples as f64;
    fibonacci_sphere(samples)
        .iter()
        .map(|n| {
            let x = [center[0] + radius * n[0], center[1] + radius * n[1], center[2] + radius * n[2]];
            let b = interpolate_periodic(grid, field, x);
            (b[0] * n[0] + b[1] * n[1] + b[2] * n[2]) * area
        })
        .sum()
}

/// Three readings of the charge at one site.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteFlux {
    pub site: usize,
    pub charge: i32,
    pub radius: f64,
    /// Raw staircase flux.
    pub flux: f64,
    pub flux_over_2pi: f64,
    /// Round-sphere quadrature reading divided by 2π.
    pub sphere_over_2pi: f64,
    /// Twice the fitted near-field coefficient.
    pub two_c_fit: f64,
}

pub fn site_flux(grid: &Grid, sol: &DiracSolution, field: &[[f64; 3]], site: usize, radius: f64) -> SiteFlux {
    let s = &sol.sites[site];
    let flux = staircase_flux(grid, &sol.phi, s.position, radius);
    let sphere = sphere_flux(grid, field, s.position, radius, 2000);
    let fit = shell_fit(grid, &sol.phi, s.position, None);
    SiteFlux {
        site,
        charge: s.charge,
        radius,
        flux,
        flux_over_2pi: flux / TAU,
        sphere_over_2pi: sphere / TAU,
        two_c_fit: 2.0 * fit.coefficient,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShellFit {
    pub mass: f64,
    pub coefficient: f64,
    pub gradient: [f64; 3],
    /// RMS residual of the regression.
    pub residual: f64,
}

/// Least-squares fit of `φ ≈ m − c/r + g·(x − p)` over the shell `3h ≤ r ≤ 6h`.
/// With `coefficient = Some(c)` the pole is held fixed.
pub fn shell_fit(grid: &Grid, phi: &[f64], center: Point, coefficient: Option<f64>) -> ShellFit {
    let h = grid.h;
    let rows: Vec<(Point, f64, f64)> = (0..grid.len())
        .filter_map(|i| {
            let d = grid.displacement(grid.point(i), center);
            let r = norm(d);
            (r >= 3.0 * h - 1e-12 && r <= 6.0 * h + 1e-12).then_some((d, r, phi[i]))
        })
        .collect();
    let free = coefficient.is_none();
    let cols = if free { 5 } else { 4 };
    let mut a = DMatrix::<f64>::zeros(rows.len(), cols);
    let mut b = DVector::<f64>::zeros(rows.len());
    for (row, (d, r, v)) in rows.iter().enumerate() {
        a[(row, 0)] = 1.0;
        for k in 0..3 {
            a[(row, 1 + k)] = d[k];
        }
        match coefficient {
            Some(c) => b[row] = v + c / r,
            None => {
                a[(row, 4)] = -1.0 / r;
                b[row] = *v;
            }
        }
    }
    let sol = a.clone().svd(true, true).solve(&b, 1e-14).expect("svd solve");
    let resid = (&a * &sol - &b).norm() / (rows.len() as f64).sqrt();
    ShellFit {
        mass: sol[0],
        coefficient: if free { sol[4] } else { coefficient.unwrap_or_default() },
        gradient: [sol[1], sol[2], sol[3]],
        residual: resid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassVector {
    pub masses: Vec<f64>,
    pub average: f64,
    pub relative: Vec<f64>,
}

impl MassVector {
    pub fn from_masses(masses: Vec<f64>) -> Self {
        let average = masses.iter().sum::<f64>() / masses.len().max(1) as f64;
        let relative = masses.iter().map(|m| m - average).collect();
        MassVector { masses, average, relative }
    }
}

/// Extracts the mass `m_i` at every site from a shell regression with the pole fixed.
pub fn mass_accounting(grid: &Grid, sol: &DiracSolution) -> Result<MassVector, DiracError> {
    let fits: Vec<ShellFit> =
        sol.sites.iter().map(|s| shell_fit(grid, &sol.phi, s.position, Some(s.coefficient))).collect();
    let mv = MassVector::from_masses(fits.iter().map(|f| f.mass).collect());
    let tol = 0.1 * if mv.average.abs() > 0.0 { mv.average.abs() } else { 1.0 };
    for (site, f) in fits.iter().enumerate() {
        if f.residual > tol {
            return Err(DiracError::FitUnstable { site, residual: f.residual, tol });
        }
    }
    Ok(mv)
}

/// Radius outside which the Higgs field must exceed half the average mass.
pub fn epsilon0(mean_mass: f64) -> f64 {
    (2.0 / mean_mass).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassBoundReport {
    pub mean_mass: f64,
    pub epsilon0: f64,
    pub min_phi: f64,
    pub threshold: f64,
    pub margin: f64,
    pub witness: Point,
    pub min_site_separation: f64,
    pub passed: bool,
}

/// Checks `φ ≥ m̄/2` on the complement of the `ε₀`-balls around the sites.
pub fn check_mass_bound(grid: &Grid, sol: &DiracSolution, mean_mass: f64) -> MassBoundReport {
    let eps0 = epsilon0(mean_mass);
    let mut min_phi = f64::INFINITY;
    let mut witness = [f64::NAN; 3];
    for i in 0..grid.len() {
        let x = grid.point(i);
        if sol.sites.iter().all(|s| grid.distance(x, s.position) >= eps0) && sol.phi[i] < min_phi {
            min_phi = sol.phi[i];
            witness = x;
        }
    }
    let mut sep = f64::INFINITY;
    for (i, a) in sol.sites.iter().enumerate() {
        for b in &sol.sites[i + 1..] {
            sep = sep.min(grid.distance(a.position, b.position));
        }
    }
    let threshold = mean_mass / 2.0;
    MassBoundReport {
        mean_mass,
        epsilon0: eps0,
        min_phi,
        threshold,
        margin: min_phi - threshold,
        witness,
        min_site_separation: sep,
        passed: min_phi >= threshold && sep >= eps0,
    }
}

/// Fluxes through the plaquettes of the dual lattice (cell centres as nodes).
///
/// `values[d][a]` is the flux through the dual plaquette with lower corner `d`
/// normal to axis `a`; it is pierced by the primal link from `d + e_b + e_c`
/// along `a`, where `(a, b, c)` is cyclic.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaquetteFlux {
    pub n: [usize; 3],
    pub values: Vec<[f64; 3]>,
}

/// Link angles on the dual lattice; `values[d][a]` is the angle on the link `d → d + e_a`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkField {
    pub n: [usize; 3],
    pub values: Vec<[f64; 3]>,
}

fn cyc(a: usize) -> (usize, usize) {
    ((a + 1) % 3, (a + 2) % 3)
}

struct Lattice {
    n: [usize; 3],
}

impl Lattice {
    fn idx(&self, c: [isize; 3]) -> usize {
        let w = |v: isize, m: usize| v.rem_euclid(m as isize) as usize;
        w(c[0], self.n[0]) + self.n[0] * (w(c[1], self.n[1]) + self.n[1] * w(c[2], self.n[2]))
    }

    fn coords(&self, i: usize) -> [isize; 3] {
        [(i % self.n[0]) as isize, ((i / self.n[0]) % self.n[1]) as isize, (i / (self.n[0] * self.n[1])) as isize]
    }

    fn shift(&self, i: usize, a: usize, s: isize) -> usize {
        let mut c = self.coords(i);
        c[a] += s;
        self.idx(c)
    }
}

/// Plaquette fluxes of `∗dφ` on the dual lattice: `h (φ(i + e_a) − φ(i))`.
pub fn plaquette_fluxes(grid: &Grid, phi: &[f64]) -> PlaquetteFlux {
    let lat = Lattice { n: grid.n };
    let values = (0..grid.len())
        .map(|d| {
            [0, 1, 2].map(|a| {
                let (b, c) = cyc(a);
                let i = lat.shift(lat.shift(d, b, 1), c, 1);
                grid.h * (phi[lat.shift(i, a, 1)] - phi[i])
            })
        })
        .collect();
    PlaquetteFlux { n: grid.n, values }
}

fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

fn deviation_from_lattice(x: f64) -> f64 {
    (x - TAU * (x / TAU).round()).abs()
}

impl PlaquetteFlux {
    /// Outward flux through the six faces of the dual cube with lower corner `d`.
    pub fn cube_sum(&self, d: usize) -> f64 {
        let lat = Lattice { n: self.n };
        (0..3).map(|a| self.values[lat.shift(d, a, 1)][a] - self.values[d][a]).sum()
    }

    /// Total flux through the dual plane `d_a = s`.
    pub fn plane_sum(&self, a: usize, s: usize) -> f64 {
        let lat = Lattice { n: self.n };
        (0..self.values.len()).filter(|&d| lat.coords(d)[a] as usize == s).map(|d| self.values[d][a]).sum()
    }

    /// Adds the constant harmonic 2-form that makes the coordinate-plane periods
    /// integral multiples of 2π; returns the added per-plaquette flux for each axis.
    pub fn harmonic_period_correction(&mut self) -> [f64; 3] {
        let mut added = [0.0; 3];
        for (a, slot) in added.iter_mut().enumerate() {
            let p = self.plane_sum(a, 0);
            let (b, c) = cyc(a);
            let count = (self.n[b] * self.n[c]) as f64;
            *slot = (TAU * (p / TAU).round() - p) / count;
        }
        for v in self.values.iter_mut() {
            for a in 0..3 {
                v[a] += added[a];
            }
        }
        added
    }

    /// Verifies that every closed lattice surface carries flux in 2πℤ.
    pub fn check_integral(&self, tol: f64) -> Result<(), DiracError> {
        for d in 0..self.values.len() {
            let s = self.cube_sum(d);
            let dev = deviation_from_lattice(s);
            if dev > tol {
                return Err(DiracError::NonIntegralClass { surface: format!("dual cube {d}"), value: s, deviation: dev });
            }
        }
        for a in 0..3 {
            for s in 0..self.n[a] {
                let v = self.plane_sum(a, s);
                let dev = deviation_from_lattice(v);
                if dev > tol {
                    return Err(DiracError::NonIntegralClass {
                        surface: format!("coordinate plane {s} normal to axis {a}"),
                        value: v,
                        deviation: dev,
                    });
                }
            }
        }
        Ok(())
    }
}

impl LinkField {
    /// Oriented circulation around the dual plaquette with lower corner `d` normal to `a`.
    pub fn curl(&self, d: usize, a: usize) -> f64 {
        let lat = Lattice { n: self.n };
        let (b, c) = cyc(a);
        self.values[d][b] + self.values[lat.shift(d, b, 1)][c] - self.values[lat.shift(d, c, 1)][b] - self.values[d][c]
    }

    /// Largest deviation of the plaquette angles from the target fluxes, modulo 2π.
    pub fn plaquette_mismatch(&self, flux: &PlaquetteFlux) -> f64 {
        let mut worst: f64 = 0.0;
        for d in 0..self.values.len() {
            for a in 0..3 {
                worst = worst.max(wrap_angle(self.curl(d, a) - flux.values[d][a]).abs());
            }
        }
        worst
    }

    /// Sum of the compact plaquette angles (wrapped to (−π, π]) over the staircase
    /// surface enclosing the primal nodes within `radius` of `center`, divided by 2π.
    pub fn winding(&self, grid: &Grid, center: Point, radius: f64) -> f64 {
        let lat = Lattice { n: self.n };
        let inside = |i: usize| grid.distance(grid.point(i), center) <= radius;
        let mut total = 0.0;
        for i in (0..grid.len()).filter(|&i| inside(i)) {
            for a in 0..3 {
                let (b, c) = cyc(a);
                let d_out = lat.shift(lat.shift(i, b, -1), c, -1);
                if !inside(lat.shift(i, a, 1)) {
                    total += wrap_angle(self.curl(d_out, a));
                }
                if !inside(lat.shift(i, a, -1)) {
                    total -= wrap_angle(self.curl(lat.shift(d_out, a, -1), a));
                }
            }
        }
        total / TAU
    }
}

/// Builds compact U(1) link angles whose plaquette angles reproduce `flux` modulo 2π,
/// in the axial gauge `θ_z = 0` away from the last layer.
pub fn u1_links_from_flux(flux: &PlaquetteFlux, tol: f64) -> Result<LinkField, DiracError> {
    flux.check_integral(tol)?;
    let n = flux.n;
    let lat = Lattice { n };
    let at = |x: usize, y: usize, z: usize| lat.idx([x as isize, y as isize, z as isize]);
    let psi = |d: usize, a: usize| flux.values[d][a];
    let mut th = vec![[0.0f64; 3]; flux.values.len()];

    // Bottom layer: a 2-d problem for the x/y links.
    for x in 0..n[0] {
        for y in 0..n[1] - 1 {
            th[at(x, y + 1, 0)][0] = th[at(x, y, 0)][0] - psi(at(x, y, 0), 2);
        }
    }
    for x in 0..n[0] - 1 {
        let last = n[1] - 1;
        let d = psi(at(x, last, 0), 2) - th[at(x, last, 0)][0] + th[at(x, 0, 0)][0];
        th[at(x + 1, last, 0)][1] = th[at(x, last, 0)][1] + d;
    }
    // Carry x/y links upward through the plaquettes normal to y and x.
    for z in 0..n[2] - 1 {
        for y in 0..n[1] {
            for x in 0..n[0] {
                let d = at(x, y, z);
                let up = at(x, y, z + 1);
                th[up][0] = th[d][0] + psi(d, 1);
                th[up][1] = th[d][1] - psi(d, 0);
            }
        }
    }
    // Wrapping z-links: a discrete gradient problem on the top layer.
    let top = n[2] - 1;
    let gx = |th: &Vec<[f64; 3]>, x: usize, y: usize| {
        let d = at(x, y, top);
        th[at(x, y, 0)][0] - th[d][0] - psi(d, 1)
    };
    let gy = |th: &Vec<[f64; 3]>, x: usize, y: usize| {
        let d = at(x, y, top);
        psi(d, 0) - th[d][1] + th[at(x, y, 0)][1]
    };
    for x in 0..n[0] - 1 {
        let g = gx(&th, x, 0);
        th[at(x + 1, 0, top)][2] = th[at(x, 0, top)][2] + g;
    }
    for x in 0..n[0] {
        for y in 0..n[1] - 1 {
            let g = gy(&th, x, y);
            th[at(x, y + 1, top)][2] = th[at(x, y, top)][2] + g;
        }
    }
    for v in th.iter_mut() {
        for a in v.iter_mut() {
            *a = wrap_angle(*a);
        }
    }
    let links = LinkField { n, values: th };
    let mismatch = links.plaquette_mismatch(flux);
    if mismatch > tol {
        return Err(DiracError::NonIntegralClass {
            surface: "plaquette reconstruction".into(),
            value: mismatch,
            deviation: mismatch,
        });
    }
    Ok(links)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridDomain;

    fn pair_grid() -> Grid {
        GridDomain::torus(8.0, 32).build().unwrap()
    }

    fn pair() -> ChargeConfig {
        ChargeConfig::new([([2.0, 4.0, 4.0], 1), ([6.0, 4.0, 4.0], -1)])
    }

    #[test]
    fn smooth_field_agrees_with_lattice_green_function_away_from_sites() {
        let grid = GridDomain::torus(4.0, 32).build().unwrap();
        let h = grid.h;
        let cfg = ChargeConfig::new([([1.0 + h / 2.0, 2.0, 2.0], 2), ([3.0 + h / 2.0, 2.0, 2.0], -2)]);
        let shells = [CoreShell { inner: 0.2, outer: 0.8 }; 2];
        let smooth = solve_dirac_smooth(&grid, &cfg, &shells, 0.0).unwrap();
        // Lattice solution with sites on nodes, averaged over the half-cell offset.
        let lattice = solve_dirac_higgs(&grid, &ChargeConfig::new([([1.0, 2.0, 2.0], 2), ([3.0, 2.0, 2.0], -2)]), 0.0)
            .unwrap();
        let mut diffs = Vec::new();
        for i in 0..grid.len() {
            let x = grid.point(i);
            if cfg.sites.iter().all(|s| grid.distance(x, s.position) > 1.2) {
                let j1 = grid.nearest_index([x[0] - h, x[1], x[2]]);
                let lat = 0.5 * (lattice.phi[i] + lattice.phi[j1]);
                diffs.push(smooth.value_at_node(&grid, i) - lat);
            }
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let spread = diffs.iter().map(|d| (d - mean).abs()).fold(0.0, f64::max);
        assert!(spread < 0.02, "spread {spread}");
    }

    #[test]
    fn smooth_masses_match_shell_regression() {
        let grid = GridDomain::torus(4.0, 48).build().unwrap();
        let h = grid.h;
        let cfg = ChargeConfig::new([([1.0 + h / 2.0, 2.0 + h / 2.0, 2.0], 2), ([3.0 + h / 2.0, 2.0 + h / 2.0, 2.0], -2)]);
        let shells = [CoreShell { inner: 0.3, outer: 0.9 }; 2];
        let mut smooth = solve_dirac_smooth(&grid, &cfg, &shells, 0.0).unwrap();
        smooth.set_mass(0, 5.0);
        assert!((smooth.masses[0] - 5.0).abs() < 1e-12);
        let sol = smooth.to_solution(&grid);
        for (i, s) in cfg.sites.iter().enumerate() {
            let fit = shell_fit(&grid, &sol.phi, s.position, Some(s.charge as f64 / 2.0));
            assert!((fit.mass - smooth.masses[i]).abs() < 2e-3, "site {i}: {} vs {}", fit.mass, smooth.masses[i]);
        }
        // masses of a symmetric pair are antisymmetric around the mean
        assert!((smooth.masses[0] + smooth.masses[1] - 2.0 * smooth.mean).abs() < 1e-6);
        // analytic gradient matches a centred difference of the node values
        let i = grid.nearest_index([1.6, 2.3, 2.2]);
        let g = smooth.gradient_at_node(&grid, i);
        let fd = (smooth.value_at_node(&grid, grid.neighbor(i, 0, 1).unwrap())
            - smooth.value_at_node(&grid, grid.neighbor(i, 0, -1).unwrap()))
            / (2.0 * h);
        assert!((g[0] - fd).abs() < 0.02 * g[0].abs().max(1.0), "{} vs {fd}", g[0]);
    }

    #[test]
    fn zero_charges_give_constant() {
        let g = pair_grid();
        let cfg = ChargeConfig::new([([1.0, 1.0, 1.0], 0), ([5.0, 5.0, 5.0], 0)]);
        let sol = solve_dirac_higgs(&g, &cfg, 3.5).unwrap();
        assert!(sol.phi.iter().all(|v| (v - 3.5).abs() < 1e-12));
        let mv = mass_accounting(&g, &sol).unwrap();
        assert!(mv.masses.iter().all(|m| (m - 3.5).abs() < 1e-10));
    }

    #[test]
    fn rejects_imbalance_and_crowding() {
        let g = pair_grid();
        let bad = ChargeConfig::new([([2.0, 4.0, 4.0], 1)]);
        assert_eq!(solve_dirac_higgs(&g, &bad, 0.0).unwrap_err(), DiracError::ChargeImbalance { total: 1 });
        let close = ChargeConfig::new([([2.0, 4.0, 4.0], 1), ([2.5, 4.0, 4.0], -1)]);
        assert!(matches!(solve_dirac_higgs(&g, &close, 0.0), Err(DiracError::SitesTooClose { .. })));
    }

    #[test]
    fn mean_shift_is_constant() {
        let g = pair_grid();
        let a = solve_dirac_higgs(&g, &pair(), 0.0).unwrap();
        let b = solve_dirac_higgs(&g, &pair(), 5.0).unwrap();
        assert!(a.phi.iter().zip(&b.phi).all(|(x, y)| (y - x - 5.0).abs() < 1e-10));
        let ma = mass_accounting(&g, &a).unwrap();
        let mb = mass_accounting(&g, &b).unwrap();
        for (x, y) in ma.masses.iter().zip(&mb.masses) {
            assert!((y - x - 5.0).abs() < 1e-9);
        }
        assert!(mb.relative.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn flux_is_quantized_and_surface_independent() {
        let g = pair_grid();
        let sol = solve_dirac_higgs(&g, &pair(), 0.0).unwrap();
        let f = field_strength(&g, &sol.phi, &MetricField::flat());
        for r in [0.5, 1.0] {
            let plus = site_flux(&g, &sol, &f, 0, r);
            let minus = site_flux(&g, &sol, &f, 1, r);
            assert!((plus.flux_over_2pi - 1.0).abs() < 1e-9, "{plus:?}");
            assert!((minus.flux_over_2pi + 1.0).abs() < 1e-9);
            assert!((plus.two_c_fit - 1.0).abs() < 0.05, "{plus:?}");
        }
        let both = staircase_flux(&g, &sol.phi, [4.0, 4.0, 4.0], 2.5);
        assert!(both.abs() < 1e-9);
    }

    #[test]
    fn epsilon_zero_values() {
        assert_eq!(epsilon0(8.0), 0.5);
        assert_eq!(epsilon0(2.0), 1.0);
    }

    #[test]
    fn mass_bound_margin_grows_with_mass() {
        let g = pair_grid();
        let base = solve_dirac_higgs(&g, &pair(), 0.0).unwrap();
        let margins: Vec<f64> = [8.0, 16.0]
            .iter()
            .map(|&m| check_mass_bound(&g, &base.shifted(m), m).margin)
            .collect();
        assert!(margins[1] > margins[0]);
        assert!(check_mass_bound(&g, &base.shifted(16.0), 16.0).passed);
    }

    #[test]
    fn links_reproduce_plaquettes() {
        let g = GridDomain::torus(8.0, 16).build().unwrap();
        let sol = solve_dirac_higgs(&g, &pair(), 0.0).unwrap();
        let mut flux = plaquette_fluxes(&g, &sol.phi);
        assert!(matches!(u1_links_from_flux(&flux, 1e-6), Err(DiracError::NonIntegralClass { .. })));
        flux.harmonic_period_correction();
        let links = u1_links_from_flux(&flux, 1e-6).unwrap();
        assert!(links.plaquette_mismatch(&flux) < 1e-9);
        assert!((links.winding(&g, sol.sites[0].position, 1.0) - 1.0).abs() < 1e-9);
        let mut shifted = flux.clone();
        shifted.values[17][1] += TAU;
        let other = u1_links_from_flux(&shifted, 1e-6).unwrap();
        for (a, b) in links.values.iter().zip(&other.values) {
            for k in 0..3 {
                assert!(wrap_angle(a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_flux_gives_zero_links() {
        let flux = PlaquetteFlux { n: [8; 3], values: vec![[0.0; 3]; 512] };
        let links = u1_links_from_flux(&flux, 1e-6).unwrap();
        assert!(links.values.iter().all(|v| v.iter().all(|&a| a == 0.0)));
    }
}
