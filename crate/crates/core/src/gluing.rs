//! Cutoff functions and assembly of the approximate monopole `(A₀, Φ₀)`.
//!
//! The approximate pair is `ξ₀·(A_D, Φ_D) + Σ ξ_j·R_j·BPS_j`, where `ξ_j` is 1 on
//! `B_ε(q_j)` and 0 outside `B_{2ε}(q_j)`, `ξ₀ = 1 − Σ ξ_j`, and `R_j` is a
//! constant rotation of su(2) matching the BPS radial gauge to the background.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::Su2;
use crate::dirac_global::{
    epsilon0, ChargeConfig, CoreShell, DiracError, MassBoundReport, SmoothDirac, solve_dirac_smooth,
};
use crate::exact_fields::{dirac_radial_gauge, eval_bps_displacement, BpsSpec, Chart, DiracSpec, Su2Pair};
use crate::geometry::forms::FormField;
use crate::geometry::grid::{norm, Grid, GridDomain, Point};
use crate::geometry::metric::{matvec, Mat3};
use crate::geometry::GeometryError;
use crate::ramp::plateau;
use crate::spectral::{inverse_curl, Spectrum};

use std::f64::consts::PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GluingError {
    #[error("cutoff radius {eps} is not resolved by spacing {h} (need eps > 4h)")]
    TooCoarse { eps: f64, h: f64 },
    #[error("{what}: distance {distance} is below the required {min}")]
    SeparationViolation { what: String, distance: f64, min: f64 },
    #[error("Higgs field drops to {min_phi} at {witness:?}, below half the average mass {threshold}")]
    MassBoundViolation { min_phi: f64, threshold: f64, witness: Point },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Dirac(#[from] DiracError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn identity() -> Mat3 {
    IDENTITY
}

/// A smoothing site where a scaled BPS monopole replaces the Dirac singularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlueSite {
    pub position: Point,
    /// Scale of the BPS monopole; equals the local Dirac mass.
    pub lambda: f64,
    #[serde(default)]
    pub framing: f64,
    /// Constant su(2) rotation applied to the BPS field.
    #[serde(default = "identity")]
    pub frame: Mat3,
}

impl GlueSite {
    pub fn new(position: Point, lambda: f64) -> Self {
        GlueSite { position, lambda, framing: 0.0, frame: IDENTITY }
    }

    pub fn with_framing(mut self, theta: f64) -> Self {
        self.framing = theta;
        self
    }

    pub fn with_frame(mut self, frame: Mat3) -> Self {
        self.frame = frame;
        self
    }

    /// `ε = λ^{−1/2}`.
    pub fn epsilon(&self) -> f64 {
        self.lambda.powf(-0.5)
    }

    pub fn bps_spec(&self) -> BpsSpec {
        BpsSpec::new(self.position, self.lambda).with_framing(self.framing)
    }

    /// Rotated BPS field at displacement `d` from the site.
    pub fn bps_at_displacement(&self, d: Point) -> Su2Pair {
        let p = eval_bps_displacement(&self.bps_spec(), d);
        rotate_pair(&self.frame, p)
    }
}

fn rotate_su2(m: &Mat3, v: Su2) -> Su2 {
    Su2(matvec(m, v.0))
}

fn rotate_pair(m: &Mat3, p: Su2Pair) -> Su2Pair {
    if *m == IDENTITY {
        return p;
    }
    Su2Pair { a: p.a.map(|v| rotate_su2(m, v)), phi: rotate_su2(m, p.phi) }
}

/// Reported parameter count of the glued family: positions, relative
/// framings and the average mass.
pub fn degrees_of_freedom(sites: usize) -> usize {
    3 * sites + sites.saturating_sub(1) + 1
}

/// `ξ(r)`: 1 on `r ≤ ε`, 0 on `r ≥ 2ε`, quintic in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialCutoff {
    pub eps: f64,
}

/// Largest slope of the quintic ramp over a unit interval.
const QUINTIC_MAX_SLOPE: f64 = 1.875;

pub fn cutoff_radial(eps: f64, h: f64) -> Result<RadialCutoff, GluingError> {
    if eps <= 4.0 * h {
        return Err(GluingError::TooCoarse { eps, h });
    }
    Ok(RadialCutoff { eps })
}

impl RadialCutoff {
    pub fn value(&self, r: f64) -> f64 {
        plateau(r, self.eps, 2.0 * self.eps)
    }

    pub fn deriv(&self, r: f64) -> f64 {
        crate::ramp::plateau_deriv(r, self.eps, 2.0 * self.eps)
    }

    /// Analytic `sup |ξ'|`.
    pub fn max_slope(&self) -> f64 {
        QUINTIC_MAX_SLOPE / self.eps
    }
}

/// Logarithmic cutoff `β`: 1 for `r ≤ ε/N`, 0 for `r ≥ εN`, linear in `log r`
/// in between, with `ε = λ^{−1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogCutoff {
    pub eps: f64,
    pub log_n: f64,
}

pub fn cutoff_log(n: f64, lambda: f64) -> Result<LogCutoff, GluingError> {
    if n <= std::f64::consts::E || lambda <= 0.0 {
        return Err(GluingError::InvalidParameter(format!("log cutoff needs N > e and λ > 0, got N={n}, λ={lambda}")));
    }
    Ok(LogCutoff { eps: lambda.powf(-0.5), log_n: n.ln() })
}

impl LogCutoff {
    pub fn inner(&self) -> f64 {
        self.eps * (-self.log_n).exp()
    }

    pub fn outer(&self) -> f64 {
        self.eps * self.log_n.exp()
    }

    pub fn value(&self, r: f64) -> f64 {
        ((self.eps.ln() + self.log_n - r.ln()) / (2.0 * self.log_n)).clamp(0.0, 1.0)
    }

    pub fn deriv(&self, r: f64) -> f64 {
        if r <= self.inner() || r >= self.outer() {
            0.0
        } else {
            -1.0 / (2.0 * self.log_n * r)
        }
    }

    /// `‖∇β‖_{L³(ℝ³)} = π^{1/3} (log N)^{−2/3}`, independent of `ε`.
    pub fn gradient_l3_exact(&self) -> f64 {
        PI.cbrt() / self.log_n.powf(2.0 / 3.0)
    }

    /// The same norm by midpoint quadrature in `t = log r`.
    pub fn gradient_l3_quadrature(&self, samples: usize) -> f64 {
        let (t0, t1) = (self.inner().ln(), self.outer().ln());
        let dt = (t1 - t0) / samples as f64;
        let mut s = 0.0;
        for i in 0..samples {
            let r = (t0 + (i as f64 + 0.5) * dt).exp();
            // dV = 4π r² dr = 4π r³ dt
            s += self.deriv(r).abs().powi(3) * 4.0 * PI * r.powi(3) * dt;
        }
        s.cbrt()
    }
}

/// An su(2) pair sampled on grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPair {
    pub a: FormField,
    pub phi: FormField,
}

impl SampledPair {
    pub fn zeros(points: usize) -> Self {
        SampledPair { a: FormField::zeros(1, points), phi: FormField::zeros(0, points) }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize) -> Su2Pair) -> Self {
        let mut out = Self::zeros(grid.len());
        for i in 0..grid.len() {
            if grid.active[i] {
                out.set(i, f(i));
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> Su2Pair {
        Su2Pair { a: self.a.triple(idx), phi: self.phi.values[idx] }
    }

    pub fn set(&mut self, idx: usize, p: Su2Pair) {
        self.a.values[3 * idx..3 * idx + 3].copy_from_slice(&p.a);
        self.phi.values[idx] = p.phi;
    }
}

/// A reducible background the glue sites are blended into.
pub trait Background {
    fn at_node(&self, grid: &Grid, idx: usize) -> Su2Pair;

    /// Mass bound of the underlying Dirac field, when it has one.
    fn mass_bound(&self) -> Option<&MassBoundReport> {
        None
    }

    /// Excised singular points (anti-charges) with their excision radii.
    fn excisions(&self) -> Vec<(Point, f64)> {
        Vec::new()
    }
}

/// Sampled pair used directly as a background.
impl Background for SampledPair {
    fn at_node(&self, _grid: &Grid, idx: usize) -> Su2Pair {
        self.at(idx)
    }
}

/// The hedgehog Dirac field `φ = m − 1/r`, `ν = −x̂`, in radial gauge around
/// a single site. Used on balls, flat or curved.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgehogBackground {
    pub center: Point,
    pub mass: f64,
}

impl HedgehogBackground {
    pub fn at_point(&self, x: Point) -> Su2Pair {
        let spec = DiracSpec { center: self.center, c: 1.0, m: self.mass, chart: Chart::UPlus };
        dirac_radial_gauge(&spec, x).unwrap_or_default()
    }
}

impl Background for HedgehogBackground {
    fn at_node(&self, grid: &Grid, idx: usize) -> Su2Pair {
        self.at_point(grid.point(idx))
    }
}

/// Checks separation of the `3ε` balls from each other and from excisions.
pub fn check_separation(
    sites: &[GlueSite],
    excisions: &[(Point, f64)],
    distance: impl Fn(Point, Point) -> f64,
) -> Result<(), GluingError> {
    for (i, a) in sites.iter().enumerate() {
        for (j, b) in sites.iter().enumerate().skip(i + 1) {
            let d = distance(a.position, b.position);
            let min = 3.0 * (a.epsilon() + b.epsilon());
            if d < min {
                return Err(GluingError::SeparationViolation { what: format!("glue sites {i} and {j}"), distance: d, min });
            }
        }
        for (k, (p, rad)) in excisions.iter().enumerate() {
            let d = distance(a.position, *p);
            let min = 3.0 * a.epsilon() + rad;
            if d < min {
                return Err(GluingError::SeparationViolation { what: format!("glue site {i} and excision {k}"), distance: d, min });
            }
        }
    }
    Ok(())
}

/// Pointwise blend of a background value with the glue sites.
///
/// `displacements[j]` is `x − q_j` (minimum image on a torus).
pub fn blend_at(background: Su2Pair, sites: &[GlueSite], displacements: &[Point]) -> Su2Pair {
    let mut out = Su2Pair::default();
    let mut xi0 = 1.0;
    for (s, d) in sites.iter().zip(displacements) {
        let r = norm(*d);
        let xi = plateau(r, s.epsilon(), 2.0 * s.epsilon());
        if xi > 0.0 {
            xi0 -= xi;
            out = out.add(s.bps_at_displacement(*d).scale(xi));
        }
    }
    if xi0 > 0.0 {
        out = out.add(background.scale(xi0));
    }
    out
}

/// Assembles `(A₀, Φ₀)` on the grid.
pub fn assemble_approximate(
    grid: &Grid,
    background: &dyn Background,
    sites: &[GlueSite],
) -> Result<SampledPair, GluingError> {
    if let Some(report) = background.mass_bound() {
        if !report.passed {
            return Err(GluingError::MassBoundViolation {
                min_phi: report.min_phi,
                threshold: report.threshold,
                witness: report.witness,
            });
        }
    }
    for s in sites {
        cutoff_radial(s.epsilon(), grid.h)?;
    }
    check_separation(sites, &background.excisions(), |a, b| grid.distance(a, b))?;
    Ok(SampledPair::from_fn(grid, |i| {
        let x = grid.point(i);
        let d: Vec<Point> = sites.iter().map(|s| grid.displacement(x, s.position)).collect();
        blend_at(background.at_node(grid, i), sites, &d)
    }))
}

// ---------------------------------------------------------------------------
// Dipole background on the torus.

/// Radii of the zones around one `q → p` dipole of the Higgs direction `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleZones {
    /// `ν` is the exact hedgehog `−x̂` inside this radius of `q`.
    pub q_core: f64,
    /// Width over which `ν` relaxes to its far value around `q`.
    pub q_blend: f64,
    /// Excised radius around `p`.
    pub p_excision: f64,
    pub p_core: f64,
    pub p_blend: f64,
    /// Radius of the tube around the segment where the string angle is kept.
    pub tube: f64,
    pub tube_blend: f64,
}

impl DipoleZones {
    fn q_outer(&self) -> f64 {
        self.q_core + self.q_blend
    }

    fn p_outer(&self) -> f64 {
        self.p_core + self.p_blend
    }
}

/// An axis-aligned dipole from a positive site `q` to a negative site `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub q: Point,
    pub axis: usize,
    /// `+1` if `p` lies in the positive axis direction from `q`.
    pub orientation: f64,
    pub length: f64,
}

impl Dipole {
    pub fn p(&self, period: f64) -> Point {
        let mut p = self.q;
        p[self.axis] = (p[self.axis] + self.orientation * self.length).rem_euclid(period);
        p
    }

    /// Local frame `(e1, e2, u)` as axis indices with signs.
    fn frame(&self) -> [(usize, f64); 3] {
        let a = self.axis;
        [((a + 1) % 3, 1.0), ((a + 2) % 3, self.orientation), (a, self.orientation)]
    }

    /// Rotation taking the far value `u` of the local field to `+e_z`.
    fn far_rotation(&self) -> Mat3 {
        let mut u = [0.0; 3];
        u[self.axis] = self.orientation;
        rotation_between(u, [0.0, 0.0, 1.0])
    }
}

/// Proper rotation taking unit vector `a` to unit vector `b`.
fn rotation_between(a: [f64; 3], b: [f64; 3]) -> Mat3 {
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let v = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    if c > 1.0 - 1e-14 {
        return IDENTITY;
    }
    if c < -1.0 + 1e-14 {
        // π rotation about any axis orthogonal to a
        let k = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let d = k[0] * a[0] + k[1] * a[1] + k[2] * a[2];
        let w = [k[0] - d * a[0], k[1] - d * a[1], k[2] - d * a[2]];
        let wn = norm(w);
        let w = [w[0] / wn, w[1] / wn, w[2] / wn];
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 2.0 * w[i] * w[j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        return m;
    }
    let vx = [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]];
    let mut m = IDENTITY;
    let f = 1.0 / (1.0 + c);
    for i in 0..3 {
        for j in 0..3 {
            let mut sq = 0.0;
            for k in 0..3 {
                sq += vx[i][k] * vx[k][j];
            }
            m[i][j] += vx[i][j] + f * sq;
        }
    }
    m
}

/// The Higgs direction `ν` of a set of dipoles on a torus: a smooth unit field
/// away from the sites, equal to `−x̂` near every `q` (after a constant
/// rotation), of degree −1 around every `p`, and `+e_z` away from the dipoles.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleDirection {
    pub dipoles: Vec<Dipole>,
    pub zones: DipoleZones,
    pub period: f64,
}

impl DipoleDirection {
    pub fn new(dipoles: Vec<Dipole>, zones: DipoleZones, period: f64) -> Result<Self, GluingError> {
        let out = DipoleDirection { dipoles, zones, period };
        out.validate()?;
        Ok(out)
    }

    fn validate(&self) -> Result<(), GluingError> {
        let z = &self.zones;
        let l = self.period;
        if z.p_core < z.p_excision || z.p_blend <= 0.0 || z.q_blend <= 0.0 || z.q_core <= 0.0 || z.tube <= 0.0 {
            return Err(GluingError::InvalidParameter("dipole zone radii must increase".into()));
        }
        for d in &self.dipoles {
            // back gap between the q ball and the periodic image of the p ball
            let gap = l - d.length - z.q_outer() - z.p_outer();
            if d.length <= z.q_core + z.p_core || gap < 0.0 {
                return Err(GluingError::SeparationViolation {
                    what: "dipole balls along the axis".into(),
                    distance: d.length.min(l - d.length),
                    min: z.q_outer() + z.p_outer(),
                });
            }
            if z.tube + z.tube_blend >= l / 2.0 || z.q_outer() >= l / 2.0 {
                return Err(GluingError::InvalidParameter("dipole support wraps around the torus".into()));
            }
        }
        for (i, a) in self.dipoles.iter().enumerate() {
            for b in &self.dipoles[i + 1..] {
                let reach = self.support_reach();
                for (x, y) in [(a.q, b.q), (a.q, b.p(l)), (a.p(l), b.q), (a.p(l), b.p(l))] {
                    let d = torus_distance(x, y, l);
                    if d < 2.0 * reach {
                        return Err(GluingError::SeparationViolation {
                            what: "supports of two dipoles".into(),
                            distance: d,
                            min: 2.0 * reach,
                        });
                    }
                }
                let mut perp = 0.0f64;
                if a.axis == b.axis {
                    for c in 0..3 {
                        if c != a.axis {
                            let v = wrap_sym(a.q[c] - b.q[c], l);
                            perp += v * v;
                        }
                    }
                    if perp.sqrt() < 2.0 * reach {
                        return Err(GluingError::SeparationViolation {
                            what: "tubes of two dipoles".into(),
                            distance: perp.sqrt(),
                            min: 2.0 * reach,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn support_reach(&self) -> f64 {
        let z = &self.zones;
        (z.tube + z.tube_blend).max(z.q_outer()).max(z.p_outer())
    }

    /// Local coordinates `(X, Y, t)` of `x` relative to `q`, with the axial seam
    /// in the back gap.
    fn local(&self, d: &Dipole, x: Point) -> (f64, f64, f64) {
        let l = self.period;
        let [(i1, s1), (i2, s2), (ia, sa)] = d.frame();
        let z = &self.zones;
        let seam = 0.5 * (-(z.q_outer()) + (d.length + z.p_outer() - l));
        let t = sa * (x[ia] - d.q[ia]);
        let t = seam + (t - seam).rem_euclid(l);
        let t = if t >= seam + l { t - l } else { t };
        let xx = s1 * wrap_sym(x[i1] - d.q[i1], l);
        let yy = s2 * wrap_sym(x[i2] - d.q[i2], l);
        (xx, yy, t)
    }

    /// `ν(x)` as a unit vector.
    pub fn direction(&self, x: Point) -> [f64; 3] {
        for d in &self.dipoles {
            if let Some(v) = self.local_direction(d, x) {
                return matvec(&d.far_rotation(), v);
            }
        }
        [0.0, 0.0, 1.0]
    }

    /// `ν` in global axes if `x` lies in the support of dipole `d`.
    fn local_direction(&self, d: &Dipole, x: Point) -> Option<[f64; 3]> {
        let z = &self.zones;
        let (xx, yy, t) = self.local(d, x);
        let rho = xx.hypot(yy);
        let rq = rho.hypot(t);
        let rp = rho.hypot(t - d.length);
        let axial = if t < 0.0 {
            plateau(-t, 0.0, z.q_outer())
        } else if t > d.length {
            plateau(t - d.length, 0.0, z.p_outer())
        } else {
            1.0
        };
        let tube = plateau(rho, z.tube, z.tube + z.tube_blend) * axial;
        let ball_q = plateau(rq, z.q_core, z.q_outer());
        let ball_p = plateau(rp, z.p_core, z.p_outer());
        let chi = 1.0 - (1.0 - tube) * (1.0 - ball_q) * (1.0 - ball_p);
        if chi == 0.0 {
            return None;
        }
        // exact hedgehog inside the q core, exact anti-hedgehog inside the p core
        let wq = rho.atan2(t) * (1.0 - ball_p);
        let wp = rho.atan2(t - d.length);
        let wp = PI + (wp - PI) * (1.0 - ball_q);
        let theta = PI + chi * (wq - wp);
        let psi = yy.atan2(xx);
        let (st, ct) = theta.sin_cos();
        let (e1, e2, u) = (st * psi.cos(), st * psi.sin(), ct);
        // back to global axes
        let [(i1, s1), (i2, s2), (ia, sa)] = d.frame();
        let mut v = [0.0; 3];
        v[i1] -= s1 * e1;
        v[i2] -= s2 * e2;
        v[ia] -= sa * u;
        Some(v)
    }

    /// `∂_k ν` by fourth-order differences of the closed form.
    pub fn derivatives(&self, x: Point, step: f64) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let at = |s: f64| {
                let mut y = x;
                y[k] += s;
                self.direction(y)
            };
            let (p1, m1, p2, m2) = (at(step), at(-step), at(2.0 * step), at(-2.0 * step));
            for c in 0..3 {
                o[c] = (8.0 * (p1[c] - m1[c]) - (p2[c] - m2[c])) / (12.0 * step);
            }
        }
        out
    }
}

fn wrap_sym(v: f64, l: f64) -> f64 {
    v - l * (v / l).round()
}

fn torus_distance(a: Point, b: Point, l: f64) -> f64 {
    norm([wrap_sym(a[0] - b[0], l), wrap_sym(a[1] - b[1], l), wrap_sym(a[2] - b[2], l)])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `κ^m = −ν·(∂_{m+1}ν × ∂_{m+2}ν)`: the curvature of `−ν × dν` along `ν`.
pub fn direction_curvature(nu: [f64; 3], dnu: &[[f64; 3]; 3]) -> [f64; 3] {
    [0, 1, 2].map(|m| -dot(nu, cross(dnu[(m + 1) % 3], dnu[(m + 2) % 3])))
}

/// Diagnostics of the dipole background construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipoleReport {
    pub masses: Vec<f64>,
    /// `‖β − curl a‖_∞ / ‖β‖_∞`: the part of `∇φ − κ` a periodic potential cannot carry.
    pub curl_defect: f64,
    /// Gauge-fix data per glue site: `|a(q)|` and `|∂a(q)|` before the fix.
    pub gauge_fix: Vec<(f64, f64)>,
    pub mass_bound: MassBoundReport,
}

/// Reducible Dirac background `Φ = φν`, `A = −ν × dν + aν` on an excised torus.
#[derive(Debug, Clone)]
pub struct DipoleBackground {
    pub direction: DipoleDirection,
    pub higgs: SmoothDirac,
    /// Abelian potential with `curl a = ∇φ − κ`, gauge-fixed to vanish to second order at each `q`.
    pub potential: Vec<[f64; 3]>,
    /// Higgs direction and its derivatives at the nodes.
    nu: Vec<[f64; 3]>,
    dnu: Vec<[[f64; 3]; 3]>,
    pub report: DipoleReport,
    excised: Vec<(Point, f64)>,
}

/// Parameters of the symmetric two-dipole torus configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoDipoleConfig {
    pub period: f64,
    pub points_per_axis: usize,
    pub lambda: f64,
    pub zones: DipoleZones,
    /// Core shells for the singular subtraction of `φ`.
    pub shell: CoreShell,
    #[serde(default)]
    pub framings: [f64; 2],
}

impl TwoDipoleConfig {
    /// Default zone layout for a given `λ` and resolution: the relaxation
    /// zones share the back gap between `q` and the periodic image of `p`.
    pub fn standard(lambda: f64, points_per_axis: usize) -> Self {
        let period = 3.2;
        let h = period / points_per_axis as f64;
        let eps = lambda.powf(-0.5);
        let excision = (4.0 * h).max(0.15);
        let q_core = 2.0 * eps;
        let spare = period / 2.0 - q_core - excision - 0.02;
        let zones = DipoleZones {
            q_core,
            q_blend: 0.55 * spare,
            p_excision: excision,
            p_core: excision,
            p_blend: 0.45 * spare,
            tube: 0.3,
            tube_blend: 0.6,
        };
        TwoDipoleConfig {
            period,
            points_per_axis,
            lambda,
            zones,
            shell: CoreShell { inner: 0.2, outer: 0.75 },
            framings: [0.0, 0.0],
        }
    }

    pub fn dipoles(&self) -> [Dipole; 2] {
        let l = self.period;
        let h = l / self.points_per_axis as f64;
        let q1 = [l / 4.0 + h / 2.0; 3];
        let q2 = [q1[0] + l / 2.0, q1[1] + l / 2.0, q1[2] + l / 2.0];
        [
            Dipole { q: q1, axis: 2, orientation: 1.0, length: l / 2.0 },
            Dipole { q: q2, axis: 2, orientation: -1.0, length: l / 2.0 },
        ]
    }

    pub fn domain(&self) -> GridDomain {
        let mut dom = GridDomain::torus(self.period, self.points_per_axis);
        for d in self.dipoles() {
            dom = dom.with_excision(d.p(self.period), self.zones.p_excision);
        }
        dom
    }
}

impl DipoleBackground {
    /// Builds the background for dipoles with charges `+2` at `q` and `−2` at `p`,
    /// fixing the additive constant so that the first `q` has mass `lambda`.
    pub fn build(
        grid: &Grid,
        direction: DipoleDirection,
        shell: CoreShell,
        lambda: f64,
    ) -> Result<Self, GluingError> {
        let period = grid.period.ok_or(DiracError::NotTorus)?;
        let mut sites = Vec::new();
        for d in &direction.dipoles {
            sites.push((d.q, 2));
            sites.push((d.p(period), -2));
        }
        let cfg = ChargeConfig::new(sites);
        let shells = vec![shell; cfg.sites.len()];
        let mut higgs = solve_dirac_smooth(grid, &cfg, &shells, 0.0)?;
        higgs.set_mass(0, lambda);

        let step = 1e-4 * grid.h.min(1.0);
        let n = grid.len();
        let mut nu = vec![[0.0; 3]; n];
        let mut dnu = vec![[[0.0; 3]; 3]; n];
        let mut beta = vec![[0.0; 3]; n];
        for i in 0..n {
            let x = grid.point(i);
            nu[i] = direction.direction(x);
            dnu[i] = direction.derivatives(x, step);
            let kappa = direction_curvature(nu[i], &dnu[i]);
            let g = higgs.gradient_at_node(grid, i);
            beta[i] = [g[0] - kappa[0], g[1] - kappa[1], g[2] - kappa[2]];
        }
        let mut potential = inverse_curl(grid.n, period, &beta);

        // residual of the curl equation, spectrally
        let curl = spectral_curl(grid, period, &potential);
        let bmax = beta.iter().map(|b| norm(*b)).fold(0.0, f64::max);
        let defect = beta.iter().zip(&curl).map(|(b, c)| norm([b[0] - c[0], b[1] - c[1], b[2] - c[2]])).fold(0.0, f64::max);

        // Gauge fix: subtract d f with f = (a(q)·Y + ½ Y·M·Y) ζ(|Y|) at every q.
        let specs: Vec<Spectrum> = (0..3)
            .map(|c| {
                let comp: Vec<f64> = potential.iter().map(|v| v[c]).collect();
                Spectrum::from_values(grid.n, period, grid.origin, &comp)
            })
            .collect();
        let mut gauge_fix = Vec::new();
        let z = direction.zones;
        for d in &direction.dipoles {
            let mut a0 = [0.0; 3];
            let mut m = [[0.0; 3]; 3];
            for c in 0..3 {
                let (v, g) = specs[c].eval_with_gradient(d.q);
                a0[c] = v;
                m[c] = g;
            }
            gauge_fix.push((norm(a0), m.iter().map(|r| norm(*r)).fold(0.0, f64::max)));
            let ms = [0, 1, 2].map(|k| [0, 1, 2].map(|l| 0.5 * (m[k][l] + m[l][k])));
            let (r0, r1) = (z.q_core, z.q_outer());
            for (i, p) in potential.iter_mut().enumerate() {
                let y = grid.displacement(grid.point(i), d.q);
                let r = norm(y);
                if r >= r1 {
                    continue;
                }
                let zeta = plateau(r, r0, r1);
                let dzeta = crate::ramp::plateau_deriv(r, r0, r1);
                let my = matvec(&ms, y);
                let f = dot(a0, y) + 0.5 * dot(y, my);
                for k in 0..3 {
                    let df = zeta * (a0[k] + my[k]) + if r > 0.0 { f * dzeta * y[k] / r } else { 0.0 };
                    p[k] -= df;
                }
            }
        }

        let excised: Vec<(Point, f64)> =
            direction.dipoles.iter().map(|d| (d.p(period), direction.zones.p_excision)).collect();
        let sol = higgs.to_solution(grid);
        let mean_mass = higgs.masses.iter().sum::<f64>() / higgs.masses.len() as f64;
        let mass_bound = mass_bound_on_grid(grid, &sol.phi, &cfg, mean_mass);
        let report = DipoleReport {
            masses: higgs.masses.clone(),
            curl_defect: defect / bmax.max(1e-300),
            gauge_fix,
            mass_bound,
        };
        Ok(DipoleBackground { direction, higgs, potential, nu, dnu, report, excised })
    }

    /// Glue sites at every `q`, with the rotation matching the BPS radial gauge.
    pub fn glue_sites(&self, framings: &[f64]) -> Vec<GlueSite> {
        self.direction
            .dipoles
            .iter()
            .enumerate()
            .map(|(j, d)| {
                GlueSite::new(d.q, self.higgs.masses[2 * j])
                    .with_frame(d.far_rotation())
                    .with_framing(framings.get(j).copied().unwrap_or(0.0))
            })
            .collect()
    }
}

impl Background for DipoleBackground {
    fn at_node(&self, grid: &Grid, idx: usize) -> Su2Pair {
        let nu = Su2(self.nu[idx]);
        let phi = self.higgs.value_at_node(grid, idx);
        let a = self.potential[idx];
        let dn = self.dnu[idx];
        Su2Pair {
            a: [0, 1, 2].map(|k| -nu.bracket(Su2(dn[k])) + nu.scale(a[k])),
            phi: nu.scale(phi),
        }
    }

    fn mass_bound(&self) -> Option<&MassBoundReport> {
        Some(&self.report.mass_bound)
    }

    fn excisions(&self) -> Vec<(Point, f64)> {
        self.excised.clone()
    }
}

fn spectral_curl(grid: &Grid, period: f64, a: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let grads: Vec<Vec<[f64; 3]>> = (0..3)
        .map(|c| {
            let comp: Vec<f64> = a.iter().map(|v| v[c]).collect();
            crate::spectral::spectral_gradient(grid.n, period, &comp)
        })
        .collect();
    (0..a.len())
        .map(|i| [0, 1, 2].map(|m| grads[(m + 2) % 3][i][(m + 1) % 3] - grads[(m + 1) % 3][i][(m + 2) % 3]))
        .collect()
}

/// `φ ≥ m̄/2` outside the `ε₀`-balls of all sites, over active nodes.
pub fn mass_bound_on_grid(grid: &Grid, phi: &[f64], cfg: &ChargeConfig, mean_mass: f64) -> MassBoundReport {
    let eps0 = epsilon0(mean_mass);
    let mut min_phi = f64::INFINITY;
    let mut witness = [f64::NAN; 3];
    for i in 0..grid.len() {
        let x = grid.point(i);
        if grid.active[i] && cfg.sites.iter().all(|s| grid.distance(x, s.position) >= eps0) && phi[i] < min_phi {
            min_phi = phi[i];
            witness = x;
        }
    }
    let mut sep = f64::INFINITY;
    for (i, a) in cfg.sites.iter().enumerate() {
        for b in &cfg.sites[i + 1..] {
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

/// The symmetric two-dipole torus background with its glue sites.
pub fn two_dipole_setup(cfg: &TwoDipoleConfig) -> Result<(Grid, DipoleBackground, Vec<GlueSite>), GluingError> {
    let grid = cfg.domain().build()?;
    let direction = DipoleDirection::new(cfg.dipoles().to_vec(), cfg.zones, cfg.period)?;
    let bg = DipoleBackground::build(&grid, direction, cfg.shell, cfg.lambda)?;
    let sites = bg.glue_sites(&cfg.framings);
    Ok((grid, bg, sites))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_cutoff_plateaus_and_slope() {
        let c = cutoff_radial(0.25, 0.05).unwrap();
        assert_eq!(c.value(0.125), 1.0);
        assert_eq!(c.value(0.75), 0.0);
        let m = 20000;
        let mut slope = 0.0f64;
        for i in 0..m {
            let (r0, r1) = (0.5 * i as f64 / m as f64, 0.5 * (i + 1) as f64 / m as f64);
            slope = slope.max((c.value(r1) - c.value(r0)).abs() / (r1 - r0));
        }
        assert!(slope <= 2.0 / 0.25 && (slope - c.max_slope()).abs() < 1e-3 * c.max_slope());
        assert!(matches!(cutoff_radial(0.2, 0.05), Err(GluingError::TooCoarse { .. })));
    }

    #[test]
    fn log_cutoff_norm_scaling() {
        let b = cutoff_log(10.0, 100.0).unwrap();
        assert_eq!(b.value(0.1 / 10.0 * 0.5), 1.0);
        let mut prev = 2.0;
        for i in 0..200 {
            let v = b.value(1e-4 * 1.06f64.powi(i));
            assert!(v <= prev);
            prev = v;
        }
        let q = b.gradient_l3_quadrature(4000);
        assert!((q - b.gradient_l3_exact()).abs() < 1e-6 * q);
        let b2 = LogCutoff { eps: b.eps, log_n: 2.0 * b.log_n };
        let ratio = b2.gradient_l3_quadrature(4000) / q;
        assert!((ratio - 0.5f64.powf(2.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn dof_count() {
        assert_eq!(degrees_of_freedom(1), 4);
        assert_eq!(degrees_of_freedom(3), 12);
    }

    #[test]
    fn rotation_between_maps_vectors() {
        for (a, b) in [([0.0, 0.0, -1.0], [0.0, 0.0, 1.0]), ([1.0, 0.0, 0.0], [0.0, 0.6, 0.8])] {
            let m = rotation_between(a, b);
            let v = matvec(&m, a);
            assert!(norm([v[0] - b[0], v[1] - b[1], v[2] - b[2]]) < 1e-12);
            assert!((crate::geometry::metric::det3(&m) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hedgehog_direction_has_unit_curvature_flux() {
        let cfg = TwoDipoleConfig::standard(16.0, 64);
        let dir = DipoleDirection::new(cfg.dipoles().to_vec(), cfg.zones, cfg.period).unwrap();
        for d in cfg.dipoles() {
            // near q: ν = R(−x̂) and κ = x̂/r²
            let x = [d.q[0] + 0.1, d.q[1] - 0.05, d.q[2] + 0.07];
            let nu = dir.direction(x);
            let y = [0.1, -0.05, 0.07];
            let r = norm(y);
            let expect = matvec(&d.far_rotation(), [-y[0] / r, -y[1] / r, -y[2] / r]);
            assert!(norm([nu[0] - expect[0], nu[1] - expect[1], nu[2] - expect[2]]) < 1e-12);
            let k = direction_curvature(nu, &dir.derivatives(x, 1e-5));
            for c in 0..3 {
                assert!((k[c] - y[c] / r.powi(3)).abs() < 1e-6 * r.powi(-2));
            }
            // sphere fluxes of κ: +4π around q, −4π around p
            for (center, sign) in [(d.q, 1.0), (d.p(cfg.period), -1.0)] {
                let rad = 0.3;
                let mut flux = 0.0;
                let m = 60;
                for i in 0..m {
                    let th = PI * (i as f64 + 0.5) / m as f64;
                    for j in 0..2 * m {
                        let ph = PI * (j as f64 + 0.5) / m as f64;
                        let nrm = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                        let x = [center[0] + rad * nrm[0], center[1] + rad * nrm[1], center[2] + rad * nrm[2]];
                        let nu = dir.direction(x);
                        let k = direction_curvature(nu, &dir.derivatives(x, 1e-5));
                        flux += dot(k, nrm) * rad * rad * th.sin() * (PI / m as f64).powi(2);
                    }
                }
                assert!((flux - sign * 4.0 * PI).abs() < 1e-2, "flux {flux}");
            }
        }
        // far from both dipoles ν is the constant far value
        assert_eq!(dir.direction([0.8, 2.4, 1.6]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn assembly_plateaus() {
        let grid = GridDomain::ball(1.5, 0.05).build().unwrap();
        let bg = HedgehogBackground { center: [0.0; 3], mass: 16.0 };
        let site = GlueSite::new([0.0; 3], 16.0).with_framing(0.4);
        let out = assemble_approximate(&grid, &bg, std::slice::from_ref(&site)).unwrap();
        let i_in = grid.nearest_index([0.1, 0.0, 0.05]);
        let i_out = grid.nearest_index([0.8, 0.0, 0.0]);
        let bps = eval_bps_displacement(&site.bps_spec(), grid.point(i_in));
        assert_eq!(out.at(i_in), bps);
        assert_eq!(out.at(i_out), bg.at_node(&grid, i_out));
        let none = assemble_approximate(&grid, &bg, &[]).unwrap();
        assert_eq!(none.at(i_in), bg.at_node(&grid, i_in));
        // framing only acts inside B_{2ε}
        let other = assemble_approximate(&grid, &bg, &[site.clone().with_framing(-1.0)]).unwrap();
        for i in 0..grid.len() {
            let r = norm(grid.point(i));
            if r >= 2.0 * site.epsilon() && grid.active[i] {
                assert_eq!(out.at(i), other.at(i));
            }
        }
    }
}
