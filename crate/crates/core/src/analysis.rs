//! Weighted norms, the Bogomolny error and numerical checks of the
//! inequalities behind the construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, Su2};
use crate::exact_fields::Su2Pair;
use crate::geometry::forms::{star2_at, FormField};
use crate::geometry::grid::{norm, Grid, Point};
use crate::geometry::metric::{MetricField, MetricModel, PointMetric};
use crate::geometry::ops::{curvature_at, d0_at, deriv_at};
use crate::ramp::smoothstep;
use crate::geometry::GeometryError;
use crate::gluing::SampledPair;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("Higgs field too small ({norm:e}) to split at point {index}")]
    DegenerateHiggs { index: usize, norm: f64 },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("cylinder grid truncation loses {lost:.3e} of the norm (limit 1e-3)")]
    ResampleUnderflow { lost: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// `e₀ = ∗F_A − d_AΦ` on every active node.
pub fn bogomolny_error(grid: &Grid, pair: &SampledPair, metric: &MetricField) -> FormField {
    let a = &pair.a.values;
    let phi = &pair.phi.values;
    FormField::from_fn(grid, 1, |i| {
        let f = curvature_at(grid, i, |p, c| a[3 * p + c]);
        let sf = star2_at(metric, i, f);
        let dp = d0_at(grid, i, pair.a.triple(i), |p| phi[p]);
        [sf[0] - dp[0], sf[1] - dp[1], sf[2] - dp[2]]
    })
}

/// `e₀` at an arbitrary point of a field given in closed form, with
/// derivatives by fourth-order central differences of step `step`.
pub fn bogomolny_error_at(field: &impl Fn(Point) -> Su2Pair, metric: &MetricModel, x: Point, step: f64) -> [Su2; 3] {
    let p0 = field(x);
    let mut da = [[Su2::ZERO; 3]; 3]; // da[j][k] = ∂_j A_k
    let mut dphi = [Su2::ZERO; 3];
    for j in 0..3 {
        let at = |s: f64| {
            let mut y = x;
            y[j] += s;
            field(y)
        };
        let (p1, m1, p2, m2) = (at(step), at(-step), at(2.0 * step), at(-2.0 * step));
        let d = |f: fn(&Su2Pair) -> Su2| ((f(&p1) - f(&m1)).scale(8.0) - (f(&p2) - f(&m2))).scale(1.0 / (12.0 * step));
        dphi[j] = d(|p| p.phi);
        da[j] = [d(|p| p.a[0]), d(|p| p.a[1]), d(|p| p.a[2])];
    }
    let mut f = [Su2::ZERO; 3];
    for m in 0..3 {
        let (j, k) = ((m + 1) % 3, (m + 2) % 3);
        f[m] = da[j][k] - da[k][j] + p0.a[j].bracket(p0.a[k]);
    }
    let sf = if metric.is_flat() {
        f
    } else {
        let pm = PointMetric::from_metric(metric.metric_at(x)).expect("metric is non-degenerate");
        let mut out = [Su2::ZERO; 3];
        for (k, o) in out.iter_mut().enumerate() {
            for (mm, fm) in f.iter().enumerate() {
                *o += fm.scale(pm.g[k][mm] / pm.vol);
            }
        }
        out
    };
    [0, 1, 2].map(|k| sf[k] - dphi[k] - p0.a[k].bracket(p0.phi))
}

/// Pointwise magnitude of a 1-form in the flat frame.
pub fn magnitude(v: &[Su2; 3]) -> f64 {
    (v[0].norm_sq() + v[1].norm_sq() + v[2].norm_sq()).sqrt()
}

/// Partition of a domain around glue sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Core,
    Neck,
    Exterior,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Core, Region::Neck, Region::Exterior];

    /// Region of a point given its distance to the nearest site in units of that site's ε.
    pub fn classify(scaled_distance: f64) -> Region {
        if scaled_distance < 1.0 {
            Region::Core
        } else if scaled_distance < 2.0 {
            Region::Neck
        } else {
            Region::Exterior
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionNorm {
    pub region: Region,
    pub sup: f64,
    /// `(∫ |w e|³)^{1/3}` over the region.
    pub weighted_l3: f64,
    pub points: usize,
}

/// Sup and weighted L³ norms of a sampled 1-form per region.
pub fn region_report(
    grid: &Grid,
    field: &FormField,
    mask: &[bool],
    region_of: impl Fn(Point) -> Region,
    weight: impl Fn(Point) -> f64,
    metric: &MetricField,
) -> Vec<RegionNorm> {
    let mut out: Vec<RegionNorm> =
        Region::ALL.iter().map(|&region| RegionNorm { region, sup: 0.0, weighted_l3: 0.0, points: 0 }).collect();
    let dv = grid.cell_volume();
    for i in 0..grid.len() {
        if !mask[i] {
            continue;
        }
        let x = grid.point(i);
        let r = region_of(x) as usize;
        let m = magnitude(&field.triple(i));
        let o = &mut out[r];
        o.sup = o.sup.max(m);
        o.weighted_l3 += (weight(x) * m).powi(3) * metric.vol(i) * dv;
        o.points += 1;
    }
    for o in &mut out {
        o.weighted_l3 = o.weighted_l3.cbrt();
    }
    out
}

pub fn distance_to(grid: &Grid, x: Point, y: Point) -> f64 {
    if grid.period.is_some() {
        grid.distance(x, y)
    } else {
        norm([x[0] - y[0], x[1] - y[1], x[2] - y[2]])
    }
}

/// A site where the weight behaves like `√(λ⁻² + r²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSite {
    pub position: Point,
    pub lambda: f64,
}

/// Weights `w` for the weighted Sobolev norms: `√(λ_j⁻² + r_j²)` near glue
/// sites, `r_i` near anti-charges, and 1 beyond the unit length, with a
/// quintic ramp over `[unit/2, unit]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub q_sites: Vec<WeightSite>,
    pub p_sites: Vec<Point>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub unit: f64,
}

/// Which weight applies at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightZone {
    Glue(usize),
    Anti(usize),
    Far,
}

impl WeightSpec {
    pub fn new(q_sites: Vec<WeightSite>, p_sites: Vec<Point>, alpha1: f64, alpha2: f64, unit: f64) -> Result<Self, AnalysisError> {
        if !(unit > 0.0) {
            return Err(AnalysisError::OutOfRange(format!("weight unit length must be positive, got {unit}")));
        }
        if q_sites.iter().any(|s| !(s.lambda > 0.0)) {
            return Err(AnalysisError::OutOfRange("glue-site scales must be positive".into()));
        }
        Ok(WeightSpec { q_sites, p_sites, alpha1, alpha2, unit })
    }

    /// Checks `α₁ ∈ [−½, 0)`, required before the weights are used by a solver.
    pub fn validate_for_solver(&self) -> Result<(), AnalysisError> {
        if (-0.5..0.0).contains(&self.alpha1) {
            Ok(())
        } else {
            Err(AnalysisError::OutOfRange(format!("α₁ = {} must lie in [−½, 0)", self.alpha1)))
        }
    }

    /// The same weights with both exponents shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        WeightSpec { alpha1: self.alpha1 + delta, alpha2: self.alpha2 + delta, ..self.clone() }
    }

    pub fn exponent(&self, zone: WeightZone) -> f64 {
        match zone {
            WeightZone::Glue(_) => self.alpha1,
            WeightZone::Anti(_) => self.alpha2,
            WeightZone::Far => 0.0,
        }
    }

    /// Weight and zone at `x`, with distances measured by `dist`.
    pub fn weight_with(&self, x: Point, dist: impl Fn(Point, Point) -> f64) -> (f64, WeightZone) {
        let mut best = (f64::INFINITY, WeightZone::Far);
        for (j, s) in self.q_sites.iter().enumerate() {
            let r = dist(x, s.position);
            if r < best.0 {
                best = (r, WeightZone::Glue(j));
            }
        }
        for (i, p) in self.p_sites.iter().enumerate() {
            let r = dist(x, *p);
            if r < best.0 {
                best = (r, WeightZone::Anti(i));
            }
        }
        let (r, zone) = best;
        if r >= self.unit {
            return (1.0, WeightZone::Far);
        }
        let near = match zone {
            WeightZone::Glue(j) => (self.q_sites[j].lambda.powi(-2) + r * r).sqrt(),
            WeightZone::Anti(_) => r,
            WeightZone::Far => 1.0,
        };
        let s = smoothstep(((r - 0.5 * self.unit) / (0.5 * self.unit)).clamp(0.0, 1.0));
        ((1.0 - s) * near + s, zone)
    }

    pub fn weight_on(&self, grid: &Grid, x: Point) -> (f64, WeightZone) {
        self.weight_with(x, |a, b| distance_to(grid, a, b))
    }
}

/// `∇_j u` for `j = 0, 1, 2`, with `∇ = ∂ + [A, ·]`.
pub fn covariant_gradient(grid: &Grid, a: Option<&FormField>, u: &FormField) -> [FormField; 3] {
    let nc = u.ncomp();
    [0, 1, 2].map(|j| {
        FormField::from_fn(grid, u.degree, |i| {
            let mut out = [Su2::ZERO; 3];
            for (c, o) in out.iter_mut().enumerate().take(nc) {
                *o = deriv_at(grid, i, j, |p| u.values[p * nc + c]);
                if let Some(a) = a {
                    *o += a.get(i, j).bracket(u.values[i * nc + c]);
                }
            }
            out
        })
    })
}

/// Pointwise bracket `[Φ, u]` componentwise.
fn higgs_action(grid: &Grid, phi: &FormField, u: &FormField) -> FormField {
    let nc = u.ncomp();
    FormField::from_fn(grid, u.degree, |i| {
        let mut out = [Su2::ZERO; 3];
        for (c, o) in out.iter_mut().enumerate().take(nc) {
            *o = phi.values[i].bracket(u.values[i * nc + c]);
        }
        out
    })
}

/// Weighted `W^{k,p}_α` norm of an su(2)-valued 0- or 1-form.
///
/// Terms of derivative order `j` carry the weight `w^{−α+j−3/p}`; order 1 adds
/// `∇_A u` and `[Φ, u]`, order 2 adds `∇_A∇_A u` and `[Φ, [Φ, u]]`. Near
/// anti-charges the field is split along `Φ` first and only the longitudinal
/// part is weighted.
pub fn weighted_norm(
    grid: &Grid,
    metric: &MetricField,
    field: &FormField,
    p: f64,
    spec: &WeightSpec,
    order: u8,
    pair: Option<&SampledPair>,
) -> Result<f64, AnalysisError> {
    if !(p >= 1.0) || order > 2 {
        return Err(AnalysisError::OutOfRange(format!("need p ≥ 1 and order ≤ 2, got p={p}, order={order}")));
    }
    if order > 0 && pair.is_none() {
        return Err(AnalysisError::OutOfRange("derivative terms need the background pair".into()));
    }
    field.check_on(grid)?;
    let mut terms: Vec<(FormField, f64)> = vec![(field.clone(), 0.0)];
    if order >= 1 {
        let bg = pair.expect("checked");
        let grads = covariant_gradient(grid, Some(&bg.a), field);
        let hp = higgs_action(grid, &bg.phi, field);
        if order == 2 {
            for g in &grads {
                for gg in covariant_gradient(grid, Some(&bg.a), g) {
                    terms.push((gg, 2.0));
                }
            }
            terms.push((higgs_action(grid, &bg.phi, &hp), 2.0));
        }
        terms.extend(grads.into_iter().map(|g| (g, 1.0)));
        terms.push((hp, 1.0));
    }
    let mask = if order == 0 { grid.active.clone() } else { grid.interior_mask() };
    let sup_phi = pair.map(|bg| bg.phi.values.iter().map(|v| v.norm()).fold(0.0, f64::max)).unwrap_or(0.0);
    let tol = crate::algebra::default_split_tol(sup_phi.max(1.0));
    let dv = grid.cell_volume();
    let mut total = 0.0;
    for i in 0..grid.len() {
        if !mask[i] {
            continue;
        }
        let (w, zone) = spec.weight_on(grid, grid.point(i));
        let alpha = spec.exponent(zone);
        let higgs = match (zone, pair) {
            (WeightZone::Anti(_), Some(bg)) => {
                let h = bg.phi.values[i];
                if h.norm() <= tol {
                    return Err(AnalysisError::DegenerateHiggs { index: i, norm: h.norm() });
                }
                Some(h)
            }
            _ => None,
        };
        let mut point_sum = 0.0;
        for (f, j) in &terms {
            let scale = w.powf(-alpha + j - 3.0 / p);
            let nc = f.ncomp();
            let mut sq = 0.0;
            for c in 0..nc {
                let v = f.values[i * nc + c];
                match higgs {
                    Some(h) => {
                        let (l, t) = v.split(h, tol)?;
                        sq += scale * scale * l.norm_sq() + t.norm_sq();
                    }
                    None => sq += scale * scale * v.norm_sq(),
                }
            }
            point_sum += sq.sqrt().powf(p);
        }
        total += point_sum * metric.vol(i) * dv;
    }
    Ok(total.powf(1.0 / p))
}

/// Weighted norm of a pair `(a, φ)`: `(‖a‖ᵖ + ‖φ‖ᵖ)^{1/p}`.
pub fn weighted_pair_norm(
    grid: &Grid,
    metric: &MetricField,
    v: &SampledPair,
    p: f64,
    spec: &WeightSpec,
    order: u8,
    pair: Option<&SampledPair>,
) -> Result<f64, AnalysisError> {
    let a = weighted_norm(grid, metric, &v.a, p, spec, order, pair)?;
    let f = weighted_norm(grid, metric, &v.phi, p, spec, order, pair)?;
    Ok((a.powf(p) + f.powf(p)).powf(1.0 / p))
}

/// `b_α = (α+1)²/((α+1)²+1) + α(1+2α)` on `[−½, 0)`.
pub fn b_alpha(alpha: f64) -> Result<f64, AnalysisError> {
    if !(-0.5..0.0).contains(&alpha) {
        return Err(AnalysisError::OutOfRange(format!("α = {alpha} outside [−½, 0)")));
    }
    let s = (alpha + 1.0) * (alpha + 1.0);
    Ok(s / (s + 1.0) + alpha * (1.0 + 2.0 * alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyReport {
    /// `∫ w^{−2α−3}|u|²`.
    pub lhs: f64,
    /// `∫ w^{−2α−1}|∇_A u|²`.
    pub gradient: f64,
    /// `lhs / gradient`.
    pub ratio: f64,
    /// `1/(α+1)²`.
    pub constant: f64,
}

impl HardyReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.ratio <= self.constant * (1.0 + tol)
    }
}

/// Both sides of the weighted Hardy inequality for a compactly supported field,
/// using the glue-site weight of `spec` and exponent `alpha`.
pub fn hardy_check(
    grid: &Grid,
    metric: &MetricField,
    u: &FormField,
    alpha: f64,
    connection: Option<&FormField>,
    spec: &WeightSpec,
) -> Result<HardyReport, AnalysisError> {
    if (alpha + 1.0).abs() < 1e-12 {
        return Err(AnalysisError::OutOfRange("the Hardy inequality excludes α = −1".into()));
    }
    u.check_on(grid)?;
    let mask = grid.interior_mask();
    if (0..grid.len()).any(|i| grid.active[i] && !mask[i] && u.magnitude_at(i) > 0.0) {
        return Err(AnalysisError::OutOfRange("field must vanish at the domain boundary".into()));
    }
    let grads = covariant_gradient(grid, connection, u);
    let dv = grid.cell_volume();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in 0..grid.len() {
        if !mask[i] {
            continue;
        }
        let (w, _) = spec.weight_on(grid, grid.point(i));
        let vol = metric.vol(i) * dv;
        lhs += w.powf(-2.0 * alpha - 3.0) * u.magnitude_at(i).powi(2) * vol;
        let g2: f64 = grads.iter().map(|g| g.magnitude_at(i).powi(2)).sum();
        rhs += w.powf(-2.0 * alpha - 1.0) * g2 * vol;
    }
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(HardyReport { lhs, gradient: rhs, ratio, constant: 1.0 / ((alpha + 1.0) * (alpha + 1.0)) })
}

/// Relative sup-norm difference between `d₂d₂*u` and the Weitzenböck
/// right-hand side `∇*∇u − ad(Φ)²u + Ric(u) + ∗[e₀ ∧ u]`, over nodes two
/// stencil widths inside the domain. Flat metrics only (`Ric = 0`).
pub fn weitzenbock_residual(grid: &Grid, pair: &SampledPair, u: &FormField) -> Result<f64, AnalysisError> {
    if u.degree != 1 {
        return Err(AnalysisError::OutOfRange("Weitzenböck check takes a 1-form".into()));
    }
    let metric = MetricField::flat();
    let op = crate::linear_system::LinearizedOperator::new(grid, &metric, pair)
        .map_err(|e| AnalysisError::OutOfRange(e.to_string()))?;
    let lhs = op.normal(u);
    let e0 = bogomolny_error(grid, pair, &metric);
    let a = &pair.a;
    let inner = grid.interior_mask();
    let deep: Vec<bool> = (0..grid.len())
        .map(|i| inner[i] && (0..3).all(|ax| [-1isize, 1].iter().all(|&s| grid.neighbor(i, ax, s).is_some_and(|j| inner[j]))))
        .collect();
    let h2 = grid.h * grid.h;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for i in 0..grid.len() {
        if !deep[i] {
            continue;
        }
        let ai = a.triple(i);
        let ui = u.triple(i);
        let phi = pair.phi.values[i];
        let ei = e0.triple(i);
        let mut rhs = [Su2::ZERO; 3];
        for (k, r) in rhs.iter_mut().enumerate() {
            let mut lap = Su2::ZERO;
            for j in 0..3 {
                let (p, m) = (grid.neighbor(i, j, 1).unwrap(), grid.neighbor(i, j, -1).unwrap());
                let d2 = (u.get(p, k) + u.get(m, k) - ui[k].scale(2.0)).scale(1.0 / h2);
                let d1 = (u.get(p, k) - u.get(m, k)).scale(0.5 / grid.h);
                let da = (a.get(p, j) - a.get(m, j)).scale(0.5 / grid.h);
                lap += d2 + ai[j].bracket(d1).scale(2.0) + da.bracket(ui[k]) + ai[j].bracket(ai[j].bracket(ui[k]));
            }
            *r = -lap - phi.ad2(ui[k]);
        }
        for &(m, k, n) in &[(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            // ε_mkn [u_k, e_n] − ε_mnk [u_n, e_k]
            rhs[m] += ui[k].bracket(ei[n]) - ui[n].bracket(ei[k]);
        }
        let l = lhs.triple(i);
        let d = magnitude(&[l[0] - rhs[0], l[1] - rhs[1], l[2] - rhs[2]]);
        diff = diff.max(d);
        scale = scale.max(magnitude(&l));
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Sampling of the cylinder `(t, θ, φ)` with `t = −log r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderConfig {
    /// Samples per unit of `t`.
    pub per_unit_t: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Length of the `t` interval starting at `−log ε`.
    pub t_span: f64,
    /// Cartesian cells per axis for the ball-side quadrature.
    pub cartesian_cells: usize,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        CylinderConfig { per_unit_t: 24, n_theta: 32, n_phi: 64, t_span: 16.0, cartesian_cells: 96 }
    }
}

/// A scalar field resampled on the cylinder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderField {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Values indexed `[it][ith][iph]`, flattened with `φ` fastest.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderReport {
    /// `W^{k,2}_α(B_ε)` norm by Cartesian midpoint quadrature.
    pub ball_norm: f64,
    /// `W^{k,2}_{Cyl,−α}` norm of the pulled-back field by cylinder quadrature.
    pub cylinder_norm: f64,
    /// Fraction of the squared cylinder norm beyond the truncated `t` range.
    pub lost_fraction: f64,
    pub field: CylinderField,
}

/// Pulls a scalar field on the punctured ball `B_ε(center)` back to the
/// half-cylinder and compares the weighted norms on both sides (`order` 0 or 1).
///
/// Ball side: `∫ r^{−2α−3}(f² + r²|∇f|²)`. Cylinder side:
/// `∫ e^{2αt}(g² + g_t² + |∇_{S²}g|²) dt dΩ`.
pub fn cylindrical_transform(
    f: &dyn Fn(Point) -> f64,
    center: Point,
    eps: f64,
    alpha: f64,
    order: u8,
    cfg: &CylinderConfig,
) -> Result<CylinderReport, AnalysisError> {
    if order > 1 || !(eps > 0.0) {
        return Err(AnalysisError::OutOfRange(format!("need order ≤ 1 and ε > 0, got {order}, {eps}")));
    }
    let at = |t: f64, th: f64, ph: f64| {
        let r = (-t).exp();
        let (st, ct) = th.sin_cos();
        let (sp, cp) = ph.sin_cos();
        f([center[0] + r * st * cp, center[1] + r * st * sp, center[2] + r * ct])
    };
    let t0 = -eps.ln();
    let nt = (cfg.t_span * cfg.per_unit_t as f64).ceil() as usize;
    let dt = cfg.t_span / nt as f64;
    let dth = std::f64::consts::PI / cfg.n_theta as f64;
    let dph = std::f64::consts::TAU / cfg.n_phi as f64;
    let theta: Vec<f64> = (0..cfg.n_theta).map(|i| (i as f64 + 0.5) * dth).collect();
    let phis: Vec<f64> = (0..cfg.n_phi).map(|i| (i as f64 + 0.5) * dph).collect();
    let integrand = |t: f64, th: f64, ph: f64| -> f64 {
        let g = at(t, th, ph);
        let mut s = g * g;
        if order == 1 {
            let d = 1e-5;
            let gt = (at(t + d, th, ph) - at(t - d, th, ph)) / (2.0 * d);
            let gth = (at(t, th + d, ph) - at(t, th - d, ph)) / (2.0 * d);
            let gph = (at(t, th, ph + d) - at(t, th, ph - d)) / (2.0 * d) / th.sin();
            s += gt * gt + gth * gth + gph * gph;
        }
        (2.0 * alpha * t).exp() * s * th.sin()
    };
    let slab = |t: f64| -> f64 {
        let mut s = 0.0;
        for &th in &theta {
            for &ph in &phis {
                s += integrand(t, th, ph);
            }
        }
        s * dth * dph
    };
    let mut values = Vec::with_capacity(nt * theta.len() * phis.len());
    let mut ts = Vec::with_capacity(nt);
    let mut cyl = 0.0;
    for it in 0..nt {
        let t = t0 + (it as f64 + 0.5) * dt;
        ts.push(t);
        for &th in &theta {
            for &ph in &phis {
                values.push(at(t, th, ph));
            }
        }
        cyl += slab(t) * dt;
    }
    // Tail beyond the truncation, on a coarser t grid.
    let tail_len = 4.0 * cfg.t_span;
    let tail_n = (tail_len * 4.0) as usize;
    let tail_dt = tail_len / tail_n as f64;
    let tail: f64 = (0..tail_n).map(|i| slab(t0 + cfg.t_span + (i as f64 + 0.5) * tail_dt) * tail_dt).sum();
    let lost_fraction = if cyl + tail > 0.0 { tail / (cyl + tail) } else { 0.0 };
    if !(lost_fraction <= 1e-3) {
        return Err(AnalysisError::ResampleUnderflow { lost: lost_fraction });
    }
    // Ball side.
    let n = cfg.cartesian_cells;
    let h = 2.0 * eps / n as f64;
    let mut ball = 0.0;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d = [(i as f64 + 0.5) * h - eps, (j as f64 + 0.5) * h - eps, (k as f64 + 0.5) * h - eps];
                let r = norm(d);
                if r > eps {
                    continue;
                }
                let x = [center[0] + d[0], center[1] + d[1], center[2] + d[2]];
                let v = f(x);
                let mut s = v * v;
                if order == 1 {
                    let step = 1e-6 * r.max(1e-3);
                    let mut g2 = 0.0;
                    for a in 0..3 {
                        let (mut p, mut m) = (x, x);
                        p[a] += step;
                        m[a] -= step;
                        let g = (f(p) - f(m)) / (2.0 * step);
                        g2 += g * g;
                    }
                    s += r * r * g2;
                }
                ball += r.powf(-2.0 * alpha - 3.0) * s;
            }
        }
    }
    ball *= h * h * h;
    Ok(CylinderReport {
        ball_norm: ball.sqrt(),
        cylinder_norm: cyl.sqrt(),
        lost_fraction,
        field: CylinderField { t: ts, theta, phi: phis, values },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureBound {
    /// `sup |F|·(λ⁻² + r²)` with `r` the distance to the nearest site.
    pub constant: f64,
    pub witness: Point,
    /// Distance of the witness to its site.
    pub witness_radius: f64,
}

/// Fits `C` in `|F_A| ≤ C/(λ⁻² + r²)` over interior nodes.
pub fn curvature_bound_check(grid: &Grid, pair: &SampledPair, sites: &[WeightSite]) -> Result<CurvatureBound, AnalysisError> {
    if sites.is_empty() {
        return Err(AnalysisError::OutOfRange("curvature bound needs at least one site".into()));
    }
    let a = &pair.a.values;
    let mask = grid.interior_mask();
    let mut best = CurvatureBound { constant: 0.0, witness: [0.0; 3], witness_radius: 0.0 };
    for i in 0..grid.len() {
        if !mask[i] {
            continue;
        }
        let x = grid.point(i);
        let (r, lam) = sites
            .iter()
            .map(|s| (distance_to(grid, x, s.position), s.lambda))
            .min_by(|p, q| p.0.total_cmp(&q.0))
            .expect("non-empty");
        let f = curvature_at(grid, i, |p, c| a[3 * p + c]);
        let c = magnitude(&f) * (lam.powi(-2) + r * r);
        if c > best.constant {
            best = CurvatureBound { constant: c, witness: x, witness_radius: r };
        }
    }
    Ok(best)
}

/// Settings of the error-smallness sweep: one glue site at the origin of a
/// normal-coordinate ball of constant sectional curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Sectional curvature; 0 gives the flat comparison run.
    pub curvature: f64,
    /// Radius where the curvature model starts blending to flat.
    pub metric_support: f64,
    /// Quadrature cells per `ε` along each axis.
    pub cells_per_eps: usize,
    pub framing: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { lambdas: vec![8.0, 16.0, 32.0], curvature: 1.0, metric_support: 1.2, cells_per_eps: 16, framing: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub eps: f64,
    /// `‖w e₀‖_{L³(B_{3ε})}`.
    pub weighted_l3: f64,
    pub core_sup: f64,
    pub neck_sup: f64,
    pub outer_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log ‖w e₀‖` against `log λ`.
    pub exponent: f64,
    pub strictly_decreasing: bool,
}

/// Measures `‖w e₀‖_{L³(B_{3ε})}` of the glued pair for each `λ`, with
/// `ε = λ^{−1/2}`, `e₀` evaluated pointwise from the closed-form pair.
pub fn error_smallness_sweep(cfg: &SweepConfig) -> Result<SweepReport, AnalysisError> {
    if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(AnalysisError::OutOfRange("λ list must be non-empty and positive".into()));
    }
    let metric = if cfg.curvature == 0.0 {
        MetricModel::Flat
    } else {
        MetricModel::normal_coords(crate::geometry::metric::Riemann::constant(cfg.curvature), cfg.metric_support)
    };
    metric.validate()?;
    let mut rows = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let site = crate::gluing::GlueSite::new([0.0; 3], lambda).with_framing(cfg.framing);
        let eps = site.epsilon();
        let bg = crate::gluing::HedgehogBackground { center: [0.0; 3], mass: lambda };
        let sites = [site];
        let field = |x: Point| crate::gluing::blend_at(bg.at_point(x), &sites, &[x]);
        let n = 6 * cfg.cells_per_eps;
        let h = 6.0 * eps / n as f64;
        let step = 1e-3 * h.min(1.0 / lambda);
        let mut row = SweepRow { lambda, eps, weighted_l3: 0.0, core_sup: 0.0, neck_sup: 0.0, outer_sup: 0.0 };
        let mut cube = 0.0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let x = [(i as f64 + 0.5) * h - 3.0 * eps, (j as f64 + 0.5) * h - 3.0 * eps, (k as f64 + 0.5) * h - 3.0 * eps];
                    let r = norm(x);
                    if r > 3.0 * eps {
                        continue;
                    }
                    let e = magnitude(&bogomolny_error_at(&field, &metric, x, step));
                    let w = (lambda.powi(-2) + r * r).sqrt();
                    let vol = if metric.is_flat() {
                        1.0
                    } else {
                        crate::geometry::metric::det3(&metric.metric_at(x)).sqrt()
                    };
                    cube += (w * e).powi(3) * vol;
                    let slot = match Region::classify(r / eps) {
                        Region::Core => &mut row.core_sup,
                        Region::Neck => &mut row.neck_sup,
                        Region::Exterior => &mut row.outer_sup,
                    };
                    *slot = slot.max(e);
                }
            }
        }
        row.weighted_l3 = (cube * h * h * h).cbrt();
        rows.push(row);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.weighted_l3).collect();
    let exponent = if rows.len() >= 2 { crate::exact_fields::log_linear_slope(&xs, &ys) } else { f64::NAN };
    let strictly_decreasing = ys.windows(2).all(|w| w[1] < w[0]);
    Ok(SweepReport { rows, exponent, strictly_decreasing })
}

/// Bogomolny residual of the sampled unit BPS monopole on a flat ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpsResidual {
    pub h: f64,
    pub sup_residual: f64,
    pub sup_higgs: f64,
    pub higgs_at_origin: f64,
    pub nodes: usize,
}

/// Samples the BPS monopole of scale `lambda` on nodes `h·ℤ³ ∩ B_radius` one
/// z-plane at a time (three planes in memory) and takes the sup of the
/// central-difference residual `|∗F − d_AΦ|` over nodes whose six neighbours
/// lie in the ball.
pub fn bps_residual_ball(lambda: f64, radius: f64, h: f64) -> Result<BpsResidual, AnalysisError> {
    if !(h > 0.0 && radius > 4.0 * h && lambda > 0.0) {
        return Err(AnalysisError::OutOfRange(format!("need λ > 0 and radius > 4h, got λ={lambda}, r={radius}, h={h}")));
    }
    let spec = crate::exact_fields::BpsSpec::new([0.0; 3], lambda);
    let m = (radius / h).floor() as i64;
    let side = (2 * m + 1) as usize;
    let coord = |i: usize| (i as i64 - m) as f64 * h;
    let sample_plane = |k: usize| -> Vec<crate::exact_fields::Su2Pair> {
        let z = coord(k);
        let mut out = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                out.push(crate::exact_fields::eval_bps(&spec, [coord(i), coord(j), z]));
            }
        }
        out
    };
    let inside = |i: usize, j: usize, k: usize| norm([coord(i), coord(j), coord(k)]) <= radius;
    let mut planes = [sample_plane(0), sample_plane(1), Vec::new()];
    let mut out = BpsResidual { h, sup_residual: 0.0, sup_higgs: 0.0, higgs_at_origin: f64::NAN, nodes: 0 };
    let scan_higgs = |plane: &[crate::exact_fields::Su2Pair], k: usize, out: &mut BpsResidual| {
        for j in 0..side {
            for i in 0..side {
                if inside(i, j, k) {
                    out.sup_higgs = out.sup_higgs.max(plane[j * side + i].phi.norm());
                    if i as i64 == m && j as i64 == m && k as i64 == m {
                        out.higgs_at_origin = plane[j * side + i].phi.norm();
                    }
                }
            }
        }
    };
    scan_higgs(&planes[0], 0, &mut out);
    for k in 1..side - 1 {
        planes[2] = sample_plane(k + 1);
        scan_higgs(&planes[1], k, &mut out);
        let inv = 0.5 / h;
        for j in 1..side - 1 {
            for i in 1..side - 1 {
                let nbrs = [(i + 1, j, k), (i - 1, j, k), (i, j + 1, k), (i, j - 1, k), (i, j, k + 1), (i, j, k - 1)];
                if !inside(i, j, k) || !nbrs.iter().all(|&(a, b, c)| inside(a, b, c)) {
                    continue;
                }
                let get = |di: isize, dj: isize, dk: isize| {
                    let p = &planes[(1 + dk) as usize];
                    p[(j as isize + dj) as usize * side + (i as isize + di) as usize]
                };
                let c = get(0, 0, 0);
                let d = |ax: usize| -> crate::exact_fields::Su2Pair {
                    let (p, q) = match ax {
                        0 => (get(1, 0, 0), get(-1, 0, 0)),
                        1 => (get(0, 1, 0), get(0, -1, 0)),
                        _ => (get(0, 0, 1), get(0, 0, -1)),
                    };
                    p.add(q.scale(-1.0)).scale(inv)
                };
                let ds = [d(0), d(1), d(2)];
                let mut e = [Su2::ZERO; 3];
                for (mm, ee) in e.iter_mut().enumerate() {
                    let (a, b) = ((mm + 1) % 3, (mm + 2) % 3);
                    let f = ds[a].a[b] - ds[b].a[a] + c.a[a].bracket(c.a[b]);
                    *ee = f - ds[mm].phi - c.a[mm].bracket(c.phi);
                }
                out.sup_residual = out.sup_residual.max(magnitude(&e));
                out.nodes += 1;
            }
        }
        planes.rotate_left(1);
    }
    scan_higgs(&planes[1], side - 1, &mut out);
    Ok(out)
}

/// Observed convergence order between successive refinements.
pub fn observed_orders(hs: &[f64], errors: &[f64]) -> Vec<f64> {
    hs.windows(2).zip(errors.windows(2)).map(|(h, e)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln()).collect()
}
