//! Quadratic part of the Bogomolny map and the Picard iteration
//! `f = −e₀ − q(f)` that deforms the glued pair into a solution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use thiserror::Error;

use crate::algebra::Su2;
use crate::analysis::{bogomolny_error, weighted_norm, weighted_pair_norm, AnalysisError, WeightSpec};
use crate::geometry::forms::{star2_at, FormField};
use crate::geometry::grid::{Grid, Point};
use crate::geometry::metric::MetricField;
use crate::gluing::SampledPair;
use crate::linear_system::{right_inverse, CgConfig, LinearError, LinearizedOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformationError {
    #[error("fixed-point gate failed: ‖e₀‖ = {norm:.4e} exceeds 1/(10K) = {bound:.4e}")]
    GateFailed { norm: f64, bound: f64 },
    #[error("Picard updates grew for 3 consecutive iterations (last update {update:.3e} at step {iteration})")]
    Diverged { iteration: usize, update: f64 },
    #[error("no convergence after {iterations} Picard steps (relative update {update:.3e})")]
    NoConvergence { iterations: usize, update: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

const EPS: [(usize, usize, usize); 3] = [(0, 1, 2), (1, 2, 0), (2, 0, 1)];

/// `Q(a, φ) = ∗½[a∧a] − [a, φ]` at one node.
pub fn quadratic_at(metric: &MetricField, idx: usize, a: [Su2; 3], phi: Su2) -> [Su2; 3] {
    let mut aa = [Su2::ZERO; 3];
    for &(m, j, k) in &EPS {
        aa[m] = a[j].bracket(a[k]);
    }
    let s = star2_at(metric, idx, aa);
    [0, 1, 2].map(|k| s[k] - a[k].bracket(phi))
}

/// Pointwise `Q` of a sampled pair.
pub fn quadratic(grid: &Grid, metric: &MetricField, v: &SampledPair) -> FormField {
    FormField::from_fn(grid, 1, |i| quadratic_at(metric, i, v.a.triple(i), v.phi.values[i]))
}

/// `q(f) = Q(d₂⁻¹f)` with the right inverse `d₂*(d₂d₂*)⁻¹`, restricted to the
/// unknown mask. Keeps the last solution as a warm start.
pub struct QMap<'a> {
    pub op: &'a LinearizedOperator<'a>,
    pub mask: Vec<bool>,
    pub cg: CgConfig,
    warm: RefCell<Option<FormField>>,
    solves: RefCell<usize>,
}

impl<'a> QMap<'a> {
    pub fn new(op: &'a LinearizedOperator<'a>, mask: Vec<bool>, cg: CgConfig) -> Self {
        QMap { op, mask, cg, warm: RefCell::new(None), solves: RefCell::new(0) }
    }

    /// Number of linear solves so far.
    pub fn solves(&self) -> usize {
        *self.solves.borrow()
    }

    /// `d₂⁻¹f`.
    pub fn invert(&self, f: &FormField) -> Result<SampledPair, LinearError> {
        let warm = self.warm.borrow().clone();
        let (xi, sol) = right_inverse(self.op, f, Some(&self.mask), &self.cg, warm.as_ref())?;
        *self.warm.borrow_mut() = Some(sol.u);
        *self.solves.borrow_mut() += 1;
        Ok(xi)
    }

    /// `q(f)` together with `d₂⁻¹f`.
    pub fn apply_with_preimage(&self, f: &FormField) -> Result<(FormField, SampledPair), LinearError> {
        let xi = self.invert(f)?;
        let mut q = quadratic(self.op.grid, self.op.metric, &xi);
        q.restrict(&self.mask);
        Ok((q, xi))
    }

    pub fn apply(&self, f: &FormField) -> Result<FormField, LinearError> {
        Ok(self.apply_with_preimage(f)?.0)
    }

    /// `q̃(f, f′) = ½(q(f + f′) − q(f) − q(f′))`.
    pub fn bilinear(&self, f: &FormField, g: &FormField) -> Result<FormField, LinearError> {
        let s = self.apply(&f.add(g))?;
        let a = self.apply(f)?;
        let b = self.apply(g)?;
        Ok(s.sub(&a).sub(&b).scale(0.5))
    }
}

/// Norm in which the gate and `K` are measured: `L²` with the weights of
/// `spec` shifted by −2.
pub struct GateNorm<'a> {
    pub grid: &'a Grid,
    pub metric: &'a MetricField,
    pub spec: WeightSpec,
    pub background: &'a SampledPair,
}

impl<'a> GateNorm<'a> {
    pub fn new(grid: &'a Grid, metric: &'a MetricField, spec: &WeightSpec, background: &'a SampledPair) -> Self {
        GateNorm { grid, metric, spec: spec.shifted(-2.0), background }
    }

    pub fn norm(&self, f: &FormField) -> Result<f64, AnalysisError> {
        weighted_norm(self.grid, self.metric, f, 2.0, &self.spec, 0, Some(self.background))
    }
}

/// Random right-hand sides for the Lipschitz estimate: Gaussian bumps of
/// random su(2) direction and width `scale` at `centers`, plus a bump at a
/// uniformly random point.
pub fn random_sample(grid: &Grid, mask: &[bool], centers: &[Point], scale: f64, rng: &mut ChaCha8Rng) -> FormField {
    let mut bumps: Vec<(Point, f64, [Su2; 3])> = Vec::new();
    let rand_su2 = |rng: &mut ChaCha8Rng| Su2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let (lo, hi) = (grid.point(0), grid.point(grid.len() - 1));
    let free: Point = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1]), rng.gen_range(lo[2]..=hi[2])];
    for &c in centers.iter().chain(std::iter::once(&free)) {
        let width = scale * rng.gen_range(0.5..2.0);
        let shift: Point = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0) * width);
        let coef = [rand_su2(rng), rand_su2(rng), rand_su2(rng)];
        bumps.push(([c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]], width, coef));
    }
    let mut f = FormField::from_fn(grid, 1, |i| {
        let x = grid.point(i);
        let mut out = [Su2::ZERO; 3];
        for (c, w, coef) in &bumps {
            let r = grid.distance(x, *c) / w;
            let g = (-0.5 * r * r).exp();
            for k in 0..3 {
                out[k] += coef[k] * g;
            }
        }
        out
    });
    f.restrict(mask);
    f
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KEstimate {
    /// Largest observed ratio times the safety factor.
    pub k: f64,
    pub max_ratio: f64,
    pub pairs: usize,
    pub solves: usize,
}

/// `K ≈ 2·max ‖q(f) − q(f′)‖/((‖f‖ + ‖f′‖)‖f − f′‖)` over all pairs of the
/// given samples. Each sample costs one solve.
pub fn estimate_k(qmap: &QMap, norm: &GateNorm, samples: &[FormField]) -> Result<KEstimate, DeformationError> {
    if samples.len() < 2 {
        return Err(DeformationError::InvalidInput("K estimate needs at least two samples".into()));
    }
    let before = qmap.solves();
    let mut qs = Vec::with_capacity(samples.len());
    let mut norms = Vec::with_capacity(samples.len());
    for f in samples {
        qs.push(qmap.apply(f)?);
        norms.push(norm.norm(f)?);
    }
    let mut max_ratio: f64 = 0.0;
    let mut pairs = 0;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let diff = norm.norm(&samples[i].sub(&samples[j]))?;
            let denom = (norms[i] + norms[j]) * diff;
            if denom > 0.0 {
                max_ratio = max_ratio.max(norm.norm(&qs[i].sub(&qs[j]))? / denom);
                pairs += 1;
            }
        }
    }
    Ok(KEstimate { k: 2.0 * max_ratio, max_ratio, pairs, solves: qmap.solves() - before })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointConfig {
    pub max_iter: usize,
    /// Stop when `‖f_{n+1} − f_n‖/‖f_{n+1}‖` falls below this.
    pub tol: f64,
    /// Required improvement of the weighted Bogomolny residual.
    pub residual_factor: f64,
    /// Skip the gate (for diagnostics and λ-sweeps); the report still records it.
    pub ignore_gate: bool,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { max_iter: 30, tol: 1e-8, residual_factor: 10.0, ignore_gate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPointStep {
    pub n: usize,
    pub f_norm: f64,
    /// `‖f_{n+1} − f_n‖` in the gate norm.
    pub update: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointReport {
    pub e_norm: f64,
    pub k: f64,
    pub gate_bound: f64,
    pub gate_passed: bool,
    pub f_norm: f64,
    /// `‖f‖ ≤ 2‖e₀‖`.
    pub f_bound_holds: bool,
    pub residual_before: f64,
    pub residual_after: f64,
    pub residual_improved: bool,
    /// Largest ratio of successive updates after the first step.
    pub contraction: f64,
    pub history: Vec<FixedPointStep>,
    /// `‖(a, φ)‖_{W^{1,2}}` in the solver weights.
    pub deformation_norm: f64,
    /// `‖d₁*(a, φ)‖ / ‖(a, φ)‖` in plain `L²`.
    pub slice_defect: f64,
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub f: FormField,
    pub deformation: SampledPair,
    pub pair: SampledPair,
    pub report: FixedPointReport,
}

/// Picard iteration `f_{n+1} = −e₀ − q(f_n)` from `f₀ = −e₀`, then
/// `(A, Φ) = (A₀, Φ₀) + d₂⁻¹f`.
pub fn fixed_point_solve(
    qmap: &QMap,
    norm: &GateNorm,
    k: f64,
    solver_spec: &WeightSpec,
    cfg: &FixedPointConfig,
) -> Result<FixedPointResult, DeformationError> {
    let op = qmap.op;
    let (grid, metric, bg) = (op.grid, op.metric, op.background);
    let mut e0 = bogomolny_error(grid, bg, metric);
    e0.restrict(&qmap.mask);
    let e_norm = norm.norm(&e0)?;
    let gate_bound = if k > 0.0 { 1.0 / (10.0 * k) } else { f64::INFINITY };
    let gate_passed = e_norm <= gate_bound;
    if !gate_passed && !cfg.ignore_gate {
        return Err(DeformationError::GateFailed { norm: e_norm, bound: gate_bound });
    }
    let minus_e = e0.scale(-1.0);
    let mut f = minus_e.clone();
    let mut history = Vec::new();
    let mut xi = SampledPair::zeros(grid.len());
    let mut converged = e_norm == 0.0;
    let mut growth = 0;
    let mut last_update = f64::INFINITY;
    let mut contraction: f64 = 0.0;
    let mut n = 0;
    while !converged {
        if n >= cfg.max_iter {
            return Err(DeformationError::NoConvergence { iterations: n, update: last_update });
        }
        let (q, pre) = qmap.apply_with_preimage(&f)?;
        xi = pre;
        let next = minus_e.sub(&q);
        let update = norm.norm(&next.sub(&f))?;
        let f_norm = norm.norm(&next)?;
        if n > 0 && last_update > 0.0 {
            contraction = contraction.max(update / last_update);
        }
        growth = if update > last_update { growth + 1 } else { 0 };
        if growth >= 3 {
            return Err(DeformationError::Diverged { iteration: n, update });
        }
        history.push(FixedPointStep { n, f_norm, update });
        log::debug!("picard step {n}: ‖f‖ = {f_norm:.6e}, update = {update:.3e}");
        last_update = update;
        converged = update <= cfg.tol * f_norm.max(f64::MIN_POSITIVE);
        f = next;
        n += 1;
    }
    // The preimage of the converged f, not of the previous iterate.
    if e_norm > 0.0 {
        xi = qmap.invert(&f)?;
    }
    let mut pair = bg.clone();
    crate::linear_system::pair_axpy(&mut pair, 1.0, &xi);
    let mut after = bogomolny_error(grid, &pair, metric);
    after.restrict(&qmap.mask);
    let residual_after = norm.norm(&after)?;
    let f_norm = norm.norm(&f)?;
    let deformation_norm = if e_norm > 0.0 { weighted_pair_norm(grid, metric, &xi, 2.0, solver_spec, 1, Some(bg))? } else { 0.0 };
    let xi_l2 = crate::linear_system::pair_norm(grid, metric, &xi);
    let slice_defect = if xi_l2 > 0.0 {
        crate::geometry::forms::l2_norm(grid, metric, &op.apply_d1_star(&xi)) / xi_l2
    } else {
        0.0
    };
    let report = FixedPointReport {
        e_norm,
        k,
        gate_bound,
        gate_passed,
        f_norm,
        f_bound_holds: f_norm <= 2.0 * e_norm,
        residual_before: e_norm,
        residual_after,
        residual_improved: residual_after * cfg.residual_factor <= e_norm,
        contraction,
        history,
        deformation_norm,
        slice_defect,
    };
    Ok(FixedPointResult { f, deformation: xi, pair, report })
}

/// Seeds for [`random_sample`], so runs are reproducible.
pub fn sample_set(grid: &Grid, mask: &[bool], centers: &[Point], scale: f64, count: usize, seed: u64) -> Vec<FormField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_sample(grid, mask, centers, scale, &mut rng)).collect()
}

/// The glued two-dipole torus problem with its weights and unknown mask.
pub struct GluedProblem {
    pub config: crate::gluing::TwoDipoleConfig,
    pub grid: Grid,
    pub metric: MetricField,
    pub pair: SampledPair,
    pub sites: Vec<crate::gluing::GlueSite>,
    pub anti_sites: Vec<Point>,
    pub mask: Vec<bool>,
    pub spec: WeightSpec,
}

impl GluedProblem {
    pub fn build(config: &crate::gluing::TwoDipoleConfig, alpha1: f64, alpha2: f64, unit: f64) -> Result<Self, DeformationError> {
        let (grid, bg, sites) = crate::gluing::two_dipole_setup(config)
            .map_err(|e| DeformationError::InvalidInput(e.to_string()))?;
        let pair = crate::gluing::assemble_approximate(&grid, &bg, &sites)
            .map_err(|e| DeformationError::InvalidInput(e.to_string()))?;
        let anti_sites: Vec<Point> = config.dipoles().iter().map(|d| d.p(config.period)).collect();
        let q = sites.iter().map(|s| crate::analysis::WeightSite { position: s.position, lambda: s.lambda }).collect();
        let spec = WeightSpec::new(q, anti_sites.clone(), alpha1, alpha2, unit)?;
        spec.validate_for_solver()?;
        let mask = grid.interior_mask();
        Ok(GluedProblem { config: config.clone(), grid, metric: MetricField::flat(), pair, sites, anti_sites, mask, spec })
    }

    /// Glue and anti sites, used as bump centres for the `K` samples.
    pub fn centers(&self) -> Vec<Point> {
        self.sites.iter().map(|s| s.position).chain(self.anti_sites.iter().copied()).collect()
    }

    pub fn epsilon(&self) -> f64 {
        self.config.lambda.powf(-0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    /// Random samples for `K`; the Bogomolny error itself is always added.
    pub k_samples: usize,
    pub seed: u64,
    /// Solver tolerance for the `K` samples.
    pub k_tol: f64,
    /// Solver tolerance inside the Picard loop.
    pub picard_tol: f64,
    pub fixed_point: FixedPointConfig,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig { k_samples: 9, seed: 7, k_tol: 1e-6, picard_tol: 1e-10, fixed_point: FixedPointConfig::default() }
    }
}

/// Estimates `K` and runs the Picard iteration on a glued problem.
pub fn deform(problem: &GluedProblem, cfg: &DeformConfig) -> Result<(KEstimate, FixedPointResult), DeformationError> {
    let op = LinearizedOperator::new(&problem.grid, &problem.metric, &problem.pair)?;
    let norm = GateNorm::new(&problem.grid, &problem.metric, &problem.spec, &problem.pair);
    let mut samples = sample_set(&problem.grid, &problem.mask, &problem.centers(), problem.epsilon(), cfg.k_samples, cfg.seed);
    let mut e0 = bogomolny_error(&problem.grid, &problem.pair, &problem.metric);
    e0.restrict(&problem.mask);
    samples.push(e0);
    let kq = QMap::new(&op, problem.mask.clone(), CgConfig { tol: cfg.k_tol, ..CgConfig::default() });
    let k = estimate_k(&kq, &norm, &samples)?;
    log::info!("K estimate {:.4e} from {} pairs", k.k, k.pairs);
    let qmap = QMap::new(&op, problem.mask.clone(), CgConfig { tol: cfg.picard_tol, ..CgConfig::default() });
    let res = fixed_point_solve(&qmap, &norm, k.k, &problem.spec, &cfg.fixed_point)?;
    Ok((k, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::WeightSite;
    use crate::exact_fields::{eval_bps, BpsSpec, Su2Pair};
    use crate::geometry::grid::GridDomain;

    fn random_pair(grid: &Grid, seed: u64) -> SampledPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = || Su2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut out = SampledPair::zeros(grid.len());
        for i in 0..grid.len() {
            out.set(i, Su2Pair { a: [r(), r(), r()], phi: r() });
        }
        out
    }

    #[test]
    fn quadratic_is_homogeneous_and_vanishes_on_parallel_fields() {
        let grid = GridDomain::torus(2.0, 8).build().unwrap();
        let flat = MetricField::flat();
        let v = random_pair(&grid, 1);
        let q1 = quadratic(&grid, &flat, &v);
        let mut v2 = v.clone();
        crate::linear_system::pair_axpy(&mut v2, 1.0, &v);
        let q2 = quadratic(&grid, &flat, &v2);
        assert!(q2.sub(&q1.scale(4.0)).sup_norm(&grid.active) < 1e-12);

        let mut only_phi = v.clone();
        only_phi.a = FormField::zeros(1, grid.len());
        assert_eq!(quadratic(&grid, &flat, &only_phi).sup_norm(&grid.active), 0.0);

        let axis = Su2::new(0.3, -0.4, 0.5);
        let par = SampledPair::from_fn(&grid, |i| {
            let s = i as f64 * 0.01;
            Su2Pair { a: [axis * s, axis * (1.0 - s), axis * 2.0], phi: axis * -s }
        });
        assert!(quadratic(&grid, &flat, &par).sup_norm(&grid.active) < 1e-12);
    }

    #[test]
    fn bogomolny_map_expands_exactly() {
        let grid = GridDomain::ball(1.0, 0.1).build().unwrap();
        let flat = MetricField::flat();
        let bps = BpsSpec::new([0.1, 0.0, -0.05], 3.0);
        let bg = SampledPair::from_fn(&grid, |i| eval_bps(&bps, grid.point(i)));
        let v = random_pair(&grid, 2);
        let op = LinearizedOperator::new(&grid, &flat, &bg).unwrap();
        let mut sum = bg.clone();
        crate::linear_system::pair_axpy(&mut sum, 1.0, &v);
        let lhs = bogomolny_error(&grid, &sum, &flat);
        let rhs = bogomolny_error(&grid, &bg, &flat).add(&op.apply_d2(&v)).add(&quadratic(&grid, &flat, &v));
        let mask = grid.interior_mask();
        assert!(lhs.sub(&rhs).sup_norm(&mask) < 1e-11, "{}", lhs.sub(&rhs).sup_norm(&mask));
    }

    fn small_setup() -> (Grid, MetricField, SampledPair, WeightSpec) {
        let grid = GridDomain::ball(1.2, 0.1).build().unwrap();
        let bps = BpsSpec::new([0.0; 3], 2.0);
        let bg = SampledPair::from_fn(&grid, |i| eval_bps(&bps, grid.point(i)));
        let spec = WeightSpec::new(vec![WeightSite { position: [0.0; 3], lambda: 2.0 }], vec![], -0.25, -0.25, 1.0).unwrap();
        (grid, MetricField::flat(), bg, spec)
    }

    #[test]
    fn q_map_polarization_and_k_scaling() {
        let (grid, flat, bg, spec) = small_setup();
        let op = LinearizedOperator::new(&grid, &flat, &bg).unwrap();
        let mask = grid.interior_mask();
        let cg = CgConfig { tol: 1e-11, ..CgConfig::default() };
        let qmap = QMap::new(&op, mask.clone(), cg);
        let zero = FormField::zeros(1, grid.len());
        assert_eq!(qmap.apply(&zero).unwrap().sup_norm(&grid.active), 0.0);
        let samples = sample_set(&grid, &mask, &[[0.0; 3]], 0.3, 3, 9);
        let pol = qmap.bilinear(&samples[0], &samples[0]).unwrap();
        let direct = qmap.apply(&samples[0]).unwrap();
        assert!(pol.sub(&direct).sup_norm(&mask) < 1e-8 * direct.sup_norm(&mask));

        let norm = GateNorm::new(&grid, &flat, &spec, &bg);
        let k1 = estimate_k(&qmap, &norm, &samples).unwrap();
        let big: Vec<FormField> = samples.iter().map(|f| f.scale(10.0)).collect();
        let k10 = estimate_k(&qmap, &norm, &big).unwrap();
        assert!(k1.k > 0.0 && (k1.k - k10.k).abs() < 1e-6 * k1.k, "{k1:?} {k10:?}");
        assert_eq!(k1.pairs, 3);
    }

    #[test]
    fn zero_error_leaves_the_pair_unchanged() {
        let (grid, flat, _, spec) = small_setup();
        let bg = SampledPair::from_fn(&grid, |_| Su2Pair { a: [Su2::ZERO; 3], phi: Su2::new(0.0, 0.0, 1.5) });
        let op = LinearizedOperator::new(&grid, &flat, &bg).unwrap();
        let qmap = QMap::new(&op, grid.interior_mask(), CgConfig::default());
        let norm = GateNorm::new(&grid, &flat, &spec, &bg);
        let res = fixed_point_solve(&qmap, &norm, 1.0, &spec, &FixedPointConfig::default()).unwrap();
        assert_eq!(res.report.e_norm, 0.0);
        assert_eq!(res.f.sup_norm(&grid.active), 0.0);
        assert_eq!(res.pair.phi.values, bg.phi.values);
    }

    #[test]
    fn small_error_converges_and_large_error_is_gated() {
        let (grid, flat, bps, spec) = small_setup();
        // Perturb an exact monopole so that e₀ is small and known.
        let mut bg = bps.clone();
        let bump = SampledPair::from_fn(&grid, |i| {
            let x = grid.point(i);
            let g = 0.02 * (-4.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp();
            Su2Pair { a: [Su2::new(0.0, g, 0.0), Su2::new(g, 0.0, 0.0), Su2::ZERO], phi: Su2::new(0.0, 0.0, g) }
        });
        crate::linear_system::pair_axpy(&mut bg, 1.0, &bump);
        let mask = grid.interior_mask();
        let op = LinearizedOperator::new(&grid, &flat, &bg).unwrap();
        let qmap = QMap::new(&op, mask.clone(), CgConfig { tol: 1e-11, ..CgConfig::default() });
        let norm = GateNorm::new(&grid, &flat, &spec, &bg);
        let samples = sample_set(&grid, &mask, &[[0.0; 3]], 0.3, 4, 3);
        let k = estimate_k(&qmap, &norm, &samples).unwrap().k;
        let res = fixed_point_solve(&qmap, &norm, k, &spec, &FixedPointConfig::default()).unwrap();
        let r = &res.report;
        assert!(r.gate_passed && r.f_bound_holds && r.residual_improved, "{r:?}");
        assert!(r.contraction < 0.5, "{r:?}");

        let tiny_k = 1.0 / (5.0 * r.e_norm);
        let gated = fixed_point_solve(&qmap, &norm, tiny_k, &spec, &FixedPointConfig::default());
        assert!(matches!(gated, Err(DeformationError::GateFailed { .. })));
    }
}
