//! Closed-form BPS and Dirac monopoles, their scalings and the u(1) lift.
//!
//! The BPS monopole is written in the radial ("hedgehog") gauge:
//! `Φ = −λ H(λr) n`, `A_k = λ K(λr) (n × e_k)` with `H(s) = coth s − 1/s`
//! and `K(s) = 1/sinh s − 1/s`. The sign of `Φ` is the one for which
//! `∗F_A = d_A Φ` holds with the orientation `dx∧dy∧dz`; asymptotically the
//! Higgs field points along `−n`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::Su2;
use crate::geometry::grid::{norm, Point};
use crate::ramp::{smoothstep7, smoothstep7_deriv};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactFieldError {
    #[error("point lies on the excluded axis of the {0:?} chart")]
    OnExcludedAxis(Chart),
    #[error("point coincides with the Dirac singularity")]
    AtSingularity,
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("Dirac coefficient must be non-zero")]
    ZeroCoefficient,
}

/// Below this value of `λr` the series branches are used.
pub const SERIES_CUTOFF: f64 = 0.05;

/// `coth s − 1/s`.
pub fn higgs_profile(s: f64) -> f64 {
    let s = s.abs();
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        s * (1.0 / 3.0 - s2 / 45.0 + 2.0 * s2 * s2 / 945.0)
    } else {
        1.0 / s.tanh() - 1.0 / s
    }
}

/// `1/sinh s − 1/s`.
pub fn connection_profile(s: f64) -> f64 {
    let s = s.abs();
    if s < SERIES_CUTOFF {
        let s2 = s * s;
        s * (-1.0 / 6.0 + 7.0 * s2 / 360.0 - 31.0 * s2 * s2 / 15120.0)
    } else {
        1.0 / s.sinh() - 1.0 / s
    }
}

/// `coth s − 1` without cancellation.
pub fn coth_minus_one(s: f64) -> f64 {
    2.0 / (2.0 * s).exp_m1()
}

/// Longitudinal and transverse magnitudes of `d_A Φ` for the unit BPS monopole:
/// `|1/r² − 1/sinh² r|` and `|(1/r − coth r)/sinh r|`.
pub fn higgs_derivative_profiles(r: f64) -> (f64, f64) {
    if r < SERIES_CUTOFF {
        let r2 = r * r;
        (1.0 / 3.0 - r2 / 15.0, 1.0 / 3.0 - 7.0 * r2 / 90.0)
    } else {
        let sh = r.sinh();
        ((1.0 / (r * r) - 1.0 / (sh * sh)).abs(), (higgs_profile(r) / sh).abs())
    }
}

/// A point value of an su(2) pair: connection coefficients and Higgs field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Su2Pair {
    pub a: [Su2; 3],
    pub phi: Su2,
}

impl Su2Pair {
    pub fn scale(self, s: f64) -> Self {
        Su2Pair { a: [self.a[0] * s, self.a[1] * s, self.a[2] * s], phi: self.phi * s }
    }

    pub fn add(self, o: Su2Pair) -> Self {
        Su2Pair { a: [self.a[0] + o.a[0], self.a[1] + o.a[1], self.a[2] + o.a[2]], phi: self.phi + o.phi }
    }
}

/// A point value of an abelian pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct U1Pair {
    pub a: [f64; 3],
    pub phi: f64,
}

/// Embeds an abelian pair along the third su(2) axis, preserving magnitudes.
pub fn lift_u1_to_su2(p: U1Pair) -> Su2Pair {
    Su2Pair { a: [Su2::from_u1(p.a[0]), Su2::from_u1(p.a[1]), Su2::from_u1(p.a[2])], phi: Su2::from_u1(p.phi) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpsSpec {
    pub center: Point,
    pub lambda: f64,
    /// Gauge rotation about the Higgs direction, switched on away from the zero.
    #[serde(default)]
    pub framing: f64,
}

impl BpsSpec {
    pub fn new(center: Point, lambda: f64) -> Self {
        BpsSpec { center, lambda, framing: 0.0 }
    }

    pub fn with_framing(mut self, theta: f64) -> Self {
        self.framing = theta;
        self
    }

    /// Inner and outer radii of the framing ramp.
    pub fn framing_radii(&self) -> (f64, f64) {
        let eps = self.lambda.powf(-0.5);
        (0.2 * eps, 0.8 * eps)
    }
}

/// Rodrigues rotation of `v` about the unit vector `n`.
fn rotate(v: Su2, n: Su2, angle: f64) -> Su2 {
    v.rotate(n, angle)
}

/// Evaluates the scaled BPS monopole at `x` given the displacement from its centre.
pub fn eval_bps_displacement(spec: &BpsSpec, d: Point) -> Su2Pair {
    let lam = spec.lambda;
    let r = norm(d);
    let s = lam * r;
    let mut out = Su2Pair::default();
    if r == 0.0 {
        return out;
    }
    let n = Su2(d).scale(1.0 / r);
    // −λ·H(λr)·n, with H(s)/s finite at 0; written via d to stay smooth.
    let hr = -if s < SERIES_CUTOFF { lam * lam * higgs_profile(s) / s } else { lam * higgs_profile(s) / r };
    let kr = if s < SERIES_CUTOFF { lam * lam * connection_profile(s) / s } else { lam * connection_profile(s) / r };
    out.phi = Su2(d).scale(hr);
    for k in 0..3 {
        out.a[k] = Su2(d).bracket(Su2::basis(k)).scale(kr);
    }
    if spec.framing != 0.0 {
        let (r0, r1) = spec.framing_radii();
        // Gauge transformation by a rotation of angle α(r) about n:
        // A ↦ R A − ω with ω_k = ∂_kα n + sin α ∂_k n + (1 − cos α) n × ∂_k n.
        // The angle enters A through its derivative, so the ramp needs one more
        // order of smoothness than the quintic.
        let t = (r - r0) / (r1 - r0);
        let alpha = spec.framing * smoothstep7(t);
        if alpha != 0.0 {
            let dalpha = spec.framing * smoothstep7_deriv(t) / (r1 - r0);
            let (sa, ca) = alpha.sin_cos();
            for k in 0..3 {
                let ek = Su2::basis(k);
                let dn = (ek - n.scale(n.0[k])).scale(1.0 / r);
                let omega = n.scale(dalpha * n.0[k]) + dn.scale(sa) + n.bracket(dn).scale(1.0 - ca);
                out.a[k] = rotate(out.a[k], n, alpha) - omega;
            }
            out.phi = rotate(out.phi, n, alpha);
        }
    }
    out
}

/// Scaled BPS monopole `(λA(λ·), λΦ(λ·))` centred at `spec.center`.
pub fn eval_bps(spec: &BpsSpec, x: Point) -> Su2Pair {
    eval_bps_displacement(spec, [x[0] - spec.center[0], x[1] - spec.center[1], x[2] - spec.center[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// Regular on the upper axis, excludes the negative polar axis.
    UMinus,
    /// Regular on the lower axis, excludes the positive polar axis.
    UPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiracSpec {
    pub center: Point,
    /// Near-field coefficient: `φ = −c/r + m`.
    pub c: f64,
    pub m: f64,
    pub chart: Chart,
}

impl DiracSpec {
    /// Integer charge in the `c = k/2` reading.
    pub fn charge(&self) -> f64 {
        2.0 * self.c
    }
}

/// Local Dirac monopole: hemisphere-chart connection and `φ = −c/r + m`.
pub fn eval_dirac_local(spec: &DiracSpec, x: Point) -> Result<U1Pair, ExactFieldError> {
    if spec.c == 0.0 {
        return Err(ExactFieldError::ZeroCoefficient);
    }
    let d = [x[0] - spec.center[0], x[1] - spec.center[1], x[2] - spec.center[2]];
    let r = norm(d);
    if r <= 1e-14 {
        return Err(ExactFieldError::AtSingularity);
    }
    let rho2 = d[0] * d[0] + d[1] * d[1];
    let cos_polar = d[2] / r;
    let k = spec.charge();
    let coeff = match spec.chart {
        Chart::UMinus => {
            if rho2 <= 1e-24 * r * r && d[2] < 0.0 {
                return Err(ExactFieldError::OnExcludedAxis(spec.chart));
            }
            k * (1.0 - cos_polar) / 2.0
        }
        Chart::UPlus => {
            if rho2 <= 1e-24 * r * r && d[2] > 0.0 {
                return Err(ExactFieldError::OnExcludedAxis(spec.chart));
            }
            k * (-1.0 - cos_polar) / 2.0
        }
    };
    // dθ = (−y dx + x dy)/ρ²; on the regular half of the axis the coefficient vanishes
    // to second order in ρ, so the limit is zero.
    let a = if rho2 <= 1e-24 * r * r {
        [0.0; 3]
    } else {
        [-coeff * d[1] / rho2, coeff * d[0] / rho2, 0.0]
    };
    Ok(U1Pair { a, phi: -spec.c / r + spec.m })
}

/// The transition 1-form `A_{U−} − A_{U+} = k dθ` at `x`.
pub fn chart_transition(spec: &DiracSpec, x: Point) -> Result<[f64; 3], ExactFieldError> {
    let minus = eval_dirac_local(&DiracSpec { chart: Chart::UMinus, ..*spec }, x)?;
    let plus = eval_dirac_local(&DiracSpec { chart: Chart::UPlus, ..*spec }, x)?;
    Ok([minus.a[0] - plus.a[0], minus.a[1] - plus.a[1], minus.a[2] - plus.a[2]])
}

/// Exact local models that can be rescaled about their centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactPair {
    Bps(BpsSpec),
    Dirac(DiracSpec),
}

/// Rescales `(A, Φ)(x) ↦ (λA(λx), λΦ(λx))` about the model's centre.
pub fn scale_pair(pair: ExactPair, lambda: f64) -> Result<ExactPair, ExactFieldError> {
    if !(lambda > 0.0) {
        return Err(ExactFieldError::NonPositiveScale(lambda));
    }
    Ok(match pair {
        ExactPair::Bps(s) => ExactPair::Bps(BpsSpec { lambda: s.lambda * lambda, ..s }),
        // −c/(λr)·λ + λm: the pole is scale invariant and only the constant moves.
        ExactPair::Dirac(s) => ExactPair::Dirac(DiracSpec { m: s.m * lambda, ..s }),
    })
}

impl ExactPair {
    /// Evaluates as an su(2) pair (Dirac models are lifted).
    pub fn eval(&self, x: Point) -> Result<Su2Pair, ExactFieldError> {
        match self {
            ExactPair::Bps(s) => Ok(eval_bps(s, x)),
            ExactPair::Dirac(s) => eval_dirac_local(s, x).map(lift_u1_to_su2),
        }
    }
}

/// Charge-matched abelian model written in the radial gauge of the BPS field:
/// `Φ = −(m − c/r) n`, `A_k = −(n × e_k)/r`.
pub fn dirac_radial_gauge(spec: &DiracSpec, x: Point) -> Result<Su2Pair, ExactFieldError> {
    let d = [x[0] - spec.center[0], x[1] - spec.center[1], x[2] - spec.center[2]];
    let r = norm(d);
    if r <= 1e-14 {
        return Err(ExactFieldError::AtSingularity);
    }
    let n = Su2(d).scale(1.0 / r);
    let mut out = Su2Pair { phi: n.scale(spec.c / r - spec.m), ..Default::default() };
    for k in 0..3 {
        out.a[k] = n.bracket(Su2::basis(k)).scale(-1.0 / r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub radius: f64,
    /// sup |Φ_D − Φ_BPS| with the near-field coefficient taken from the Dirac spec.
    pub higgs_diff: f64,
    /// Same with the `k/2r` reading (`c = 1/2`).
    pub higgs_diff_half_charge: f64,
    pub connection_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub higgs_slope: f64,
    pub connection_slope: f64,
}

fn fibonacci_sphere(count: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [rho * t.cos(), rho * t.sin(), z]
        })
        .collect()
}

/// Least-squares slope of `ln y` against `x`.
pub fn log_linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x, y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Compares the BPS field with the abelian model on spheres of the given radii.
///
/// Profiles are differenced analytically (`coth s − 1 = 2/(e^{2s} − 1)`) so the
/// exponential tail survives below double-precision rounding of either field.
pub fn matching_decay_report(bps: &BpsSpec, dirac: &DiracSpec, radii: &[f64]) -> DecayReport {
    let lam = bps.lambda;
    let dirs = fibonacci_sphere(48);
    let diff_for = |c: f64, r: f64| {
        let s = lam * r;
        // (m − c/r) − (λ coth s − 1/r)
        (dirac.m - lam) + (1.0 - c) / r - lam * coth_minus_one(s)
    };
    let rows: Vec<DecayRow> = radii
        .iter()
        .map(|&r| {
            let mut row = DecayRow { radius: r, higgs_diff: 0.0, higgs_diff_half_charge: 0.0, connection_diff: 0.0 };
            for n in &dirs {
                // Both Higgs fields are parallel to n, so the difference is the profile gap.
                let nn = norm(*n);
                row.higgs_diff = row.higgs_diff.max((diff_for(dirac.c, r) * nn).abs());
                row.higgs_diff_half_charge = row.higgs_diff_half_charge.max((diff_for(0.5, r) * nn).abs());
                let w = lam / (lam * r).sinh();
                let nv = Su2(*n);
                let mag: f64 = (0..3).map(|k| nv.bracket(Su2::basis(k)).scale(w).norm_sq()).sum::<f64>().sqrt();
                row.connection_diff = row.connection_diff.max(mag);
            }
            row
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.radius).collect();
    let hs: Vec<f64> = rows.iter().map(|r| r.higgs_diff).collect();
    let cs: Vec<f64> = rows.iter().map(|r| r.connection_diff).collect();
    DecayReport { higgs_slope: log_linear_slope(&xs, &hs), connection_slope: log_linear_slope(&xs, &cs), rows }
}
