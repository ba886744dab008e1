//! Quintic blending ramps shared by metrics, weights and cutoffs.

/// `6t⁵ − 15t⁴ + 10t³` clamped to `[0, 1]`; C² at both ends.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

/// Derivative of [`smoothstep`].
pub fn smoothstep_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// Second derivative of [`smoothstep`].
pub fn smoothstep_deriv2(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}

/// `35t⁴ − 84t⁵ + 70t⁶ − 20t⁷` clamped to `[0, 1]`; C³ at both ends.
pub fn smoothstep7(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t.powi(4) * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
}

/// Derivative of [`smoothstep7`].
pub fn smoothstep7_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    140.0 * t.powi(3) * (1.0 - t).powi(3)
}

/// 1 for `r <= inner`, 0 for `r >= outer`, quintic in between.
pub fn plateau(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner {
        1.0
    } else if r >= outer {
        0.0
    } else {
        1.0 - smoothstep((r - inner) / (outer - inner))
    }
}

/// Radial derivative of [`plateau`].
pub fn plateau_deriv(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner || r >= outer {
        0.0
    } else {
        -smoothstep_deriv((r - inner) / (outer - inner)) / (outer - inner)
    }
}

/// Second radial derivative of [`plateau`].
pub fn plateau_deriv2(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner || r >= outer {
        0.0
    } else {
        let w = outer - inner;
        -smoothstep_deriv2((r - inner) / w) / (w * w)
    }
}
