use monoglue::analysis::b_alpha;
use monoglue::deformation::quadratic_at;
use monoglue::exact_fields::{eval_bps, BpsSpec};
use monoglue::geometry::grid::norm;
use monoglue::geometry::MetricField;
use monoglue::gluing::{cutoff_log, cutoff_radial};
use monoglue::Su2;
use proptest::prelude::*;

fn su2() -> impl Strategy<Value = Su2> {
    prop::array::uniform3(-2.0..2.0f64).prop_map(Su2)
}

fn close(a: Su2, b: Su2, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #[test]
    fn bracket_is_antisymmetric_and_satisfies_jacobi(x in su2(), y in su2(), z in su2()) {
        prop_assert!(close(x.bracket(y), y.bracket(x).scale(-1.0), 1e-14));
        let jac = x.bracket(y.bracket(z)) + y.bracket(z.bracket(x)) + z.bracket(x.bracket(y));
        prop_assert!(jac.norm() < 1e-12);
    }

    #[test]
    fn inner_product_is_ad_invariant(x in su2(), y in su2(), z in su2()) {
        let lhs = x.bracket(y).inner(z);
        let rhs = x.inner(y.bracket(z));
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn split_is_orthogonal_and_complete(x in su2(), h in su2()) {
        prop_assume!(h.norm() > 1e-3);
        let (l, t) = x.split(h, 1e-12).unwrap();
        prop_assert!(close(l + t, x, 1e-14));
        prop_assert!(t.inner(h).abs() < 1e-12 * (1.0 + x.norm() * h.norm()));
        prop_assert!(l.bracket(h).norm() < 1e-12 * (1.0 + x.norm() * h.norm()));
    }

    #[test]
    fn ad_squared_kills_the_longitudinal_part(x in su2(), h in su2()) {
        prop_assume!(h.norm() > 1e-3);
        let (l, t) = x.split(h, 1e-12).unwrap();
        prop_assert!(h.ad2(l).norm() < 1e-11);
        // On the transverse part ad² acts as −|Φ|².
        prop_assert!(close(h.ad2(t), t.scale(-h.norm_sq()), 1e-12));
    }

    #[test]
    fn rotation_preserves_norm(x in su2(), axis in su2(), angle in -6.3..6.3f64) {
        prop_assume!(axis.norm() > 1e-3);
        let unit = axis.scale(1.0 / axis.norm());
        prop_assert!((x.rotate(unit, angle).norm() - x.norm()).abs() < 1e-12);
    }

    #[test]
    fn bps_higgs_stays_below_lambda(x in prop::array::uniform3(-5.0..5.0f64), lambda in 0.5..20.0f64) {
        let p = eval_bps(&BpsSpec::new([0.0; 3], lambda), x);
        prop_assert!(p.phi.norm() < lambda);
        if norm(x) > 1e-9 {
            prop_assert!(p.phi.norm() > 0.0);
        }
    }

    #[test]
    fn quadratic_term_is_homogeneous(a in prop::array::uniform3(su2()), phi in su2(), s in -3.0..3.0f64) {
        let metric = MetricField::flat();
        let q1 = quadratic_at(&metric, 0, a, phi);
        let qs = quadratic_at(&metric, 0, a.map(|v| v.scale(s)), phi.scale(s));
        for k in 0..3 {
            prop_assert!(close(qs[k], q1[k].scale(s * s), 1e-12));
        }
    }

    #[test]
    fn radial_cutoff_is_a_monotone_plateau(eps in 0.2..2.0f64, t in 0.0..3.0f64) {
        let xi = cutoff_radial(eps, 0.01).unwrap();
        let r = t * eps;
        let v = xi.value(r);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(xi.deriv(r) <= 1e-12);
        prop_assert!(xi.deriv(r).abs() <= 2.0 / eps);
        if t <= 1.0 { prop_assert_eq!(v, 1.0); }
        if t >= 2.0 { prop_assert_eq!(v, 0.0); }
    }

    #[test]
    fn log_cutoff_l3_norm_is_scale_free(n in 3.0..200.0f64, lambda in 1.0..100.0f64) {
        let beta = cutoff_log(n, lambda).unwrap();
        let exact = beta.gradient_l3_exact();
        let quad = beta.gradient_l3_quadrature(4000);
        prop_assert!((exact - quad).abs() < 1e-3 * exact);
        prop_assert_eq!(beta.value(0.5 * beta.inner()), 1.0);
        prop_assert_eq!(beta.value(2.0 * beta.outer()), 0.0);
    }

    #[test]
    fn b_alpha_is_positive_on_its_range(alpha in -0.5..0.0f64) {
        prop_assert!(b_alpha(alpha).unwrap() > 0.18);
    }
}
