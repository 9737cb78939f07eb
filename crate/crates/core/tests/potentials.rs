#[path = "common/oracle.rs"]
mod oracle;

use chb_core::potentials::{
    envelope_by_minimization, nemytskii, try_nemytskii, yosida_suite, RegularizedPotential, SmoothPotential,
};
use chb_core::ChbError;
use nalgebra::DMatrix;
use oracle::OraclePotential;
use proptest::prelude::*;

fn pol() -> SmoothPotential {
    SmoothPotential::polynomial(1.0, 1.0)
}

fn reg(delta: f64) -> RegularizedPotential {
    RegularizedPotential::new(pol(), delta).unwrap()
}

#[test]
fn resolvent_matches_bisection_oracle() {
    for delta in [0.5, 0.1, 0.01] {
        let pot = reg(delta);
        let or = OraclePotential::new(1.0, 1.0, delta);
        for i in 0..=600 {
            let s = -3.0 + i as f64 * 0.01;
            let j = pot.resolvent(s).unwrap();
            assert!((j - or.resolvent(s)).abs() < 1e-12, "delta {delta} s {s}");
            assert!((j + delta * j.powi(3) - s).abs() <= 1e-12);
        }
    }
}

#[test]
fn closed_form_case_at_unit_delta() {
    // J + J^3 = 2 has the root J = 1
    let pot = RegularizedPotential {
        base: pol(),
        delta: 1.0,
        resolvent_tolerance: 1e-12,
    };
    let p = pot.evaluate(2.0).unwrap();
    assert!((p.resolvent - 1.0).abs() < 1e-12);
    assert!((p.derivative + 1.0).abs() < 1e-12);
    assert!(p.derivative.abs() <= pol().first_derivative(2.0).abs());
}

#[test]
fn derivative_ladder_at_two_increases_toward_the_limit() {
    let exact = pol().first_derivative(2.0);
    assert_eq!(exact, 6.0);
    let mut previous = RegularizedPotential {
        base: pol(),
        delta: 1.0,
        resolvent_tolerance: 1e-12,
    }
    .derivative(2.0)
    .unwrap()
    .abs();
    for delta in [0.1, 0.01, 0.001] {
        let d = reg(delta).derivative(2.0).unwrap().abs();
        assert!(d > previous && d < exact, "delta {delta}: {d}");
        previous = d;
    }
    assert!(exact - previous < 0.1);
}

#[test]
fn value_converges_to_the_potential() {
    let exact = 0.25 * 1.25f64.powi(2);
    assert_eq!(pol().value(1.5), exact);
    let mut last_gap = f64::INFINITY;
    for delta in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
        let gap = (reg(delta).value(1.5).unwrap() - exact).abs();
        assert!(gap < last_gap);
        last_gap = gap;
    }
    assert!(last_gap < 1e-3);
    let fine = (reg(1e-6).value(1.5).unwrap() - exact).abs();
    let coarse = (reg(1e-5).value(1.5).unwrap() - exact).abs();
    // first order in delta
    assert!((coarse / fine - 10.0).abs() < 0.5);
}

#[test]
fn values_match_oracle_and_envelope() {
    for delta in [0.5, 0.1, 0.01] {
        let pot = reg(delta);
        let or = OraclePotential::new(1.0, 1.0, delta);
        for i in 0..=80 {
            let s = -4.0 + 0.1 * i as f64;
            assert!((pot.value(s).unwrap() - or.value(s)).abs() < 1e-9 * (1.0 + or.value(s).abs()));
            assert!((pot.derivative(s).unwrap() - or.derivative(s)).abs() < 1e-9 * (1.0 + s.abs().powi(3)));
            let env = pot.envelope(s).unwrap();
            assert!((env - envelope_by_minimization(&pot, s)).abs() < 1e-9);
        }
    }
}

#[test]
fn value_gradient_matches_derivative() {
    let h = 1e-5;
    for delta in [0.5, 0.1, 0.01] {
        let pot = reg(delta);
        for i in 0..=80 {
            let s = -4.0 + 0.1 * i as f64;
            let fd = (pot.value(s + h).unwrap() - pot.value(s - h).unwrap()) / (2.0 * h);
            assert!((fd - pot.derivative(s).unwrap()).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}

#[test]
fn second_derivative_respects_the_bound() {
    let h = 1e-5;
    for (delta, bound) in [(0.5, 3.0), (0.01, 101.0)] {
        let pot = reg(delta);
        assert!((pot.second_derivative_bound() - bound).abs() < 1e-12);
        for i in 0..=800 {
            let s = -4.0 + 0.01 * i as f64;
            let fd = (pot.derivative(s + h).unwrap() - pot.derivative(s - h).unwrap()) / (2.0 * h);
            assert!(fd.abs() <= bound + 1e-6);
            assert!((fd - pot.second_derivative(s).unwrap()).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }
}

#[test]
fn regularized_value_dips_below_zero_near_the_wells() {
    // F_delta(beta) = Ft_delta(beta) - Ft(beta) < 0 since the envelope lies below Ft
    for delta in [0.5, 0.1, 0.01] {
        assert!(reg(delta).value(1.0).unwrap() < 0.0);
    }
}

#[test]
fn suite_reports_clean_levels() {
    let report = yosida_suite(pol(), &[0.5, 0.1, 0.01], 4.0, 0.01).unwrap();
    assert_eq!(report.levels.len(), 3);
    for level in &report.levels {
        assert!(level.p1_identity_max <= 1e-9);
        assert_eq!(level.p3_sandwich_violations, 0);
        assert!(level.p4_lipschitz_empirical <= level.p4_lipschitz_bound + 1e-9);
        assert_eq!(level.p6_value_at_zero_error, 0.0);
        assert_eq!(level.p6_derivative_at_zero, 0.0);
        assert_eq!(level.resolvent_nonexpansive_violations, 0);
    }
    assert_eq!(report.p2_violations, 0);
    assert_eq!(report.p5_operator_violations, 0);
    assert_eq!(report.p5_signed_violations, 0);
}

#[test]
fn absolute_derivative_is_not_monotone_inside_the_wells() {
    // |F'_delta(0.5)| shrinks from delta = 0.5 to 0.01 although F'_delta -> F'
    let coarse = reg(0.5).derivative(0.5).unwrap();
    let fine = reg(0.01).derivative(0.5).unwrap();
    let exact = pol().first_derivative(0.5);
    assert!(fine.abs() < coarse.abs());
    assert!((fine - exact).abs() < (coarse - exact).abs());
}

#[test]
fn configuration_errors() {
    assert!(matches!(RegularizedPotential::new(pol(), 1.0), Err(ChbError::Potential(_))));
    assert!(matches!(RegularizedPotential::new(pol(), 0.0), Err(ChbError::Potential(_))));
    let undershifted = pol().with_shift(0.5);
    assert!(matches!(undershifted.validate(), Err(ChbError::Potential(_))));
    // a concave "shifted" derivative defeats the bracket expansion
    let broken = RegularizedPotential {
        base: SmoothPotential {
            alpha: -1.0,
            beta: 1.0,
            convexity_shift: -1.0,
        },
        delta: 0.5,
        resolvent_tolerance: 1e-12,
    };
    assert!(matches!(broken.resolvent(3.0), Err(ChbError::Bracket { .. })));
}

#[test]
fn growth_conditions_hold_for_the_polynomial() {
    let c = pol().growth_constant(4.0, 0.01);
    assert!(c.is_finite() && c > 0.0);
    for i in 0..=800 {
        let s = -4.0 + 0.01 * i as f64;
        let p = pol();
        assert!(p.value(s) >= 0.0);
        assert!(p.shifted_second_derivative(s) >= 0.0);
        assert!(p.first_derivative(s).abs() <= c * (1.0 + p.value(s)) + 1e-12);
        assert!(p.second_derivative(s).abs() <= c * (1.0 + p.value(s)) + 1e-12);
    }
}

#[test]
fn nemytskii_is_pointwise() {
    let g = DMatrix::from_fn(3, 4, |r, c| r as f64 * 0.3 - c as f64 * 0.2);
    assert_eq!(nemytskii(&g, |s| s), g);
    assert!(nemytskii(&g, |_| 2.5).iter().all(|&v| v == 2.5));
    let pot = reg(0.1);
    let or = OraclePotential::new(1.0, 1.0, 0.1);
    let d = try_nemytskii(&g, |s| pot.derivative(s)).unwrap();
    for (v, s) in d.iter().zip(g.iter()) {
        assert!((v - or.derivative(*s)).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn resolvent_is_nonexpansive_and_monotone(s in -6.0f64..6.0, t in -6.0f64..6.0, delta in 0.001f64..0.999) {
        let pot = reg(delta);
        let (js, jt) = (pot.resolvent(s).unwrap(), pot.resolvent(t).unwrap());
        prop_assert!((js - jt).abs() <= (s - t).abs() + 2e-12);
        prop_assert!((js - jt) * (s - t) >= -1e-12);
    }

    #[test]
    fn derivative_is_lipschitz(s in -6.0f64..6.0, t in -6.0f64..6.0, delta in 0.001f64..0.999) {
        prop_assume!((s - t).abs() > 1e-6);
        let pot = reg(delta);
        let slope = (pot.derivative(s).unwrap() - pot.derivative(t).unwrap()).abs() / (s - t).abs();
        prop_assert!(slope <= pot.second_derivative_bound() * (1.0 + 1e-9));
    }

    #[test]
    fn sandwich_holds(s in -6.0f64..6.0, delta in 0.001f64..0.999) {
        let pot = reg(delta);
        let p = pot.evaluate(s).unwrap();
        let env = pot.envelope(s).unwrap();
        let scale = 1e-12 * (1.0 + pol().shifted_value(s));
        prop_assert!(pol().shifted_value(p.resolvent) <= env + scale);
        prop_assert!(env <= pol().shifted_value(s) + scale);
    }

    #[test]
    fn yosida_operator_grows_as_delta_shrinks(s in -4.0f64..4.0, d1 in 0.01f64..0.99, ratio in 0.05f64..0.95) {
        let (coarse, fine) = (reg(d1), reg(d1 * ratio));
        prop_assert!(fine.yosida_operator(s).unwrap().abs() >= coarse.yosida_operator(s).unwrap().abs() - 1e-10);
    }
}
