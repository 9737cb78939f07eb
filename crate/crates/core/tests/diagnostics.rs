use chb_core::diagnostics::{
    energy, inequality_check, initial_norm, loglog_slope, mean_and_error, moment_certificate, recompute_residual,
    LedgerRow,
};
use chb_core::galerkin::{GalerkinSystem, PhysicalParams};
use chb_core::geometry::{ChannelGeometry, SpectralBasis};
use chb_core::noise::{NoiseModel, NoiseSource};
use chb_core::parallel::Execution;
use chb_core::potentials::{RegularizedPotential, SmoothPotential};
use chb_core::timestepper::{PathResult, SchemeConfig, Stepper};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::f64::consts::PI;

fn system(n: usize, noise: NoiseModel) -> GalerkinSystem {
    let basis = SpectralBasis::new(&ChannelGeometry::new(n, n)).unwrap();
    let pot = RegularizedPotential::new(SmoothPotential::polynomial(1.0, 1.0), 0.1).unwrap();
    GalerkinSystem::new(basis, PhysicalParams::default(), pot, pot, noise).unwrap()
}

fn noisy(amp: f64) -> NoiseModel {
    NoiseModel {
        bulk_amplitude: amp,
        boundary_amplitude: amp,
        ..NoiseModel::default()
    }
}

fn initial(basis: &SpectralBasis) -> (DVector<f64>, DVector<f64>) {
    let (ny, nx) = basis.grid_shape();
    let (x, y) = (basis.x_nodes(), basis.y_nodes());
    let phi = DMatrix::from_fn(ny, nx, |r, c| 0.1 + 0.3 * x[c].cos() + 0.2 * (PI * y[r]).cos());
    let psi = DMatrix::from_fn(2, nx, |r, c| if r == 0 { 0.3 } else { -0.1 } + 0.3 * x[c].cos());
    (basis.bulk_from_grid(&phi).unwrap(), basis.boundary_from_grid(&psi).unwrap())
}

fn ensemble(sys: &GalerkinSystem, n_paths: usize, steps: usize, seed: u64) -> Vec<PathResult> {
    Stepper::new(sys, SchemeConfig::imex(2e-3, steps))
        .unwrap()
        .simulate_ensemble(&initial(sys.basis()), &NoiseSource::new(seed), n_paths, Execution::Parallel)
        .unwrap()
}

/// State that is the constant `c` in the bulk and on both circles.
fn constant_state(sys: &GalerkinSystem, c: f64) -> (DVector<f64>, DVector<f64>) {
    let geom = sys.basis().geometry();
    let mut a = DVector::zeros(sys.basis().n_bulk());
    let mut b = DVector::zeros(sys.basis().n_boundary());
    a[0] = c * geom.area().sqrt();
    let nxf = b.len() / 2;
    b[0] = c * geom.period_length.sqrt();
    b[nxf] = b[0];
    (a, b)
}

#[test]
fn zero_state_energy_is_the_well_height_times_the_measures() {
    // F(0) = 1/4 on |O| = 2 pi and on |Gamma| = 4 pi
    let sys = system(4, NoiseModel::silent());
    let (a, b) = constant_state(&sys, 0.0);
    let (e, etot) = energy(&sys, &a, &b).unwrap();
    assert!((e - 1.5 * PI).abs() < 1e-12, "{e}");
    assert_eq!(e, etot);
}

#[test]
fn matched_constant_traces_carry_no_interface_energy() {
    let sys = system(4, NoiseModel::silent());
    let pot = *sys.bulk_potential();
    let geom = sys.basis().geometry().clone();
    for c in [-1.3, -0.4, 0.25, 0.9, 1.7] {
        let (a, b) = constant_state(&sys, c);
        let (e, etot) = energy(&sys, &a, &b).unwrap();
        let expected = pot.value(c).unwrap() * (geom.area() + geom.boundary_length());
        assert!((e - expected).abs() < 1e-11 * (1.0 + expected.abs()), "c={c}");
        assert!((etot - e - 0.5 * c * c * geom.area()).abs() < 1e-11);
    }
}

#[test]
fn residual_series_is_reproducible_from_ledger_columns() {
    let sys = system(4, noisy(0.2));
    let paths = ensemble(&sys, 3, 60, 5);
    for p in &paths {
        assert_eq!(p.ledger[0].residual, 0.0);
        let again = recompute_residual(&p.ledger, p.dt);
        for (r, q) in p.ledger.iter().zip(&again) {
            assert!((r.residual - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }
}

#[test]
fn noiseless_moment_certificate_has_no_spread() {
    let sys = system(3, NoiseModel::silent());
    let paths = ensemble(&sys, 4, 50, 0);
    let rep = moment_certificate(&paths, 4);
    assert!(rep.all_finite);
    assert_eq!(rep.paths, 4);
    let sup_e = paths[0].ledger.iter().map(|r| r.energy_tot).fold(0.0, f64::max);
    let sup_psi = paths[0].ledger.iter().map(|r| r.psi_sq).fold(0.0, f64::max);
    let int_u: f64 = paths[0].ledger[..50].iter().map(|r| r.grad_u_sq * 2e-3).sum();
    for est in &rep.estimates {
        assert_eq!(est.std_error, 0.0, "{}", est.name);
        let want = match est.name.as_str() {
            "sup_energy_tot" => sup_e.powi(2),
            "sup_psi" => sup_psi.powi(2),
            "int_grad_u" => int_u.powi(2),
            _ => continue,
        };
        assert!((est.mean - want).abs() <= 1e-12 * want, "{}", est.name);
        assert!((est.normalized - want / (1.0 + initial_norm(&paths[0]).powi(4))).abs() <= 1e-12 * want);
    }
}

#[test]
fn standard_errors_halve_when_paths_quadruple() {
    let sys = system(3, noisy(0.3));
    let small = moment_certificate(&ensemble(&sys, 64, 40, 11), 2);
    let large = moment_certificate(&ensemble(&sys, 256, 40, 11), 2);
    for (s, l) in small.estimates.iter().zip(&large.estimates) {
        // the energy sup is attained at the shared initial time on every path
        if s.std_error <= 1e-12 * s.mean {
            assert!(l.std_error <= 1e-12 * l.mean, "{}", s.name);
            continue;
        }
        let ratio = s.std_error / l.std_error;
        assert!((ratio - 2.0).abs() <= 0.6, "{}: {ratio}", s.name);
    }
}

#[test]
fn inequality_fit_vanishes_at_rest_and_bounds_every_checkpoint() {
    let sys = system(3, noisy(0.3));
    let rest = Stepper::new(&sys, SchemeConfig::imex(2e-3, 20))
        .unwrap()
        .simulate_ensemble(&constant_state(&sys, 0.0), &NoiseSource::new(1), 2, Execution::Sequential)
        .unwrap();
    let rep = inequality_check(&rest, 1.0);
    assert_eq!(rep.fitted_c, 0.0);

    let paths = ensemble(&sys, 16, 40, 3);
    let rep = inequality_check(&paths, 1.0);
    assert!(rep.finite && rep.lhs_terms_nonnegative);
    assert_eq!(rep.checkpoints.len(), 41);
    for c in &rep.checkpoints {
        assert!(c.bracket >= 1.0);
        assert!(c.lhs <= rep.initial_lyapunov + rep.fitted_c * c.bracket + 1e-12);
    }
    assert!(inequality_check(&[], 1.0).fitted_c.is_nan());
}

#[test]
fn noisy_ledger_respects_pointwise_controls() {
    let sys = system(4, noisy(0.3));
    for p in ensemble(&sys, 4, 50, 8) {
        for r in &p.ledger {
            assert_eq!(r.ito_potential_bound, 1.0);
            assert!(r.mu_theta_norm_sq <= r.mu_theta_control);
            assert!(r.mu_mean.abs() <= r.mu_mean_bound * (1.0 + 1e-12));
            assert!(r.theta_mean_max <= r.theta_mean_bound * (1.0 + 1e-12));
            assert!(r.dissipation() >= 0.0 && r.ito_total() >= 0.0);
        }
    }
}

#[test]
fn sample_statistics_match_hand_values() {
    let (m, se) = mean_and_error(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert!(mean_and_error(&[]).0.is_nan());
    assert_eq!(mean_and_error(&[3.0]), (3.0, 0.0));
    assert_eq!(LedgerRow::default().values().len(), LedgerRow::COLUMNS.len());
}

proptest! {
    #[test]
    fn slope_recovers_power_laws(p in -3.0f64..3.0, c in 0.01f64..100.0) {
        let x = [0.1f64, 0.2, 0.4, 0.8];
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(p)).collect();
        prop_assert!((loglog_slope(&x, &y) - p).abs() < 1e-10);
    }
}
