#[path = "common/oracle.rs"]
mod oracle;

use chb_core::diagnostics::energy;
use chb_core::galerkin::{CoefficientFn, GalerkinSystem, PhysicalParams};
use chb_core::geometry::{ChannelGeometry, SpectralBasis};
use chb_core::noise::NoiseModel;
use chb_core::potentials::{RegularizedPotential, SmoothPotential};
use nalgebra::DVector;
use oracle::{relative_error, relative_error_matrix, Oracle, OraclePotential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn variable_params() -> PhysicalParams {
    PhysicalParams {
        eps: 0.8,
        eps_gamma: 1.3,
        robin_k: 0.5,
        viscosity: CoefficientFn::TanhBlend { low: 0.5, high: 2.0 },
        permeability: CoefficientFn::TanhBlend { low: 0.1, high: 1.0 },
        friction: CoefficientFn::TanhBlend { low: 0.5, high: 1.5 },
        bulk_mobility: CoefficientFn::TanhBlend { low: 0.5, high: 1.5 },
        surface_mobility: CoefficientFn::TanhBlend { low: 0.7, high: 1.2 },
    }
}

fn setup(n: usize, params: PhysicalParams) -> (GalerkinSystem, Oracle) {
    let geom = ChannelGeometry::new(n, n).with_quadrature(12 * n, 12 * n);
    let basis = SpectralBasis::new(&geom).unwrap();
    let fb = RegularizedPotential::new(SmoothPotential::polynomial(1.0, 1.0), 0.1).unwrap();
    let fs = RegularizedPotential::new(SmoothPotential::polynomial(0.5, 0.8), 0.2).unwrap();
    let sys = GalerkinSystem::new(basis, params, fb, fs, NoiseModel::silent()).unwrap();
    (sys, Oracle::new(&geom))
}

fn oracle_potentials() -> (OraclePotential, OraclePotential) {
    (OraclePotential::new(1.0, 1.0, 0.1), OraclePotential::new(0.5, 0.8, 0.2))
}

fn random_state(sys: &GalerkinSystem, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let a = DVector::from_fn(sys.basis().n_bulk(), |_, _| rng.random_range(-0.5..0.5));
    let b = DVector::from_fn(sys.basis().n_boundary(), |_, _| rng.random_range(-0.5..0.5));
    (a, b)
}

#[test]
fn chemical_potentials_match_weak_form_oracle() {
    let (fb, fs) = oracle_potentials();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [2, 3] {
        let (sys, or) = setup(n, variable_params());
        for _ in 0..5 {
            let (a, b) = random_state(&sys, &mut rng);
            let (c, d) = sys.chemical_potentials(&a, &b).unwrap();
            let (co, d_oracle) = or.chemical_potentials(sys.params(), &fb, &fs, &a, &b);
            assert!(relative_error(&c, &co, 1e-12) < TOL);
            assert!(relative_error(&d, &d_oracle, 1e-12) < TOL);
        }
    }
}

#[test]
fn brinkman_matrix_matches_pointwise_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in [2, 3] {
        let (sys, or) = setup(n, variable_params());
        for _ in 0..5 {
            let (a, b) = random_state(&sys, &mut rng);
            let m = sys.brinkman_assemble(&a, &b).unwrap();
            let mo = or.brinkman_matrix(sys.params(), &a, &b);
            assert!(relative_error_matrix(&m, &mo, 1e-12) < TOL);
        }
    }
}

#[test]
fn drift_matches_oracle() {
    let (fb, fs) = oracle_potentials();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in [2, 3] {
        let (sys, or) = setup(n, variable_params());
        for _ in 0..3 {
            let (a, b) = random_state(&sys, &mut rng);
            let (da, db, state) = sys.drift(&a, &b).unwrap();
            let (dao, dbo, eo) = or.drift(sys.params(), &fb, &fs, &a, &b);
            assert!(relative_error(&da, &dao, 1e-12) < TOL);
            assert!(relative_error(&db, &dbo, 1e-12) < TOL);
            assert!(relative_error(&state.e, &eo, 1e-12) < TOL);
        }
    }
}

#[test]
fn constant_coefficient_drift_matches_oracle() {
    let (fb, fs) = oracle_potentials();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (sys, or) = setup(3, PhysicalParams::default());
    let (a, b) = random_state(&sys, &mut rng);
    let (da, db, _) = sys.drift(&a, &b).unwrap();
    let (dao, dbo, _) = or.drift(sys.params(), &fb, &fs, &a, &b);
    assert!(relative_error(&da, &dao, 1e-12) < TOL);
    assert!(relative_error(&db, &dbo, 1e-12) < TOL);
}

#[test]
fn energy_matches_oversampled_quadrature() {
    let (fb, fs) = oracle_potentials();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (sys, or) = setup(3, variable_params());
    for _ in 0..5 {
        let (a, b) = random_state(&sys, &mut rng);
        let (e, e_tot) = energy(&sys, &a, &b).unwrap();
        let eo = or.energy(sys.params(), &fb, &fs, &a, &b);
        assert!((e - eo).abs() <= TOL * eo.abs());
        // |phi|^2 is the coefficient norm by orthonormality
        assert!((e_tot - e - 0.5 * a.norm_squared()).abs() <= 1e-12 * e_tot.abs());
    }
}

#[test]
fn chemical_potentials_are_energy_gradients() {
    let (fb, fs) = oracle_potentials();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (sys, or) = setup(2, variable_params());
    let (a, b) = random_state(&sys, &mut rng);
    let (c, d) = sys.chemical_potentials(&a, &b).unwrap();
    let h = 1e-5;
    let e = |a: &DVector<f64>, b: &DVector<f64>| or.energy(sys.params(), &fb, &fs, a, b);
    for i in 0..a.len() {
        let (mut ap, mut am) = (a.clone(), a.clone());
        ap[i] += h;
        am[i] -= h;
        let fd = (e(&ap, &b) - e(&am, &b)) / (2.0 * h);
        assert!((fd - c[i]).abs() < 1e-6 * (1.0 + c[i].abs()), "bulk {i}: {fd} vs {}", c[i]);
    }
    for i in 0..b.len() {
        let (mut bp, mut bm) = (b.clone(), b.clone());
        bp[i] += h;
        bm[i] -= h;
        let fd = (e(&a, &bp) - e(&a, &bm)) / (2.0 * h);
        assert!((fd - d[i]).abs() < 1e-6 * (1.0 + d[i].abs()), "boundary {i}: {fd} vs {}", d[i]);
    }
}
