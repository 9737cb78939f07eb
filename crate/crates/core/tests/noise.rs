use chb_core::geometry::{ChannelGeometry, SpectralBasis};
use chb_core::noise::{
    diffusion_apply, hilbert_schmidt_norms, hilbert_schmidt_norms_boundary, weighted_draw, Channel, NoiseModel,
    NoiseSource, Profile, WienerIncrement,
};
use chb_core::ChbError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn model() -> NoiseModel {
    NoiseModel {
        n_w_modes: 8,
        weight_decay: 0.8,
        base_weight: 0.7,
        bulk_amplitude: 0.3,
        boundary_amplitude: 0.2,
        ..NoiseModel::default()
    }
}

#[test]
fn increments_have_variance_dt() {
    let src = NoiseSource::new(2024);
    let dt = 0.004;
    let n = 100_000u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut cross = 0.0;
    for step in 0..n / 4 {
        let inc = src.sample_increment(step % 7, step, dt, 4);
        for (k, w) in inc.bulk_draws.iter().enumerate() {
            sum += w;
            sum_sq += w * w;
            cross += w * inc.boundary_draws[k];
        }
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = sum_sq / nf - mean * mean;
    // normal sample variance has standard error dt sqrt(2 / n)
    assert!(mean.abs() < 3.0 * (dt / nf).sqrt());
    assert!((var - dt).abs() < 3.0 * dt * (2.0 / nf).sqrt());
    assert!((cross / nf).abs() < 3.0 * dt / nf.sqrt());
}

#[test]
fn coarse_increment_is_the_sum_of_fine_ones() {
    let src = NoiseSource::new(5);
    let fine_dt = 1e-3;
    let coarse = src.sample_coarse_increment(2, 3, 4, fine_dt, 6);
    let mut expected = vec![0.0; 6];
    for f in 12..16 {
        let inc = src.sample_increment(2, f, fine_dt, 6);
        for (e, w) in expected.iter_mut().zip(&inc.bulk_draws) {
            *e += w;
        }
    }
    for (a, b) in coarse.bulk_draws.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((coarse.dt - 4e-3).abs() < 1e-18);
}

#[test]
fn paths_and_steps_use_distinct_streams() {
    let src = NoiseSource::new(1);
    let a = src.sample_increment(0, 0, 1.0, 8);
    let b = src.sample_increment(1, 0, 1.0, 8);
    let c = src.sample_increment(0, 1, 1.0, 8);
    assert_ne!(a.bulk_draws, b.bulk_draws);
    assert_ne!(a.bulk_draws, c.bulk_draws);
    assert_ne!(NoiseSource::new(2).sample_increment(0, 0, 1.0, 8), a);
}

#[test]
fn diffusion_is_the_termwise_sum() {
    let m = model();
    let inc = NoiseSource::new(9).sample_increment(0, 0, 0.01, m.n_w_modes);
    let grid = DMatrix::from_fn(4, 5, |r, c| 0.4 * r as f64 - 0.3 * c as f64);
    let out = diffusion_apply(&grid, &m, &inc, Channel::Bulk).unwrap();
    for (o, s) in out.iter().zip(grid.iter()) {
        let mut expected = 0.0;
        for k in 0..m.n_w_modes {
            let ck = 0.3 * 0.7 * ((k + 1) as f64).powf(-0.8);
            expected += ck * s.tanh() * inc.bulk_draws[k];
        }
        assert!((o - expected).abs() < 1e-14);
    }
}

#[test]
fn weights_follow_the_power_law() {
    let m = model();
    for k in 1..=m.n_w_modes {
        let expected = 0.2 * 0.7 * (k as f64).powf(-0.8);
        assert!((m.weight(Channel::Boundary, k) - expected).abs() < 1e-15);
    }
    // integral test: the omitted tail is below the bound
    let tail: f64 = (m.n_w_modes + 1..200_000)
        .map(|k| (0.3 * 0.7 * (k as f64).powf(-0.8)).powi(2))
        .sum();
    assert!(tail <= m.tail_bound(Channel::Bulk));
}

#[test]
fn hilbert_schmidt_norms_match_direct_sums() {
    let m = model();
    let b = SpectralBasis::new(&ChannelGeometry::new(3, 3)).unwrap();
    let a = DVector::from_fn(b.n_bulk(), |i, _| 0.1 * (i as f64 - 7.0));
    let (l2, h1) = hilbert_schmidt_norms(&a, &b, &m).unwrap();
    let phi = b.bulk_to_grid(&a).unwrap();
    let (gx, gy) = b.bulk_gradient(&a).unwrap();
    let mut l2_direct = 0.0;
    let mut h1_direct = 0.0;
    for k in 1..=m.n_w_modes {
        let ck = m.weight(Channel::Bulk, k);
        let f = phi.map(|s| ck * s.tanh());
        let fx = gx.zip_map(&phi, |g, s| ck * (1.0 - s.tanh().powi(2)) * g);
        let fy = gy.zip_map(&phi, |g, s| ck * (1.0 - s.tanh().powi(2)) * g);
        let f_sq = b.integrate(&f.component_mul(&f));
        l2_direct += f_sq;
        h1_direct += f_sq + b.integrate(&(fx.component_mul(&fx) + fy.component_mul(&fy)));
    }
    assert!((l2 - l2_direct).abs() < 1e-12 * l2_direct);
    assert!((h1 - h1_direct).abs() < 1e-12 * h1_direct);
    // growth bounds: sup and H1 constants
    let area = b.geometry().area();
    let grad_sq = b.integrate(&(gx.component_mul(&gx) + gy.component_mul(&gy)));
    assert!(l2 <= m.sup_bound(Channel::Bulk) * area);
    assert!(h1 <= m.h1_growth_constant(Channel::Bulk, area) * (1.0 + grad_sq));
    let bd = DVector::from_fn(b.n_boundary(), |i, _| 0.2 * (i as f64 - 4.0));
    let (l2b, h1b) = hilbert_schmidt_norms_boundary(&bd, &b, &m).unwrap();
    assert!(l2b <= m.sup_bound(Channel::Boundary) * b.geometry().boundary_length());
    assert!(h1b >= l2b);
}

#[test]
fn truncation_mismatch_is_an_error() {
    let m = model();
    let inc = NoiseSource::new(0).sample_increment(0, 0, 0.1, 3);
    assert!(matches!(weighted_draw(&m, &inc, Channel::Bulk), Err(ChbError::Truncation { expected: 8, got: 3 })));
}

#[test]
fn slow_decay_is_rejected_with_the_value() {
    let m = NoiseModel {
        weight_decay: 0.4,
        ..NoiseModel::default()
    };
    let v = m.violations();
    assert_eq!(v.len(), 1);
    assert!(v[0].contains("0.4"));
    assert!(m.validate().is_err());
}

#[test]
fn silent_model_produces_no_noise() {
    let m = NoiseModel::silent();
    assert!(m.is_silent());
    let inc = NoiseSource::new(3).sample_increment(0, 0, 1.0, m.n_w_modes);
    assert_eq!(weighted_draw(&m, &inc, Channel::Bulk).unwrap(), 0.0);
    let z = WienerIncrement::zero(m.n_w_modes, 0.1, inc.key);
    assert!(z.draws(Channel::Boundary).iter().all(|&w| w == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn diffusion_is_lipschitz(
        u in prop::collection::vec(-3.0f64..3.0, 3 * 5),
        v in prop::collection::vec(-3.0f64..3.0, 3 * 5),
        profile in prop_oneof![Just(Profile::Tanh), Just(Profile::Sin), Just(Profile::Constant)],
    ) {
        let m = NoiseModel { profile, ..model() };
        let b = SpectralBasis::new(&ChannelGeometry::new(3, 3)).unwrap();
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        let (pu, pv) = (b.bulk_to_grid(&u).unwrap(), b.bulk_to_grid(&v).unwrap());
        let diff = pu.zip_map(&pv, |x, y| (profile.eval(x) - profile.eval(y)).powi(2));
        let hs = m.weight_sum_sq(Channel::Bulk) * b.integrate(&diff);
        let dist = b.integrate(&(&pu - &pv).map(|x| x * x));
        prop_assert!(hs <= m.lipschitz_constant(Channel::Bulk) * dist * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn increments_are_reproducible_from_keys(seed in any::<u64>(), path in 0u64..1000, step in 0u64..100_000) {
        let a = NoiseSource::new(seed).sample_increment(path, step, 0.01, 4);
        let b = NoiseSource::new(seed).sample_increment(path, step, 0.01, 4);
        prop_assert_eq!(a, b);
    }
}
