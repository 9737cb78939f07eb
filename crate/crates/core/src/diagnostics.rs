//! Energy ledger, the discrete Ito energy identity, and Monte-Carlo
//! certificates of the a priori bounds.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Result;
use crate::galerkin::{Evaluation, GalerkinSystem};
use crate::noise::Channel;
use crate::timestepper::PathResult;

macro_rules! ledger_row {
    ($($(#[$doc:meta])* $name:ident),* $(,)?) => {
        /// One row of the per-step ledger. Terms are evaluated at the left
        /// endpoint `t_n`; the stochastic increments cover `[t_n, t_{n+1}]`.
        #[derive(Clone, Debug, Default, PartialEq, Serialize)]
        pub struct LedgerRow {
            $($(#[$doc])* pub $name: f64,)*
        }

        impl LedgerRow {
            pub const COLUMNS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn values(&self) -> Vec<f64> {
                vec![$(self.$name),*]
            }
        }
    };
}

ledger_row! {
    t,
    /// free energy with the regularized potentials
    energy,
    /// energy + |phi|^2 / 2
    energy_tot,
    /// same functional with the unregularized potentials
    lyapunov,
    mass,
    mass_gamma,
    diss_viscous,
    diss_drag,
    diss_friction,
    diss_mobility,
    diss_surface_mobility,
    ito_bulk_gradient,
    ito_surface_gradient,
    ito_bulk_potential,
    ito_surface_potential,
    ito_coupling,
    ito_l2,
    /// recorded only: the two noises are independent, so this term has zero expectation per step
    ito_cross,
    stoch_mu,
    stoch_theta,
    stoch_phi,
    /// Q(M grad mu . grad phi)
    cross_mobility,
    residual,
    guard,
    phi_sq,
    grad_phi_sq,
    grad_psi_sq,
    grad_u_sq,
    grad_mu_sq,
    grad_theta_sq,
    psi_sq,
    hs_bulk_l2,
    hs_surface_l2,
    abs_f2_noise,
    abs_g2_noise,
    convection_skew,
    boundary_convection,
    negative_potential_nodes,
    mu_mean,
    mu_mean_bound,
    theta_mean_max,
    theta_mean_bound,
    mu_theta_norm_sq,
    mu_theta_control,
    ito_potential_bound,
}

impl LedgerRow {
    pub fn dissipation(&self) -> f64 {
        self.diss_viscous + self.diss_drag + self.diss_friction + self.diss_mobility + self.diss_surface_mobility
    }

    pub fn ito_total(&self) -> f64 {
        self.ito_bulk_gradient
            + self.ito_surface_gradient
            + self.ito_bulk_potential
            + self.ito_surface_potential
            + self.ito_coupling
            + self.ito_l2
    }

    pub fn stochastic_total(&self) -> f64 {
        self.stoch_mu + self.stoch_theta + self.stoch_phi
    }
}

/// Unit-weight projected noise profiles `(S_n g(phi), S_n g(phi_Gamma))`.
pub fn projected_profiles(system: &GalerkinSystem, ev: &Evaluation) -> Result<(DVector<f64>, DVector<f64>)> {
    let p = system.noise().profile;
    let basis = system.basis();
    Ok((
        basis.bulk_from_grid(&ev.phi.map(|s| p.eval(s)))?,
        basis.boundary_from_grid(&ev.psi.map(|s| p.eval(s)))?,
    ))
}

fn sq(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.component_mul(m)
}

/// Fills every left-point term of a ledger row (stochastic increments and the
/// residual are left at zero).
pub fn ledger_terms(
    system: &GalerkinSystem,
    ev: &Evaluation,
    profiles: &(DVector<f64>, DVector<f64>),
    t: f64,
) -> Result<LedgerRow> {
    let basis = system.basis();
    let geom = basis.geometry();
    let p = system.params();
    let noise = system.noise();
    let fpot = system.bulk_potential();
    let gpot = system.surface_potential();
    let penalty = p.eps / p.robin_k;

    let grad_phi_sq = basis.integrate(&(sq(&ev.phi_x) + sq(&ev.phi_y)));
    let grad_psi_sq = basis.integrate_boundary(&sq(&ev.psi_x));
    let jump = &ev.psi - &ev.phi_trace;
    let jump_sq = basis.integrate_boundary(&sq(&jump));
    let phi_sq = basis.integrate(&sq(&ev.phi));
    let quadratic = 0.5 * p.eps * grad_phi_sq + 0.5 * p.eps_gamma * grad_psi_sq + 0.5 * penalty * jump_sq;
    let energy = quadratic + basis.integrate(&ev.f_value) / p.eps + basis.integrate_boundary(&ev.g_value) / p.eps_gamma;
    let f_base = ev.phi.map(|s| fpot.base.value(s));
    let g_base = ev.psi.map(|s| gpot.base.value(s));
    let lyapunov = quadratic
        + basis.integrate(&f_base) / p.eps
        + basis.integrate_boundary(&g_base) / p.eps_gamma
        + 0.5 * phi_sq;

    let vg = basis.velocity_gradient(&ev.e)?;
    let nu = ev.phi.map(|s| p.viscosity.eval(s));
    let lam = ev.phi.map(|s| p.permeability.eval(s));
    let gam = ev.psi.map(|s| p.friction.eval(s));
    let u_sq = sq(&ev.ux) + sq(&ev.uy);
    let grad_mu = sq(&ev.mu_x) + sq(&ev.mu_y);

    // Ito corrections from the projected diffusion fields
    let (pb, pg) = profiles;
    let csq = noise.weight_sum_sq(Channel::Bulk);
    let csq_g = noise.weight_sum_sq(Channel::Boundary);
    let pb_grid = basis.bulk_to_grid(pb)?;
    let pg_grid = basis.boundary_to_grid(pg)?;
    let tpb = system.trace_matrix() * pb;
    let lam_b = basis.bulk_eigenvalues();
    let lam_g = basis.boundary_eigenvalues();
    let cross_weights: f64 = noise
        .weights(Channel::Bulk)
        .iter()
        .zip(noise.weights(Channel::Boundary))
        .map(|(a, b)| a * b)
        .sum();

    let prof = noise.profile;
    let g_phi_sq = ev.phi.map(|s| prof.eval(s).powi(2));
    let g_psi_sq = ev.psi.map(|s| prof.eval(s).powi(2));
    let hs_bulk_l2 = csq * basis.integrate(&g_phi_sq);
    let hs_surface_l2 = csq_g * basis.integrate_boundary(&g_psi_sq);
    let abs_f2 = ev.phi.map(|s| fpot.base.second_derivative(s).abs());
    let abs_g2 = ev.psi.map(|s| gpot.base.second_derivative(s).abs());

    let ito_bulk_potential = 0.5 / p.eps * csq * basis.integrate(&ev.f_second.component_mul(&sq(&pb_grid)));
    let ito_surface_potential =
        0.5 / p.eps_gamma * csq_g * basis.integrate_boundary(&ev.g_second.component_mul(&sq(&pg_grid)));
    // |F''_delta| <= 1/delta + c, checked on the unprojected fields
    let f2_regularized = csq * basis.integrate(&ev.f_second.abs().component_mul(&g_phi_sq));
    let ito_potential_bound = if f2_regularized <= fpot.second_derivative_bound() * hs_bulk_l2 * (1.0 + 1e-12) {
        1.0
    } else {
        0.0
    };

    let mean = system.mean_chemical_potential_bound(ev)?;
    let f_l1 = basis.integrate(&ev.f_value.abs());
    let g_l1 = basis.integrate_boundary(&ev.g_value.abs());
    let mu_theta_norm_sq = ev.c.norm_squared() + ev.d.norm_squared();
    let grad_mu_sq = basis.integrate(&grad_mu);
    let grad_theta_sq = basis.integrate_boundary(&sq(&ev.theta_x));
    let control = chemical_potential_control(system, &mean, jump_sq, f_l1, g_l1, grad_mu_sq, grad_theta_sq);

    let area = geom.area();
    Ok(LedgerRow {
        t,
        energy,
        energy_tot: energy + 0.5 * phi_sq,
        lyapunov,
        mass: ev.a[0] / area.sqrt(),
        mass_gamma: basis.integrate_boundary(&ev.psi) / geom.boundary_length(),
        diss_viscous: basis.integrate(&(vg.strain_squared().component_mul(&nu) * 2.0)),
        diss_drag: basis.integrate(&u_sq.component_mul(&lam)),
        diss_friction: basis.integrate_boundary(&sq(&ev.u_wall).component_mul(&gam)),
        diss_mobility: basis.integrate(&grad_mu.component_mul(&ev.mobility)),
        diss_surface_mobility: basis.integrate_boundary(&sq(&ev.theta_x).component_mul(&ev.surface_mobility)),
        ito_bulk_gradient: 0.5 * p.eps * csq * lam_b.component_mul(&pb.component_mul(pb)).sum(),
        ito_surface_gradient: 0.5 * p.eps_gamma * csq_g * lam_g.component_mul(&pg.component_mul(pg)).sum(),
        ito_bulk_potential,
        ito_surface_potential,
        ito_coupling: 0.5 * penalty * (csq * tpb.norm_squared() + csq_g * pg.norm_squared()),
        ito_l2: 0.5 * csq * pb.norm_squared(),
        ito_cross: -penalty * cross_weights * tpb.dot(pg),
        stoch_mu: 0.0,
        stoch_theta: 0.0,
        stoch_phi: 0.0,
        cross_mobility: basis.integrate(
            &(ev.mu_x.component_mul(&ev.phi_x) + ev.mu_y.component_mul(&ev.phi_y)).component_mul(&ev.mobility),
        ),
        residual: 0.0,
        guard: guard_quantity(system, ev, jump_sq, grad_psi_sq),
        phi_sq,
        grad_phi_sq,
        grad_psi_sq,
        grad_u_sq: basis.integrate(&vg.gradient_squared()),
        grad_mu_sq,
        grad_theta_sq,
        psi_sq: basis.integrate_boundary(&sq(&ev.psi)),
        hs_bulk_l2,
        hs_surface_l2,
        abs_f2_noise: csq * basis.integrate(&abs_f2.component_mul(&g_phi_sq)),
        abs_g2_noise: csq_g * basis.integrate_boundary(&abs_g2.component_mul(&g_psi_sq)),
        convection_skew: ev.a.dot(&ev.da_convective),
        boundary_convection: ev.b.dot(&ev.db_convective),
        negative_potential_nodes: (ev.f_value.iter().filter(|v| **v < 0.0).count()
            + ev.g_value.iter().filter(|v| **v < 0.0).count()) as f64,
        mu_mean: mean.mu_mean,
        mu_mean_bound: mean.mu_bound,
        theta_mean_max: mean.theta_means[0].abs().max(mean.theta_means[1].abs()),
        theta_mean_bound: mean.theta_bound,
        mu_theta_norm_sq,
        mu_theta_control: control,
        ito_potential_bound,
    })
}

/// Right-hand side of the chemical-potential control:
/// means are bounded through the mean formulas, fluctuations through the
/// spectral Poincare constants of the discrete spaces.
fn chemical_potential_control(
    system: &GalerkinSystem,
    mean: &crate::galerkin::MeanChemicalPotential,
    jump_sq: f64,
    f_l1: f64,
    g_l1: f64,
    grad_mu_sq: f64,
    grad_theta_sq: f64,
) -> f64 {
    let geom = system.basis().geometry();
    let area = geom.area();
    let l = geom.period_length;
    let kappa1 = 2.0 * std::f64::consts::PI / l;
    let bulk_gap = kappa1.powi(2).min((std::f64::consts::PI / geom.channel_height).powi(2));
    let mean_part = 3.0 * area * mean.constant_mu.powi(2) * (1.0 + jump_sq + f_l1 * f_l1)
        + 6.0 * l * mean.constant_theta.powi(2) * (1.0 + jump_sq + g_l1 * g_l1);
    mean_part + grad_mu_sq / bulk_gap + grad_theta_sq / kappa1.powi(2)
}

/// `tau^2 = ||phi||_H1^2 + |psi - phi|_Gamma^2 + |d_x psi|_Gamma^2`, returned as `tau`.
pub fn guard_quantity(system: &GalerkinSystem, ev: &Evaluation, jump_sq: f64, grad_psi_sq: f64) -> f64 {
    let lam = system.basis().bulk_eigenvalues();
    let h1 = ev.a.norm_squared() + lam.component_mul(&ev.a.component_mul(&ev.a)).sum();
    (h1 + jump_sq + grad_psi_sq).sqrt()
}

/// `(E, E_tot)` at a state.
pub fn energy(system: &GalerkinSystem, a: &DVector<f64>, b: &DVector<f64>) -> Result<(f64, f64)> {
    let ev = system.evaluate(a, b)?;
    let profiles = projected_profiles(system, &ev)?;
    let row = ledger_terms(system, &ev, &profiles, 0.0)?;
    Ok((row.energy, row.energy_tot))
}

/// Residual series of the discrete energy identity.
pub fn ito_identity_residual(path: &PathResult) -> Vec<f64> {
    path.ledger.iter().map(|r| r.residual).collect()
}

/// Recomputes the residual from ledger columns alone.
pub fn recompute_residual(ledger: &[LedgerRow], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ledger.len());
    let mut lhs_acc = 0.0;
    let mut rhs_acc = 0.0;
    let e0 = ledger.first().map(|r| r.energy_tot).unwrap_or(0.0);
    for row in ledger {
        out.push(row.energy_tot + lhs_acc - (e0 + rhs_acc));
        lhs_acc += dt * row.dissipation();
        rhs_acc += dt * row.ito_total() + row.stochastic_total() - dt * row.cross_mobility;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    /// mean / (1 + ||X_0||_V^r)
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub order: u32,
    pub paths: usize,
    pub initial_norm: f64,
    pub estimates: Vec<Estimate>,
    pub all_finite: bool,
}

pub fn mean_and_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Time integral of a ledger column by the left-point rule.
fn integral(path: &PathResult, f: impl Fn(&LedgerRow) -> f64) -> f64 {
    let n = path.ledger.len();
    path.ledger.iter().take(n.saturating_sub(1)).map(|r| f(r) * path.dt).sum()
}

/// `||(phi_0, psi_0)||_V` from the first ledger row.
pub fn initial_norm(path: &PathResult) -> f64 {
    let r0 = &path.ledger[0];
    (r0.phi_sq + r0.grad_phi_sq + r0.psi_sq + r0.grad_psi_sq).sqrt()
}

/// The five moment statistics of order `r` with standard errors.
pub fn moment_certificate(paths: &[PathResult], r: u32) -> MomentReport {
    let half = r as f64 / 2.0;
    let stats: [(&str, Box<dyn Fn(&PathResult) -> f64>); 5] = [
        (
            "sup_energy_tot",
            Box::new(move |p| p.ledger.iter().map(|x| x.energy_tot.max(0.0)).fold(0.0, f64::max).powf(half)),
        ),
        ("int_grad_u", Box::new(move |p| integral(p, |x| x.grad_u_sq).powf(half))),
        ("int_grad_mu", Box::new(move |p| integral(p, |x| x.grad_mu_sq).powf(half))),
        ("int_grad_theta", Box::new(move |p| integral(p, |x| x.grad_theta_sq).powf(half))),
        (
            "sup_psi",
            Box::new(move |p| p.ledger.iter().map(|x| x.psi_sq).fold(0.0, f64::max).powf(half)),
        ),
    ];
    let x0 = paths.first().map(initial_norm).unwrap_or(0.0);
    let scale = 1.0 + x0.powi(r as i32);
    let estimates: Vec<Estimate> = stats
        .iter()
        .map(|(name, f)| {
            let xs: Vec<f64> = paths.iter().map(|p| f(p)).collect();
            let (mean, std_error) = mean_and_error(&xs);
            Estimate {
                name: name.to_string(),
                mean,
                std_error,
                normalized: mean / scale,
            }
        })
        .collect();
    let all_finite = estimates.iter().all(|e| e.mean.is_finite() && e.std_error.is_finite());
    MomentReport {
        order: r,
        paths: paths.len(),
        initial_norm: x0,
        estimates,
        all_finite,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityCheckpoint {
    pub t: f64,
    pub lhs: f64,
    pub bracket: f64,
    pub required_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub initial_lyapunov: f64,
    pub fitted_c: f64,
    pub checkpoints: Vec<InequalityCheckpoint>,
    pub lhs_terms_nonnegative: bool,
    pub finite: bool,
}

/// Fits the smallest constant making the energy inequality hold at every
/// ledger time, with expectations replaced by sample means over `paths`.
pub fn inequality_check(paths: &[PathResult], robin_k: f64) -> InequalityReport {
    let n_rows = paths.iter().map(|p| p.ledger.len()).min().unwrap_or(0);
    let n = paths.len() as f64;
    let mut lhs_terms_nonnegative = true;
    for p in paths {
        for r in &p.ledger {
            let terms = [r.diss_viscous, r.diss_drag, r.diss_friction, r.diss_mobility, r.diss_surface_mobility];
            if terms.iter().any(|v| !(*v >= 0.0)) {
                lhs_terms_nonnegative = false;
            }
        }
    }
    if n_rows == 0 {
        return InequalityReport {
            initial_lyapunov: f64::NAN,
            fitted_c: f64::NAN,
            checkpoints: Vec::new(),
            lhs_terms_nonnegative,
            finite: false,
        };
    }
    let dt = paths[0].dt;
    let mean_at = |i: usize, f: &dyn Fn(&LedgerRow) -> f64| paths.iter().map(|p| f(&p.ledger[i])).sum::<f64>() / n;
    let sup_lyapunov = (0..n_rows)
        .map(|i| mean_at(i, &|r| r.lyapunov))
        .fold(f64::NEG_INFINITY, f64::max);
    let e0 = mean_at(0, &|r| r.lyapunov);
    let inv_k = 1.0 / robin_k;

    let mut diss = 0.0;
    let mut bracket_int = 0.0;
    let mut checkpoints = Vec::with_capacity(n_rows);
    let mut fitted: f64 = 0.0;
    for i in 0..n_rows {
        let lhs = sup_lyapunov + diss;
        let bracket = inv_k + bracket_int;
        let required = ((lhs - e0) / bracket).max(0.0);
        fitted = fitted.max(required);
        checkpoints.push(InequalityCheckpoint {
            t: paths[0].ledger[i].t,
            lhs,
            bracket,
            required_c: required,
        });
        diss += dt
            * mean_at(i, &|r| {
                r.diss_viscous + r.diss_drag + r.diss_friction + 0.5 * r.diss_mobility + r.diss_surface_mobility
            });
        bracket_int += dt
            * mean_at(i, &|r| {
                r.hs_bulk_l2
                    + r.grad_psi_sq
                    + (1.0 + inv_k) * r.grad_phi_sq
                    + inv_k * r.hs_surface_l2
                    + r.abs_f2_noise
                    + r.abs_g2_noise
            });
    }
    InequalityReport {
        initial_lyapunov: e0,
        fitted_c: fitted,
        finite: fitted.is_finite(),
        checkpoints,
        lhs_terms_nonnegative,
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
