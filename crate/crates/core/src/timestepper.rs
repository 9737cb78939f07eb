//! Euler-Maruyama time stepping of the Galerkin SDE, explicit or with the
//! stiff linear part treated implicitly, plus the stopping-time guard.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ledger_terms, projected_profiles, LedgerRow};
use crate::error::{ChbError, Result};
use crate::galerkin::{Evaluation, GalerkinState, GalerkinSystem};
use crate::noise::{weighted_draw, Channel, NoiseSource, WienerIncrement};
use crate::parallel::{map_indexed, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    ExplicitEm,
    Imex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "default_kind")]
    pub scheme: SchemeKind,
    /// `None` selects `10 (tau_0 + 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_guard: Option<f64>,
    #[serde(default = "default_true")]
    pub imex_mobility_freeze: bool,
    /// linear stabilization added to `F'_delta / eps` in the implicit part
    #[serde(default = "default_stabilization")]
    pub stabilization: f64,
    #[serde(default = "default_stabilization")]
    pub surface_stabilization: f64,
    /// each step consumes this many fine Brownian increments of size `dt / refine`
    #[serde(default = "default_refine")]
    pub brownian_refine: u64,
    /// keep a state snapshot every this many steps (0 keeps only the endpoints)
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "default_true")]
    pub drift: bool,
}

fn default_kind() -> SchemeKind {
    SchemeKind::Imex
}
fn default_true() -> bool {
    true
}
fn default_stabilization() -> f64 {
    2.0
}
fn default_refine() -> u64 {
    1
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self::imex(1e-3, 200)
    }
}

impl SchemeConfig {
    pub fn imex(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            scheme: SchemeKind::Imex,
            kappa_guard: None,
            imex_mobility_freeze: true,
            stabilization: default_stabilization(),
            surface_stabilization: default_stabilization(),
            brownian_refine: 1,
            snapshot_every: 0,
            drift: true,
        }
    }

    pub fn explicit(dt: f64, n_steps: usize) -> Self {
        Self {
            scheme: SchemeKind::ExplicitEm,
            ..Self::imex(dt, n_steps)
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt.is_finite() && self.dt > 0.0) {
            v.push(format!("dt must be > 0 (got {})", self.dt));
        }
        if let Some(k) = self.kappa_guard {
            if !(k > 0.0) {
                v.push(format!("kappa_guard must be > 0 (got {k})"));
            }
        }
        if !(self.stabilization >= 0.0) {
            v.push(format!("stabilization must be >= 0 (got {})", self.stabilization));
        }
        if !(self.surface_stabilization >= 0.0) {
            v.push(format!(
                "surface_stabilization must be >= 0 (got {})",
                self.surface_stabilization
            ));
        }
        if self.brownian_refine == 0 {
            v.push("brownian_refine must be >= 1 (got 0)".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ChbError::Scheme(v.join("; ")))
        }
    }
}

/// `L = diag(M lambda, N lambda_Gamma) (H + S)`, the stiff linear part, and
/// the factorization of `I + dt L`.
#[derive(Clone, Debug)]
pub struct ImexOperator {
    pub operator: DMatrix<f64>,
    factor: LU<f64, Dyn, Dyn>,
}

impl ImexOperator {
    pub fn new(system: &GalerkinSystem, dt: f64, scheme: &SchemeConfig, mobility: f64, surface_mobility: f64) -> Self {
        let basis = system.basis();
        let p = system.params();
        let nb = basis.n_bulk();
        let nd = basis.n_boundary();
        let n = nb + nd;
        let t = system.trace_matrix();
        let penalty = p.eps / p.robin_k;
        let lam_b = basis.bulk_eigenvalues();
        let lam_g = basis.boundary_eigenvalues();

        let mut h = DMatrix::zeros(n, n);
        let ttt = t.tr_mul(t) * penalty;
        h.view_mut((0, 0), (nb, nb)).copy_from(&ttt);
        for i in 0..nb {
            h[(i, i)] += p.eps * lam_b[i] + scheme.stabilization / p.eps;
        }
        h.view_mut((0, nb), (nb, nd)).copy_from(&(t.transpose() * -penalty));
        h.view_mut((nb, 0), (nd, nb)).copy_from(&(t * -penalty));
        for j in 0..nd {
            h[(nb + j, nb + j)] += p.eps_gamma * lam_g[j] + penalty + scheme.surface_stabilization / p.eps_gamma;
        }
        let mut operator = h;
        for i in 0..nb {
            let s = mobility * lam_b[i];
            operator.row_mut(i).scale_mut(s);
        }
        for j in 0..nd {
            let s = surface_mobility * lam_g[j];
            operator.row_mut(nb + j).scale_mut(s);
        }
        let factor = (DMatrix::identity(n, n) + &operator * dt).lu();
        Self { operator, factor }
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor
            .solve(rhs)
            .ok_or_else(|| ChbError::Scheme("implicit block is singular".into()))
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(a.len() + b.len());
    x.rows_mut(0, a.len()).copy_from(a);
    x.rows_mut(a.len(), b.len()).copy_from(b);
    x
}

fn split(x: &DVector<f64>, nb: usize) -> (DVector<f64>, DVector<f64>) {
    (x.rows(0, nb).into_owned(), x.rows(nb, x.len() - nb).into_owned())
}

/// Coefficient-space noise increments `(S_n F1(phi) dW, S_n F2(psi) dW_Gamma)`.
pub fn noise_increment(
    system: &GalerkinSystem,
    profiles: &(DVector<f64>, DVector<f64>),
    inc: &WienerIncrement,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let wb = weighted_draw(system.noise(), inc, Channel::Bulk)?;
    let wg = weighted_draw(system.noise(), inc, Channel::Boundary)?;
    Ok((&profiles.0 * wb, &profiles.1 * wg))
}

/// Sampled upper bounds `(M, N)` of the two mobilities.
pub fn mobility_bounds(system: &GalerkinSystem) -> (f64, f64) {
    let p = system.params();
    (p.bulk_mobility.sampled_bounds().1, p.surface_mobility.sampled_bounds().1)
}

/// Explicit Euler-Maruyama step from an evaluated state.
pub fn step_explicit(
    ev: &Evaluation,
    dt: f64,
    noise: &(DVector<f64>, DVector<f64>),
    drift: bool,
) -> (DVector<f64>, DVector<f64>) {
    let scale = if drift { dt } else { 0.0 };
    (&ev.a + &ev.da * scale + &noise.0, &ev.b + &ev.db * scale + &noise.1)
}

/// Semi-implicit step: `(I + dt L) X+ = X + dt (b(X) + L X) + noise`.
pub fn step_imex(
    op: &ImexOperator,
    ev: &Evaluation,
    dt: f64,
    noise: &(DVector<f64>, DVector<f64>),
    drift: bool,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let x = stack(&ev.a, &ev.b);
    let mut rhs = &x + stack(&noise.0, &noise.1);
    if drift {
        rhs += (stack(&ev.da, &ev.db) + &op.operator * &x) * dt;
    }
    let xp = if drift { op.solve(&rhs)? } else { rhs };
    Ok(split(&xp, ev.a.len()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathResult {
    pub path_index: u64,
    pub master_seed: u64,
    pub dt: f64,
    pub kappa: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<GalerkinState>,
    pub ledger: Vec<LedgerRow>,
    pub stopped_at: Option<usize>,
    /// discrete Ito-isometry prediction for the variance of the mass change
    pub mass_variance_prediction: f64,
    /// same sum for the boundary mass
    pub mass_gamma_variance_prediction: f64,
}

impl PathResult {
    pub fn final_row(&self) -> &LedgerRow {
        self.ledger.last().expect("ledger has the initial row")
    }
}

/// Scheme plus the precomputed implicit operator; shared by all paths.
#[derive(Debug)]
pub struct Stepper<'a> {
    system: &'a GalerkinSystem,
    scheme: SchemeConfig,
    frozen: Option<ImexOperator>,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a GalerkinSystem, scheme: SchemeConfig) -> Result<Self> {
        scheme.validate()?;
        let frozen = match scheme.scheme {
            SchemeKind::Imex if scheme.imex_mobility_freeze => {
                let (m, n) = mobility_bounds(system);
                Some(ImexOperator::new(system, scheme.dt, &scheme, m, n))
            }
            _ => None,
        };
        Ok(Self { system, scheme, frozen })
    }

    pub fn system(&self) -> &GalerkinSystem {
        self.system
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    /// One step from an evaluated state with the given coefficient-space noise.
    pub fn advance(&self, ev: &Evaluation, noise: &(DVector<f64>, DVector<f64>)) -> Result<(DVector<f64>, DVector<f64>)> {
        let dt = self.scheme.dt;
        match self.scheme.scheme {
            SchemeKind::ExplicitEm => Ok(step_explicit(ev, dt, noise, self.scheme.drift)),
            SchemeKind::Imex => match &self.frozen {
                Some(op) => step_imex(op, ev, dt, noise, self.scheme.drift),
                None => {
                    let basis = self.system.basis();
                    let geom = basis.geometry();
                    let m = basis.integrate(&ev.mobility) / geom.area();
                    let n = basis.integrate_boundary(&ev.surface_mobility) / geom.boundary_length();
                    let op = ImexOperator::new(self.system, dt, &self.scheme, m, n);
                    step_imex(&op, ev, dt, noise, self.scheme.drift)
                }
            },
        }
    }

    fn increment(&self, source: &NoiseSource, path: u64, step: u64) -> WienerIncrement {
        let k = self.system.noise().n_w_modes;
        let refine = self.scheme.brownian_refine;
        if refine == 1 {
            source.sample_increment(path, step, self.scheme.dt, k)
        } else {
            source.sample_coarse_increment(path, step, refine, self.scheme.dt / refine as f64, k)
        }
    }

    /// Simulates one path, recording the ledger at every step.
    pub fn simulate_path(
        &self,
        initial: &(DVector<f64>, DVector<f64>),
        source: &NoiseSource,
        path: u64,
    ) -> Result<PathResult> {
        let system = self.system;
        let dt = self.scheme.dt;
        let n_steps = self.scheme.n_steps;
        let silent = system.noise().is_silent();
        let geom = system.basis().geometry();
        let area = geom.area();
        let csq = system.noise().weight_sum_sq(Channel::Bulk);
        let csq_g = system.noise().weight_sum_sq(Channel::Boundary);

        let (mut a, mut b) = initial.clone();
        let mut ledger = Vec::with_capacity(n_steps + 1);
        let mut times = Vec::with_capacity(n_steps + 1);
        let mut snapshots = Vec::new();
        let mut stopped_at = None;
        let mut kappa = self.scheme.kappa_guard.unwrap_or(f64::INFINITY);
        let mut lhs_acc = 0.0;
        let mut rhs_acc = 0.0;
        let mut e0 = 0.0;
        let mut qv = 0.0;
        let mut qv_gamma = 0.0;

        for n in 0..=n_steps {
            let t = n as f64 * dt;
            let ev = system.evaluate(&a, &b)?;
            let profiles = projected_profiles(system, &ev)?;
            let mut row = ledger_terms(system, &ev, &profiles, t)?;
            if n == 0 {
                e0 = row.energy_tot;
                if self.scheme.kappa_guard.is_none() {
                    kappa = 10.0 * (row.guard + 1.0);
                }
            }
            row.residual = row.energy_tot + lhs_acc - (e0 + rhs_acc);
            let keep = n == 0
                || n == n_steps
                || (self.scheme.snapshot_every > 0 && n % self.scheme.snapshot_every == 0);
            let stop = row.guard >= kappa;
            if keep || stop {
                snapshots.push(ev.state(t));
            }
            if n == n_steps || stop {
                if stop {
                    stopped_at = Some(n);
                }
                times.push(t);
                ledger.push(row);
                break;
            }

            let noise = if silent {
                (DVector::zeros(a.len()), DVector::zeros(b.len()))
            } else {
                let inc = self.increment(source, path, n as u64);
                noise_increment(system, &profiles, &inc)?
            };
            row.stoch_mu = ev.c.dot(&noise.0);
            row.stoch_theta = ev.d.dot(&noise.1);
            row.stoch_phi = ev.a.dot(&noise.0);
            let bulk_mean = system.basis().integrate(&ev.phi.map(|s| system.noise().profile.eval(s))) / area;
            qv += csq * dt * bulk_mean * bulk_mean;
            let psi_mean = system
                .basis()
                .integrate_boundary(&ev.psi.map(|s| system.noise().profile.eval(s)))
                / geom.boundary_length();
            qv_gamma += csq_g * dt * psi_mean * psi_mean;

            lhs_acc += dt * row.dissipation();
            rhs_acc += dt * row.ito_total() + row.stochastic_total() - dt * row.cross_mobility;
            times.push(t);
            ledger.push(row);

            let (an, bn) = self.advance(&ev, &noise)?;
            if !(an.iter().all(|v| v.is_finite()) && bn.iter().all(|v| v.is_finite())) {
                return Err(ChbError::NonFinite {
                    step: n + 1,
                    time: t + dt,
                });
            }
            a = an;
            b = bn;
        }

        Ok(PathResult {
            path_index: path,
            master_seed: source.master_seed(),
            dt,
            kappa,
            times,
            snapshots,
            ledger,
            stopped_at,
            mass_variance_prediction: qv,
            mass_gamma_variance_prediction: qv_gamma,
        })
    }

    /// Independent paths `0..n_paths`, returned in path order.
    pub fn simulate_ensemble(
        &self,
        initial: &(DVector<f64>, DVector<f64>),
        source: &NoiseSource,
        n_paths: usize,
        execution: Execution,
    ) -> Result<Vec<PathResult>> {
        map_indexed(n_paths, execution, |p| self.simulate_path(initial, source, p as u64))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_dt() {
        assert!(SchemeConfig::imex(0.0, 10).validate().is_err());
        assert!(SchemeConfig::imex(1e-3, 10).validate().is_ok());
    }
}
