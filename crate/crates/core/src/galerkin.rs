//! The finite-dimensional system: chemical potentials, the Brinkman velocity
//! solve, and the drift of the Galerkin SDE.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{ChbError, Result};
use crate::geometry::{Circle, SpectralBasis};
use crate::noise::NoiseModel;
use crate::potentials::{sample_grid, RegularizedPotential};

/// Range on which coefficient functions are sampled for their bounds.
pub const COEFFICIENT_RANGE: f64 = 4.0;

/// Scalar coefficient `s -> value`, either constant or a smooth tanh blend
/// `low + (high - low)(1 + tanh s)/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientFn {
    Constant { value: f64 },
    TanhBlend { low: f64, high: f64 },
}

impl CoefficientFn {
    pub fn constant(value: f64) -> Self {
        CoefficientFn::Constant { value }
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            CoefficientFn::Constant { value } => value,
            CoefficientFn::TanhBlend { low, high } => low + (high - low) * 0.5 * (1.0 + s.tanh()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CoefficientFn::Constant { .. })
    }

    /// `(inf, sup)` over the real line.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            CoefficientFn::Constant { value } => (value, value),
            CoefficientFn::TanhBlend { low, high } => (low.min(high), low.max(high)),
        }
    }

    /// `(min, max)` over samples of `[-4, 4]`.
    pub fn sampled_bounds(&self) -> (f64, f64) {
        sample_grid(COEFFICIENT_RANGE, 0.01).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            let v = self.eval(s);
            (lo.min(v), hi.max(v))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalParams {
    pub eps: f64,
    pub eps_gamma: f64,
    #[serde(rename = "robin_K")]
    pub robin_k: f64,
    pub viscosity: CoefficientFn,
    pub permeability: CoefficientFn,
    pub friction: CoefficientFn,
    pub bulk_mobility: CoefficientFn,
    pub surface_mobility: CoefficientFn,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            eps: 1.0,
            eps_gamma: 1.0,
            robin_k: 1.0,
            viscosity: CoefficientFn::constant(1.0),
            permeability: CoefficientFn::constant(1.0),
            friction: CoefficientFn::constant(1.0),
            bulk_mobility: CoefficientFn::constant(1.0),
            surface_mobility: CoefficientFn::constant(1.0),
        }
    }
}

impl PhysicalParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("eps", self.eps), ("eps_gamma", self.eps_gamma), ("robin_K", self.robin_k)] {
            if !(x.is_finite() && x > 0.0) {
                let why = if name == "robin_K" { "; only the Robin coupling K > 0 is supported" } else { "" };
                v.push(format!("{name} must be > 0 (got {x}){why}"));
            }
        }
        let positive = [
            ("viscosity", &self.viscosity),
            ("friction", &self.friction),
            ("bulk_mobility", &self.bulk_mobility),
            ("surface_mobility", &self.surface_mobility),
        ];
        for (name, f) in positive {
            let (lo, hi) = f.sampled_bounds();
            if !(lo > 0.0 && hi.is_finite()) {
                v.push(format!("{name} must be bounded and > 0 on [-4, 4] (sampled min {lo})"));
            }
        }
        let (lo, hi) = self.permeability.sampled_bounds();
        if !(lo >= 0.0 && hi.is_finite()) {
            v.push(format!("permeability must be bounded and >= 0 on [-4, 4] (sampled min {lo})"));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ChbError::Params(v.join("; ")))
        }
    }

    pub fn constant_brinkman(&self) -> bool {
        self.viscosity.is_constant() && self.permeability.is_constant() && self.friction.is_constant()
    }
}

/// The full state of a Galerkin path at one time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GalerkinState {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub time: f64,
}

/// Every grid field and derived coefficient vector at one state.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub phi_x: DMatrix<f64>,
    pub phi_y: DMatrix<f64>,
    pub phi_trace: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub psi_x: DMatrix<f64>,
    pub f_value: DMatrix<f64>,
    pub f_second: DMatrix<f64>,
    pub g_value: DMatrix<f64>,
    pub g_second: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub mu_x: DMatrix<f64>,
    pub mu_y: DMatrix<f64>,
    pub theta_x: DMatrix<f64>,
    pub mobility: DMatrix<f64>,
    pub surface_mobility: DMatrix<f64>,
    pub e: DVector<f64>,
    pub ux: DMatrix<f64>,
    pub uy: DMatrix<f64>,
    pub u_wall: DMatrix<f64>,
    pub da: DVector<f64>,
    pub db: DVector<f64>,
    pub da_convective: DVector<f64>,
    pub db_convective: DVector<f64>,
}

impl Evaluation {
    pub fn state(&self, time: f64) -> GalerkinState {
        GalerkinState {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
            e: self.e.clone(),
            time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanChemicalPotential {
    pub mu_mean: f64,
    pub mu_bound: f64,
    /// per-circle means of theta, bottom then top
    pub theta_means: [f64; 2],
    pub theta_bound: f64,
    pub constant_mu: f64,
    pub constant_theta: f64,
    pub holds: bool,
}

/// Immutable model: basis, parameters, regularized potentials and noise.
#[derive(Debug)]
pub struct GalerkinSystem {
    basis: SpectralBasis,
    params: PhysicalParams,
    bulk_potential: RegularizedPotential,
    surface_potential: RegularizedPotential,
    noise: NoiseModel,
    trace_matrix: DMatrix<f64>,
    brinkman_cache: OnceLock<Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>>,
}

impl GalerkinSystem {
    pub fn new(
        basis: SpectralBasis,
        params: PhysicalParams,
        bulk_potential: RegularizedPotential,
        surface_potential: RegularizedPotential,
        noise: NoiseModel,
    ) -> Result<Self> {
        params.validate()?;
        bulk_potential.base.validate()?;
        surface_potential.base.validate()?;
        noise.validate()?;
        let trace_matrix = basis.trace_matrix();
        Ok(Self {
            basis,
            params,
            bulk_potential,
            surface_potential,
            noise,
            trace_matrix,
            brinkman_cache: OnceLock::new(),
        })
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn bulk_potential(&self) -> &RegularizedPotential {
        &self.bulk_potential
    }

    pub fn surface_potential(&self) -> &RegularizedPotential {
        &self.surface_potential
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn trace_matrix(&self) -> &DMatrix<f64> {
        &self.trace_matrix
    }

    fn check_state(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
        if a.len() != self.basis.n_bulk() {
            return Err(ChbError::LengthMismatch {
                what: "bulk coefficients",
                expected: self.basis.n_bulk(),
                got: a.len(),
            });
        }
        if b.len() != self.basis.n_boundary() {
            return Err(ChbError::LengthMismatch {
                what: "boundary coefficients",
                expected: self.basis.n_boundary(),
                got: b.len(),
            });
        }
        Ok(())
    }

    /// `(c, d)`: the exact gradients of the discrete free energy.
    pub fn chemical_potentials(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_state(a, b)?;
        let phi = self.basis.bulk_to_grid(a)?;
        let psi = self.basis.boundary_to_grid(b)?;
        let (_, f1, _) = self.bulk_potential.evaluate_grid(&phi)?;
        let (_, g1, _) = self.surface_potential.evaluate_grid(&psi)?;
        Ok(self.potentials_from_grids(a, b, &f1, &g1)?)
    }

    fn potentials_from_grids(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        f1: &DMatrix<f64>,
        g1: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let p = &self.params;
        let penalty = p.eps / p.robin_k;
        let jump = &self.trace_matrix * a - b;
        let c = self.basis.bulk_eigenvalues().component_mul(a) * p.eps
            + self.basis.bulk_from_grid(f1)? / p.eps
            + self.trace_matrix.tr_mul(&jump) * penalty;
        let d = self.basis.boundary_eigenvalues().component_mul(b) * p.eps_gamma
            + self.basis.boundary_from_grid(g1)? / p.eps_gamma
            - jump * penalty;
        Ok((c, d))
    }

    fn weighted_gram(t: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = t.clone();
        for (r, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[r];
        }
        t.tr_mul(&scaled)
    }

    fn assemble_from_grids(&self, phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.basis.velocity_tables();
        let w = self.basis.flat_weights();
        let flat_phi = DVector::from_column_slice(phi.as_slice());
        let nu = flat_phi.map(|s| self.params.viscosity.eval(s)).component_mul(&w);
        let lam = flat_phi.map(|s| self.params.permeability.eval(s)).component_mul(&w);
        let wx = self.basis.x_weight();
        let gam = DVector::from_column_slice(psi.as_slice()).map(|s| self.params.friction.eval(s) * wx);
        let mut a = (Self::weighted_gram(&t.exx, &nu)
            + Self::weighted_gram(&t.exy, &nu) * 2.0
            + Self::weighted_gram(&t.eyy, &nu))
            * 2.0;
        a += Self::weighted_gram(&t.ux, &lam);
        a += Self::weighted_gram(&t.uy, &lam);
        a += Self::weighted_gram(&t.ux_boundary, &gam);
        // remove rounding asymmetry
        let at = a.transpose();
        (a + at) * 0.5
    }

    /// Brinkman matrix `A_jk = Q(2 nu Dw_j : Dw_k) + Q(lambda w_j . w_k) + Q_Gamma(gamma w_j . w_k)`.
    pub fn brinkman_assemble(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(a, b)?;
        if let Some((m, _)) = self.constant_brinkman() {
            return Ok(m.clone());
        }
        let phi = self.basis.bulk_to_grid(a)?;
        let psi = self.basis.boundary_to_grid(b)?;
        Ok(self.assemble_from_grids(&phi, &psi))
    }

    fn constant_brinkman(&self) -> Option<&(DMatrix<f64>, Cholesky<f64, Dyn>)> {
        if !self.params.constant_brinkman() {
            return None;
        }
        self.brinkman_cache
            .get_or_init(|| {
                let (ny, nx) = self.basis.grid_shape();
                let m = self.assemble_from_grids(&DMatrix::zeros(ny, nx), &DMatrix::zeros(2, nx));
                Cholesky::new(m.clone()).map(|c| (m, c))
            })
            .as_ref()
    }

    fn brinkman_factor(&self, phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<BrinkmanFactor<'_>> {
        if self.params.constant_brinkman() {
            return self
                .constant_brinkman()
                .map(|(_, c)| BrinkmanFactor::Cached(c))
                .ok_or(ChbError::NotPositiveDefinite);
        }
        Cholesky::new(self.assemble_from_grids(phi, psi))
            .map(BrinkmanFactor::Owned)
            .ok_or(ChbError::NotPositiveDefinite)
    }

    /// Load vector `f_j = -Q_Gamma(psi theta_x w_j) - Q(phi grad mu . w_j)`.
    pub fn brinkman_rhs(
        &self,
        phi: &DMatrix<f64>,
        psi: &DMatrix<f64>,
        mu_x: &DMatrix<f64>,
        mu_y: &DMatrix<f64>,
        theta_x: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        Ok(-self.basis.velocity_project(
            &phi.component_mul(mu_x),
            &phi.component_mul(mu_y),
            &psi.component_mul(theta_x),
        )?)
    }

    /// Velocity coefficients for the given phase fields and chemical potentials.
    pub fn brinkman_solve(
        &self,
        a: &DVector<f64>,
        b: &DVector<f64>,
        c: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_state(a, b)?;
        self.check_state(c, d)?;
        let phi = self.basis.bulk_to_grid(a)?;
        let psi = self.basis.boundary_to_grid(b)?;
        let (mu_x, mu_y) = self.basis.bulk_gradient(c)?;
        let theta_x = self.basis.boundary_derivative(d)?;
        let f = self.brinkman_rhs(&phi, &psi, &mu_x, &mu_y, &theta_x)?;
        Ok(self.brinkman_factor(&phi, &psi)?.solve(&f))
    }

    /// Evaluates every derived field at `(a, b)`.
    pub fn evaluate(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<Evaluation> {
        self.check_state(a, b)?;
        let basis = &self.basis;
        let phi = basis.bulk_to_grid(a)?;
        let (phi_x, phi_y) = basis.bulk_gradient(a)?;
        let phi_trace = basis.trace_grid(&phi)?;
        let psi = basis.boundary_to_grid(b)?;
        let psi_x = basis.boundary_derivative(b)?;
        let (f_value, f1, f_second) = self.bulk_potential.evaluate_grid(&phi)?;
        let (g_value, g1, g_second) = self.surface_potential.evaluate_grid(&psi)?;
        let (c, d) = self.potentials_from_grids(a, b, &f1, &g1)?;
        let (mu_x, mu_y) = basis.bulk_gradient(&c)?;
        let theta_x = basis.boundary_derivative(&d)?;

        let f = self.brinkman_rhs(&phi, &psi, &mu_x, &mu_y, &theta_x)?;
        let e = self.brinkman_factor(&phi, &psi)?.solve(&f);
        let (ux, uy) = basis.velocity_to_grid(&e)?;
        let u_wall = basis.trace_grid(&ux)?;

        let mobility = phi.map(|s| self.params.bulk_mobility.eval(s));
        let surface_mobility = psi.map(|s| self.params.surface_mobility.eval(s));
        let da_convective = basis.bulk_project_gradient(&phi.component_mul(&ux), &phi.component_mul(&uy))?;
        let da = &da_convective
            - basis.bulk_project_gradient(&mobility.component_mul(&mu_x), &mobility.component_mul(&mu_y))?;
        let db_convective = basis.boundary_project_derivative(&psi.component_mul(&u_wall))?;
        let db = &db_convective - basis.boundary_project_derivative(&surface_mobility.component_mul(&theta_x))?;

        Ok(Evaluation {
            a: a.clone(),
            b: b.clone(),
            phi,
            phi_x,
            phi_y,
            phi_trace,
            psi,
            psi_x,
            f_value,
            f_second,
            g_value,
            g_second,
            c,
            d,
            mu_x,
            mu_y,
            theta_x,
            mobility,
            surface_mobility,
            e,
            ux,
            uy,
            u_wall,
            da,
            db,
            da_convective,
            db_convective,
        })
    }

    /// `(da, db)` together with the state's `(c, d, e)`.
    pub fn drift(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, GalerkinState)> {
        let ev = self.evaluate(a, b)?;
        let state = ev.state(0.0);
        Ok((ev.da, ev.db, state))
    }

    /// `C_F,delta = max |F'_delta| / (1 + |F_delta|)` over `[-range, range]`.
    fn growth(pot: &RegularizedPotential, range: f64) -> Result<f64> {
        let mut c: f64 = 0.0;
        for s in sample_grid(range, range / 400.0) {
            let p = pot.evaluate(s)?;
            c = c.max(p.derivative.abs() / (1.0 + p.value.abs()));
        }
        Ok(c)
    }

    /// Means of the chemical potentials and their a priori bounds. Theta means
    /// are taken per circle since the two circles are disconnected.
    pub fn mean_chemical_potential_bound(&self, ev: &Evaluation) -> Result<MeanChemicalPotential> {
        let basis = &self.basis;
        let geom = basis.geometry();
        let p = &self.params;
        let area = geom.area();
        let l = geom.period_length;
        let gamma = geom.boundary_length();

        let mu_mean = ev.c[0] / area.sqrt();
        let c0 = 1.0 / l.sqrt();
        let theta_means = [
            ev.d[basis.boundary_index(Circle::Bottom, 0)] * c0,
            ev.d[basis.boundary_index(Circle::Top, 0)] * c0,
        ];

        let range_f = ev.phi.amax().max(COEFFICIENT_RANGE);
        let range_g = ev.psi.amax().max(COEFFICIENT_RANGE);
        let cf = Self::growth(&self.bulk_potential, range_f)?;
        let cg = Self::growth(&self.surface_potential, range_g)?;

        let jump = &ev.psi - &ev.phi_trace;
        let jump_norm = basis.integrate_boundary(&jump.component_mul(&jump)).sqrt();
        let f_l1 = basis.integrate(&ev.f_value.abs());
        let g_l1 = basis.integrate_boundary(&ev.g_value.abs());

        let penalty = p.eps / p.robin_k;
        let constant_mu = (cf / p.eps).max(cf / (p.eps * area)).max(penalty * gamma.sqrt() / area);
        let constant_theta = (cg / p.eps_gamma)
            .max(cg / (p.eps_gamma * l))
            .max(penalty / l.sqrt());
        let mu_bound = constant_mu * (1.0 + jump_norm + f_l1);
        let theta_bound = constant_theta * (1.0 + jump_norm + g_l1);
        let holds = mu_mean.abs() <= mu_bound
            && theta_means[0].abs() <= theta_bound
            && theta_means[1].abs() <= theta_bound;
        Ok(MeanChemicalPotential {
            mu_mean,
            mu_bound,
            theta_means,
            theta_bound,
            constant_mu,
            constant_theta,
            holds,
        })
    }
}

enum BrinkmanFactor<'a> {
    Cached(&'a Cholesky<f64, Dyn>),
    Owned(Cholesky<f64, Dyn>),
}

impl BrinkmanFactor<'_> {
    fn solve(&self, f: &DVector<f64>) -> DVector<f64> {
        match self {
            BrinkmanFactor::Cached(c) => c.solve(f),
            BrinkmanFactor::Owned(c) => c.solve(f),
        }
    }
}
