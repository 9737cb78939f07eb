//! Truncated cylindrical Wiener processes and the Nemytskii diffusions
//! `sigma_k(s) = c_k g(s)` acting on the bulk and boundary phase fields.
//!
//! Draws are keyed by `(master_seed, path, step)`: every path owns two ChaCha
//! streams (bulk and boundary) and every step starts at a fixed word offset, so
//! any increment can be regenerated without replaying the path.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ChbError, Result};
use crate::geometry::SpectralBasis;

/// Word offset between consecutive steps inside one stream.
const STEP_STRIDE: u128 = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Tanh,
    Sin,
    Constant,
}

impl Profile {
    pub fn eval(self, s: f64) -> f64 {
        match self {
            Profile::Tanh => s.tanh(),
            Profile::Sin => s.sin(),
            Profile::Constant => 1.0,
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            Profile::Tanh => {
                let t = s.tanh();
                1.0 - t * t
            }
            Profile::Sin => s.cos(),
            Profile::Constant => 0.0,
        }
    }

    /// `sup |g|`.
    pub fn sup(self) -> f64 {
        1.0
    }

    /// `sup |g'|`, which is also the Lipschitz constant.
    pub fn lipschitz(self) -> f64 {
        match self {
            Profile::Tanh | Profile::Sin => 1.0,
            Profile::Constant => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Bulk,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default = "default_modes")]
    pub n_w_modes: usize,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_base_weight")]
    pub base_weight: f64,
    #[serde(default = "default_amplitude")]
    pub bulk_amplitude: f64,
    #[serde(default = "default_amplitude")]
    pub boundary_amplitude: f64,
}

fn default_modes() -> usize {
    16
}
fn default_profile() -> Profile {
    Profile::Tanh
}
fn default_decay() -> f64 {
    1.0
}
fn default_base_weight() -> f64 {
    1.0
}
fn default_amplitude() -> f64 {
    0.1
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            n_w_modes: default_modes(),
            profile: default_profile(),
            weight_decay: default_decay(),
            base_weight: default_base_weight(),
            bulk_amplitude: default_amplitude(),
            boundary_amplitude: default_amplitude(),
        }
    }
}

impl NoiseModel {
    pub fn silent() -> Self {
        Self {
            bulk_amplitude: 0.0,
            boundary_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_w_modes == 0 {
            v.push("n_w_modes must be >= 1 (got 0)".to_string());
        }
        if !(self.weight_decay > 0.5) {
            v.push(format!(
                "weight_decay must be > 1/2 for the tail sum of c_k^2 to converge (got {})",
                self.weight_decay
            ));
        }
        if !(self.base_weight.is_finite() && self.base_weight >= 0.0) {
            v.push(format!("base_weight must be >= 0 (got {})", self.base_weight));
        }
        if !(self.bulk_amplitude.is_finite() && self.bulk_amplitude >= 0.0) {
            v.push(format!("bulk_amplitude must be >= 0 (got {})", self.bulk_amplitude));
        }
        if !(self.boundary_amplitude.is_finite() && self.boundary_amplitude >= 0.0) {
            v.push(format!(
                "boundary_amplitude must be >= 0 (got {})",
                self.boundary_amplitude
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ChbError::Noise(v.join("; ")))
        }
    }

    pub fn amplitude(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Bulk => self.bulk_amplitude,
            Channel::Boundary => self.boundary_amplitude,
        }
    }

    pub fn is_silent(&self) -> bool {
        self.bulk_amplitude == 0.0 && self.boundary_amplitude == 0.0
    }

    /// `c_k` for `k = 1..=n_w_modes`.
    pub fn weight(&self, channel: Channel, k: usize) -> f64 {
        self.amplitude(channel) * self.base_weight * (k as f64).powf(-self.weight_decay)
    }

    pub fn weights(&self, channel: Channel) -> Vec<f64> {
        (1..=self.n_w_modes).map(|k| self.weight(channel, k)).collect()
    }

    /// `sum_k c_k^2` over the truncation.
    pub fn weight_sum_sq(&self, channel: Channel) -> f64 {
        self.weights(channel).iter().map(|c| c * c).sum()
    }

    /// Closed-form bound on `sum_{k > K} c_k^2` via the integral test.
    pub fn tail_bound(&self, channel: Channel) -> f64 {
        let a = self.amplitude(channel) * self.base_weight;
        let two_rho = 2.0 * self.weight_decay;
        a * a * (self.n_w_modes as f64).powf(1.0 - two_rho) / (two_rho - 1.0)
    }

    /// `sum_k ||sigma_k(phi)||_inf^2 <= ||g||_inf^2 sum c_k^2`.
    pub fn sup_bound(&self, channel: Channel) -> f64 {
        self.profile.sup().powi(2) * self.weight_sum_sq(channel)
    }

    /// `C_1` with `||F(phi)||_HS(H^1)^2 <= C_1 (1 + |grad phi|^2)` on a domain of measure `measure`.
    pub fn h1_growth_constant(&self, channel: Channel, measure: f64) -> f64 {
        let g = self.profile.sup().powi(2) * measure;
        let dg = self.profile.lipschitz().powi(2);
        self.weight_sum_sq(channel) * g.max(dg)
    }

    /// `C_2` with `||F(phi) - F(psi)||_HS(L2)^2 <= C_2 |phi - psi|^2`.
    pub fn lipschitz_constant(&self, channel: Channel) -> f64 {
        self.profile.lipschitz().powi(2) * self.weight_sum_sq(channel)
    }
}

/// Reproducibility key of one increment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IncrementKey {
    pub master_seed: u64,
    pub path_index: u64,
    pub step_index: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WienerIncrement {
    pub dt: f64,
    pub bulk_draws: Vec<f64>,
    pub boundary_draws: Vec<f64>,
    pub key: IncrementKey,
}

impl WienerIncrement {
    pub fn zero(n_modes: usize, dt: f64, key: IncrementKey) -> Self {
        Self {
            dt,
            bulk_draws: vec![0.0; n_modes],
            boundary_draws: vec![0.0; n_modes],
            key,
        }
    }

    pub fn draws(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Bulk => &self.bulk_draws,
            Channel::Boundary => &self.boundary_draws,
        }
    }
}

/// Keyed generator for one master seed.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    master_seed: u64,
    base: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            base: ChaCha8Rng::seed_from_u64(master_seed),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    fn stream(&self, path: u64, channel: Channel, step: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        let lane = match channel {
            Channel::Bulk => 0,
            Channel::Boundary => 1,
        };
        rng.set_stream(path * 2 + lane);
        rng.set_word_pos(step as u128 * STEP_STRIDE);
        rng
    }

    /// Standard normal draws scaled by `sqrt(dt)`.
    pub fn sample_increment(&self, path: u64, step: u64, dt: f64, n_modes: usize) -> WienerIncrement {
        let key = IncrementKey {
            master_seed: self.master_seed,
            path_index: path,
            step_index: step,
        };
        let scale = dt.max(0.0).sqrt();
        let draw = |channel| {
            let mut rng = self.stream(path, channel, step);
            (0..n_modes)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect::<Vec<f64>>()
        };
        WienerIncrement {
            dt,
            bulk_draws: draw(Channel::Bulk),
            boundary_draws: draw(Channel::Boundary),
            key,
        }
    }

    /// Sum of `refine` consecutive fine increments starting at fine step
    /// `coarse_step * refine`; coarse and fine paths then share one Brownian path.
    pub fn sample_coarse_increment(
        &self,
        path: u64,
        coarse_step: u64,
        refine: u64,
        fine_dt: f64,
        n_modes: usize,
    ) -> WienerIncrement {
        let mut acc = WienerIncrement::zero(
            n_modes,
            fine_dt * refine as f64,
            IncrementKey {
                master_seed: self.master_seed,
                path_index: path,
                step_index: coarse_step,
            },
        );
        for f in 0..refine {
            let inc = self.sample_increment(path, coarse_step * refine + f, fine_dt, n_modes);
            for (a, b) in acc.bulk_draws.iter_mut().zip(&inc.bulk_draws) {
                *a += b;
            }
            for (a, b) in acc.boundary_draws.iter_mut().zip(&inc.boundary_draws) {
                *a += b;
            }
        }
        acc
    }
}

fn check_truncation(model: &NoiseModel, inc: &WienerIncrement) -> Result<()> {
    if inc.bulk_draws.len() != model.n_w_modes || inc.boundary_draws.len() != model.n_w_modes {
        return Err(ChbError::Truncation {
            expected: model.n_w_modes,
            got: inc.bulk_draws.len(),
        });
    }
    Ok(())
}

/// `sum_k c_k dW^k` for the given channel.
pub fn weighted_draw(model: &NoiseModel, inc: &WienerIncrement, channel: Channel) -> Result<f64> {
    check_truncation(model, inc)?;
    Ok(model
        .weights(channel)
        .iter()
        .zip(inc.draws(channel))
        .map(|(c, w)| c * w)
        .sum())
}

/// `sum_k sigma_k(phi) dW^k` pointwise on a grid.
pub fn diffusion_apply(
    state: &DMatrix<f64>,
    model: &NoiseModel,
    inc: &WienerIncrement,
    channel: Channel,
) -> Result<DMatrix<f64>> {
    let w = weighted_draw(model, inc, channel)?;
    let profile = model.profile;
    Ok(state.map(|s| profile.eval(s) * w))
}

/// `(sum_k ||sigma_k(phi)||_L2^2, sum_k ||sigma_k(phi)||_H1^2)` for a bulk expansion.
pub fn hilbert_schmidt_norms(
    a: &DVector<f64>,
    basis: &SpectralBasis,
    model: &NoiseModel,
) -> Result<(f64, f64)> {
    let phi = basis.bulk_to_grid(a)?;
    let (gx, gy) = basis.bulk_gradient(a)?;
    let p = model.profile;
    let csq = model.weight_sum_sq(Channel::Bulk);
    let l2 = basis.integrate(&phi.map(|s| p.eval(s).powi(2))) * csq;
    let grad_sq = gx.component_mul(&gx) + gy.component_mul(&gy);
    let dg = phi.map(|s| p.derivative(s).powi(2));
    let h1 = l2 + basis.integrate(&dg.component_mul(&grad_sq)) * csq;
    Ok((l2, h1))
}

/// Boundary analogue of [`hilbert_schmidt_norms`] with the tangential derivative.
pub fn hilbert_schmidt_norms_boundary(
    b: &DVector<f64>,
    basis: &SpectralBasis,
    model: &NoiseModel,
) -> Result<(f64, f64)> {
    let phi = basis.boundary_to_grid(b)?;
    let dx = basis.boundary_derivative(b)?;
    let p = model.profile;
    let csq = model.weight_sum_sq(Channel::Boundary);
    let l2 = basis.integrate_boundary(&phi.map(|s| p.eval(s).powi(2))) * csq;
    let dg = phi.map(|s| p.derivative(s).powi(2));
    let h1 = l2 + basis.integrate_boundary(&dg.component_mul(&dx.component_mul(&dx))) * csq;
    Ok((l2, h1))
}
