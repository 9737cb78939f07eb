//! Run configuration: one TOML document, every block optional.

use std::fmt;
use std::str::FromStr;

use chb_core::galerkin::{GalerkinSystem, PhysicalParams};
use chb_core::geometry::{ChannelGeometry, SpectralBasis};
use chb_core::noise::NoiseModel;
use chb_core::parallel::Execution;
use chb_core::potentials::{RegularizedPotential, SmoothPotential};
use chb_core::timestepper::SchemeConfig;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("config has {} violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn violations(&self) -> Vec<String> {
        match self {
            ConfigError::Syntax(s) => vec![s.clone()],
            ConfigError::Invalid(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub geometry: ChannelGeometry,
    pub params: PhysicalParams,
    pub potentials: PotentialsBlock,
    pub noise: NoiseModel,
    pub scheme: SchemeConfig,
    pub initial: InitialData,
    pub experiment: ExperimentBlock,
    pub output: OutputBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            geometry: ChannelGeometry::default(),
            params: PhysicalParams::default(),
            potentials: PotentialsBlock::default(),
            noise: NoiseModel::default(),
            scheme: SchemeConfig::default(),
            initial: InitialData::default(),
            experiment: ExperimentBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialFamily {
    #[default]
    Polynomial,
}

/// Double wells `(alpha/4)(s^2 - beta^2)^2` in the bulk and on the walls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialsBlock {
    pub family: PotentialFamily,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_gamma: f64,
    pub beta_gamma: f64,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_gamma: Option<f64>,
    pub resolvent_tolerance: f64,
}

impl Default for PotentialsBlock {
    fn default() -> Self {
        Self {
            family: PotentialFamily::Polynomial,
            alpha: 1.0,
            beta: 1.0,
            alpha_gamma: 1.0,
            beta_gamma: 1.0,
            delta: 0.1,
            shift: None,
            shift_gamma: None,
            resolvent_tolerance: 1e-12,
        }
    }
}

impl PotentialsBlock {
    fn smooth(alpha: f64, beta: f64, shift: Option<f64>) -> SmoothPotential {
        let p = SmoothPotential::polynomial(alpha, beta);
        match shift {
            Some(c) => p.with_shift(c),
            None => p,
        }
    }

    pub fn bulk_base(&self) -> SmoothPotential {
        Self::smooth(self.alpha, self.beta, self.shift)
    }

    pub fn surface_base(&self) -> SmoothPotential {
        Self::smooth(self.alpha_gamma, self.beta_gamma, self.shift_gamma)
    }

    fn regularize(&self, base: SmoothPotential) -> RegularizedPotential {
        RegularizedPotential {
            base,
            delta: self.delta,
            resolvent_tolerance: self.resolvent_tolerance,
        }
    }

    pub fn bulk(&self) -> RegularizedPotential {
        self.regularize(self.bulk_base())
    }

    pub fn surface(&self) -> RegularizedPotential {
        self.regularize(self.surface_base())
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (label, pot) in [("bulk", self.bulk()), ("surface", self.surface())] {
            if let Err(e) = pot.validate() {
                v.push(format!("{label}: {e}"));
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    #[default]
    Cos,
    Sin,
}

/// `amplitude * trig(2 pi kx x / L) * cos(pi ky y / H)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub amplitude: f64,
    #[serde(default)]
    pub kx: usize,
    #[serde(default)]
    pub ky: usize,
    #[serde(default)]
    pub trig: Trig,
}

impl TrigTerm {
    pub fn cos(amplitude: f64, kx: usize, ky: usize) -> Self {
        Self {
            amplitude,
            kx,
            ky,
            trig: Trig::Cos,
        }
    }

    fn eval(&self, x: f64, y: f64, l: f64, h: f64) -> f64 {
        let arg = 2.0 * std::f64::consts::PI * self.kx as f64 * x / l;
        let fx = match self.trig {
            Trig::Cos => arg.cos(),
            Trig::Sin => arg.sin(),
        };
        self.amplitude * fx * (std::f64::consts::PI * self.ky as f64 * y / h).cos()
    }
}

/// Bandlimited initial fields as sums of trigonometric terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialData {
    pub bulk: Vec<TrigTerm>,
    pub bottom: Vec<TrigTerm>,
    pub top: Vec<TrigTerm>,
}

impl Default for InitialData {
    /// Traces of the bulk field match the wall fields.
    fn default() -> Self {
        Self {
            bulk: vec![TrigTerm::cos(0.1, 0, 0), TrigTerm::cos(0.3, 1, 0), TrigTerm::cos(0.2, 0, 1)],
            bottom: vec![TrigTerm::cos(0.3, 0, 0), TrigTerm::cos(0.3, 1, 0)],
            top: vec![TrigTerm::cos(-0.1, 0, 0), TrigTerm::cos(0.3, 1, 0)],
        }
    }
}

impl InitialData {
    pub fn zero() -> Self {
        Self {
            bulk: Vec::new(),
            bottom: Vec::new(),
            top: Vec::new(),
        }
    }

    /// Largest `(kx, ky)` used by any term.
    pub fn bandwidth(&self) -> (usize, usize) {
        let all = self.bulk.iter().chain(&self.bottom).chain(&self.top);
        all.fold((0, 0), |(a, b), t| (a.max(t.kx), b.max(t.ky)))
    }

    fn violations(&self, n_x: usize, n_y: usize) -> Vec<String> {
        let mut v = Vec::new();
        for (label, terms, wall) in [("bulk", &self.bulk, false), ("bottom", &self.bottom, true), ("top", &self.top, true)] {
            for (i, t) in terms.iter().enumerate() {
                let at = format!("initial.{label}[{i}]");
                if !t.amplitude.is_finite() {
                    v.push(format!("{at}.amplitude must be finite (got {})", t.amplitude));
                }
                if t.kx >= n_x {
                    v.push(format!("{at}.kx must be < n_x_modes = {n_x} (got {})", t.kx));
                }
                if t.trig == Trig::Sin && t.kx == 0 {
                    v.push(format!("{at}: a sin term needs kx >= 1"));
                }
                if wall && t.ky != 0 {
                    v.push(format!("{at}.ky must be 0 on a wall (got {})", t.ky));
                }
                if !wall && t.ky >= n_y {
                    v.push(format!("{at}.ky must be < n_y_modes = {n_y} (got {})", t.ky));
                }
            }
        }
        v
    }

    /// Exact coefficients in `basis`; the data are bandlimited after validation.
    pub fn project(&self, basis: &SpectralBasis) -> chb_core::Result<(DVector<f64>, DVector<f64>)> {
        let g = basis.geometry();
        let (l, h) = (g.period_length, g.channel_height);
        let (ny, nx) = basis.grid_shape();
        let (x, y) = (basis.x_nodes(), basis.y_nodes());
        let phi = DMatrix::from_fn(ny, nx, |r, c| self.bulk.iter().map(|t| t.eval(x[c], y[r], l, h)).sum());
        let psi = DMatrix::from_fn(2, nx, |r, c| {
            let terms = if r == 0 { &self.bottom } else { &self.top };
            terms.iter().map(|t| t.eval(x[c], 0.0, l, h)).sum()
        });
        Ok((basis.bulk_from_grid(&phi)?, basis.boundary_from_grid(&psi)?))
    }
}

/// Experiment selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[default]
    #[serde(rename = "single-path")]
    SinglePath,
    #[serde(rename = "monte-carlo")]
    MonteCarlo,
    #[serde(rename = "ladder:dt")]
    LadderDt,
    #[serde(rename = "ladder:n")]
    LadderN,
    #[serde(rename = "ladder:delta")]
    LadderDelta,
    #[serde(rename = "certify:yosida")]
    CertifyYosida,
    #[serde(rename = "certify:korn")]
    CertifyKorn,
    #[serde(rename = "certify:energy")]
    CertifyEnergy,
    #[serde(rename = "certify:moments")]
    CertifyMoments,
    #[serde(rename = "certify:inequality")]
    CertifyInequality,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 10] = [
        ExperimentKind::SinglePath,
        ExperimentKind::MonteCarlo,
        ExperimentKind::LadderDt,
        ExperimentKind::LadderN,
        ExperimentKind::LadderDelta,
        ExperimentKind::CertifyYosida,
        ExperimentKind::CertifyKorn,
        ExperimentKind::CertifyEnergy,
        ExperimentKind::CertifyMoments,
        ExperimentKind::CertifyInequality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SinglePath => "single-path",
            ExperimentKind::MonteCarlo => "monte-carlo",
            ExperimentKind::LadderDt => "ladder:dt",
            ExperimentKind::LadderN => "ladder:n",
            ExperimentKind::LadderDelta => "ladder:delta",
            ExperimentKind::CertifyYosida => "certify:yosida",
            ExperimentKind::CertifyKorn => "certify:korn",
            ExperimentKind::CertifyEnergy => "certify:energy",
            ExperimentKind::CertifyMoments => "certify:moments",
            ExperimentKind::CertifyInequality => "certify:inequality",
        }
    }

    /// `certify <suite>` argument.
    pub fn certify(suite: &str) -> Option<Self> {
        format!("certify:{suite}").parse().ok()
    }

    /// `ladder <axis>` argument.
    pub fn ladder(axis: &str) -> Option<Self> {
        let axis = if axis == "δ" { "delta" } else { axis };
        format!("ladder:{axis}").parse().ok()
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    pub n_paths: usize,
    pub execution: Execution,
    /// decreasing; each level a whole multiple of the finest
    pub dt_levels: Vec<f64>,
    /// increasing mode counts, applied to both directions
    pub n_levels: Vec<usize>,
    /// decreasing regularization parameters
    pub delta_levels: Vec<f64>,
    pub moment_orders: Vec<u32>,
    pub yosida_deltas: Vec<f64>,
    pub yosida_range: f64,
    pub yosida_step: f64,
    /// random states for the coercivity and Korn samples
    pub korn_samples: usize,
    /// `C` in the per-step bound `|defect| <= C dt^2`
    pub defect_constant: f64,
    pub energy_increase_tolerance: f64,
    pub mass_tolerance: f64,
    pub slope_min: f64,
    pub stability_tolerance: f64,
    pub constant_ratio_max: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SinglePath,
            n_paths: 64,
            execution: Execution::Parallel,
            dt_levels: vec![4e-3, 2e-3, 1e-3],
            n_levels: vec![4, 8, 16],
            delta_levels: vec![0.4, 0.2, 0.1],
            moment_orders: vec![2, 4],
            yosida_deltas: vec![0.5, 0.1, 0.01],
            yosida_range: 4.0,
            yosida_step: 0.01,
            korn_samples: 50,
            defect_constant: 5e4,
            energy_increase_tolerance: 1e-8,
            mass_tolerance: 1e-12,
            slope_min: 0.4,
            stability_tolerance: 0.2,
            constant_ratio_max: 2.0,
        }
    }
}

fn strictly(xs: &[f64], decreasing: bool) -> bool {
    xs.windows(2).all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] })
}

impl ExperimentBlock {
    fn violations(&self, horizon: f64, init: (usize, usize)) -> Vec<String> {
        let mut v = Vec::new();
        let e = "experiment";
        if self.n_paths == 0 {
            v.push(format!("{e}.n_paths must be >= 1 (got 0)"));
        }
        if self.dt_levels.is_empty() || !self.dt_levels.iter().all(|d| d.is_finite() && *d > 0.0) {
            v.push(format!("{e}.dt_levels must be nonempty and > 0 (got {:?})", self.dt_levels));
        } else if !strictly(&self.dt_levels, true) {
            v.push(format!("{e}.dt_levels must be strictly decreasing (got {:?})", self.dt_levels));
        } else {
            let finest = *self.dt_levels.last().unwrap();
            let active = self.kind == ExperimentKind::LadderDt;
            for &dt in self.dt_levels.iter().filter(|_| active) {
                if !whole_multiple(dt, finest) {
                    v.push(format!("{e}.dt_levels: {dt} is not a whole multiple of the finest level {finest}"));
                }
                if !whole_multiple(horizon, dt) {
                    v.push(format!("{e}.dt_levels: {dt} does not divide the horizon dt * n_steps = {horizon}"));
                }
            }
        }
        if self.n_levels.is_empty() || self.n_levels.contains(&0) {
            v.push(format!("{e}.n_levels must be nonempty and >= 1 (got {:?})", self.n_levels));
        } else {
            let ns: Vec<f64> = self.n_levels.iter().map(|&n| n as f64).collect();
            if !strictly(&ns, false) {
                v.push(format!("{e}.n_levels must be strictly increasing (got {:?})", self.n_levels));
            }
            let coarsest = self.n_levels[0];
            let active = matches!(self.kind, ExperimentKind::LadderN | ExperimentKind::CertifyMoments);
            if active && (init.0 >= coarsest || init.1 >= coarsest) {
                v.push(format!(
                    "{e}.n_levels: initial data with kx = {}, ky = {} are not bandlimited at n = {coarsest}",
                    init.0, init.1
                ));
            }
        }
        for (name, levels) in [("delta_levels", &self.delta_levels), ("yosida_deltas", &self.yosida_deltas)] {
            if levels.is_empty() || !levels.iter().all(|d| *d > 0.0 && *d < 1.0) {
                v.push(format!("{e}.{name} must be nonempty and lie in (0, 1) (got {levels:?})"));
            } else if !strictly(levels, true) {
                v.push(format!("{e}.{name} must be strictly decreasing (got {levels:?})"));
            }
        }
        if self.moment_orders.is_empty() || self.moment_orders.contains(&0) {
            v.push(format!("{e}.moment_orders must be nonempty and >= 1 (got {:?})", self.moment_orders));
        }
        if !(self.yosida_range > 0.0 && self.yosida_step > 0.0 && self.yosida_step <= self.yosida_range) {
            v.push(format!(
                "{e}.yosida_range and yosida_step must satisfy 0 < step <= range (got {}, {})",
                self.yosida_range, self.yosida_step
            ));
        }
        if self.korn_samples == 0 {
            v.push(format!("{e}.korn_samples must be >= 1 (got 0)"));
        }
        for (name, x) in [
            ("defect_constant", self.defect_constant),
            ("energy_increase_tolerance", self.energy_increase_tolerance),
            ("mass_tolerance", self.mass_tolerance),
            ("stability_tolerance", self.stability_tolerance),
        ] {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{e}.{name} must be > 0 (got {x})"));
            }
        }
        if !self.slope_min.is_finite() {
            v.push(format!("{e}.slope_min must be finite (got {})", self.slope_min));
        }
        if !(self.constant_ratio_max >= 1.0) {
            v.push(format!("{e}.constant_ratio_max must be >= 1 (got {})", self.constant_ratio_max));
        }
        v
    }
}

pub(crate) fn whole_multiple(x: f64, unit: f64) -> bool {
    let k = (x / unit).round();
    k >= 1.0 && (k * unit - x).abs() <= 1e-9 * x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    /// keep every k-th ledger row (the last row is always kept)
    pub decimation: usize,
    pub formats: Vec<Format>,
    pub plot_data: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: "chb-out".into(),
            decimation: 1,
            formats: vec![Format::Tsv, Format::Json],
            plot_data: true,
        }
    }
}

impl RunConfig {
    /// All violated constraints, prefixed by their block.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut block = |name: &str, items: Vec<String>| {
            v.extend(items.into_iter().map(|m| {
                if m.starts_with(name) {
                    m
                } else {
                    format!("{name}.{m}")
                }
            }))
        };
        let geom = self.geometry.resolved();
        block("geometry", self.geometry.violations());
        block("params", self.params.violations());
        block("potentials", self.potentials.violations());
        block("noise", self.noise.violations());
        block("scheme", self.scheme.violations());
        if self.scheme.n_steps == 0 {
            block("scheme", vec!["n_steps must be >= 1 (got 0)".into()]);
        }
        block("initial", self.initial.violations(geom.n_x_modes, geom.n_y_modes));
        let horizon = self.scheme.dt * self.scheme.n_steps as f64;
        block("experiment", self.experiment.violations(horizon, self.initial.bandwidth()));
        if self.output.decimation == 0 {
            block("output", vec!["decimation must be >= 1 (got 0)".into()]);
        }
        if self.output.directory.is_empty() {
            block("output", vec!["directory must not be empty".into()]);
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization; the output directory is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.directory.clear();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.scheme.dt * self.scheme.n_steps as f64
    }

    pub fn basis(&self) -> chb_core::Result<SpectralBasis> {
        SpectralBasis::new(&self.geometry)
    }

    pub fn system(&self) -> chb_core::Result<GalerkinSystem> {
        GalerkinSystem::new(
            self.basis()?,
            self.params.clone(),
            self.potentials.bulk(),
            self.potentials.surface(),
            self.noise.clone(),
        )
    }

    pub fn with_modes(&self, n: usize) -> Self {
        let mut c = self.clone();
        let g = &self.geometry;
        let scale = |q: usize, m: usize| if q == 0 { 0 } else { (q * n).div_ceil(m) };
        c.geometry = ChannelGeometry {
            n_x_modes: n,
            n_y_modes: n,
            n_quad_x: scale(g.n_quad_x, g.n_x_modes),
            n_quad_y: scale(g.n_quad_y, g.n_y_modes),
            ..g.clone()
        };
        c
    }
}

/// Parses and validates; every violation is reported.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
