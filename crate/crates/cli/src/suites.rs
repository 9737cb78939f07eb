//! Experiment suites. Each returns a pass/fail report plus columnar tables;
//! nothing here touches the filesystem.

use chb_core::diagnostics::{
    inequality_check, loglog_slope, mean_and_error, moment_certificate, InequalityReport, LedgerRow, MomentReport,
};
use chb_core::galerkin::GalerkinSystem;
use chb_core::geometry::korn_poincare_certificate;
use chb_core::noise::{NoiseModel, NoiseSource};
use chb_core::potentials::{yosida_suite, RegularizedPotential};
use chb_core::timestepper::{PathResult, SchemeConfig, Stepper};
use chb_core::Result;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentKind, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Num(x) => Some(x),
            Cell::Text(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One thresholded quantity; `margin > 0` means room to spare.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub limit: f64,
    pub margin: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtMost,
            limit,
            margin: limit - value,
            passed: value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: Relation::AtLeast,
            limit,
            margin: value - limit,
            passed: value >= limit,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::at_least(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: Value,
}

impl SuiteReport {
    pub fn new(suite: &str, checks: Vec<Check>, details: Value) -> Self {
        Self {
            suite: suite.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteOutput {
    pub report: SuiteReport,
    pub tables: Vec<Table>,
}

pub fn run_experiment(cfg: &RunConfig) -> Result<SuiteOutput> {
    match cfg.experiment.kind {
        ExperimentKind::SinglePath => single_path(cfg),
        ExperimentKind::MonteCarlo => monte_carlo(cfg),
        ExperimentKind::LadderDt => ladder_dt(cfg),
        ExperimentKind::LadderN => ladder_n(cfg, true),
        ExperimentKind::LadderDelta => ladder_delta(cfg),
        ExperimentKind::CertifyYosida => certify_yosida(cfg),
        ExperimentKind::CertifyKorn => certify_korn(cfg),
        ExperimentKind::CertifyEnergy => certify_energy(cfg),
        ExperimentKind::CertifyMoments => ladder_n(cfg, false),
        ExperimentKind::CertifyInequality => certify_inequality(cfg),
    }
}

fn ensemble(cfg: &RunConfig, system: &GalerkinSystem, scheme: SchemeConfig) -> Result<Vec<PathResult>> {
    let init = cfg.initial.project(system.basis())?;
    Stepper::new(system, scheme)?.simulate_ensemble(
        &init,
        &NoiseSource::new(cfg.master_seed),
        cfg.experiment.n_paths,
        cfg.experiment.execution,
    )
}

fn keep_row(i: usize, len: usize, decimation: usize) -> bool {
    i % decimation == 0 || i + 1 == len
}

pub fn ledger_table(name: &str, path: &PathResult, decimation: usize) -> Table {
    let mut t = Table::new(name, LedgerRow::COLUMNS);
    let len = path.ledger.len();
    for (i, row) in path.ledger.iter().enumerate() {
        if keep_row(i, len, decimation) {
            t.push(row.values().into_iter().map(Cell::Num).collect());
        }
    }
    t
}

/// Terms of the discrete energy identity, accumulated up to each row:
/// `energy_tot = identity_rhs + residual`.
pub fn energy_stack_table(path: &PathResult, decimation: usize) -> Table {
    let mut t = Table::new(
        "energy_stack",
        &[
            "t",
            "energy_tot",
            "cum_dissipation",
            "cum_ito",
            "cum_stochastic",
            "cum_cross",
            "identity_rhs",
            "residual",
        ],
    );
    let e0 = path.ledger[0].energy_tot;
    let (mut diss, mut ito, mut stoch, mut cross) = (0.0, 0.0, 0.0, 0.0);
    let len = path.ledger.len();
    for (i, r) in path.ledger.iter().enumerate() {
        if keep_row(i, len, decimation) {
            let rhs = e0 + ito + stoch - cross - diss;
            t.push(vec![
                r.t.into(),
                r.energy_tot.into(),
                diss.into(),
                ito.into(),
                stoch.into(),
                cross.into(),
                rhs.into(),
                r.residual.into(),
            ]);
        }
        diss += path.dt * r.dissipation();
        ito += path.dt * r.ito_total();
        stoch += r.stochastic_total();
        cross += path.dt * r.cross_mobility;
    }
    t
}

fn fold_rows(paths: &[PathResult], f: impl Fn(&LedgerRow) -> f64, init: f64, pick: fn(f64, f64) -> f64) -> f64 {
    paths.iter().flat_map(|p| p.ledger.iter()).map(f).fold(init, pick)
}

/// Pointwise controls that every ledger row must satisfy.
fn ledger_checks(paths: &[PathResult]) -> Vec<Check> {
    let stopped = paths.iter().filter(|p| p.stopped_at.is_some()).count();
    vec![
        Check::at_most("stopped_paths", stopped as f64, 0.0),
        Check::at_least("dissipation_min", fold_rows(paths, |r| r.dissipation(), f64::INFINITY, f64::min), 0.0),
        Check::at_least(
            "ito_potential_bound_min",
            fold_rows(paths, |r| r.ito_potential_bound, f64::INFINITY, f64::min),
            1.0,
        ),
        Check::at_most(
            "mu_theta_control_excess",
            fold_rows(paths, |r| r.mu_theta_norm_sq - r.mu_theta_control, f64::NEG_INFINITY, f64::max),
            0.0,
        ),
        Check::at_most(
            "mean_mu_excess",
            fold_rows(
                paths,
                |r| r.mu_mean.abs() - r.mu_mean_bound * (1.0 + 1e-12),
                f64::NEG_INFINITY,
                f64::max,
            ),
            0.0,
        ),
        Check::at_most(
            "mean_theta_excess",
            fold_rows(
                paths,
                |r| r.theta_mean_max - r.theta_mean_bound * (1.0 + 1e-12),
                f64::NEG_INFINITY,
                f64::max,
            ),
            0.0,
        ),
    ]
}

fn single_path(cfg: &RunConfig) -> Result<SuiteOutput> {
    let system = cfg.system()?;
    let init = cfg.initial.project(system.basis())?;
    let path = Stepper::new(&system, cfg.scheme.clone())?.simulate_path(&init, &NoiseSource::new(cfg.master_seed), 0)?;
    let paths = std::slice::from_ref(&path);
    let details = json!({
        "kappa": path.kappa,
        "guard_max": fold_rows(paths, |r| r.guard, 0.0, f64::max),
        "final_residual": path.final_row().residual,
        "final_energy_tot": path.final_row().energy_tot,
    });
    let dec = cfg.output.decimation;
    Ok(SuiteOutput {
        report: SuiteReport::new("single-path", ledger_checks(paths), details),
        tables: vec![ledger_table("ledger_path0", &path, dec), energy_stack_table(&path, dec)],
    })
}

/// Mean and variance of the mass change against the Ito-isometry prediction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassLaw {
    pub mean: f64,
    pub mean_se: f64,
    pub mean_z: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub prediction: f64,
    pub prediction_se: f64,
    pub variance_z: f64,
}

fn z_score(dev: f64, se: f64) -> f64 {
    if dev == 0.0 {
        0.0
    } else if se > 0.0 {
        dev.abs() / se
    } else {
        f64::INFINITY
    }
}

pub fn mass_law(paths: &[PathResult]) -> MassLaw {
    let dm: Vec<f64> = paths.iter().map(|p| p.final_row().mass - p.ledger[0].mass).collect();
    let n = dm.len() as f64;
    let (mean, mean_se) = mean_and_error(&dm);
    let sq: Vec<f64> = dm.iter().map(|x| (x - mean).powi(2)).collect();
    let (msq, msq_se) = mean_and_error(&sq);
    let bessel = n / (n - 1.0);
    let (variance, variance_se) = (msq * bessel, msq_se * bessel);
    let qv: Vec<f64> = paths.iter().map(|p| p.mass_variance_prediction).collect();
    let (prediction, prediction_se) = mean_and_error(&qv);
    MassLaw {
        mean,
        mean_se,
        mean_z: z_score(mean, mean_se),
        variance,
        variance_se,
        prediction,
        prediction_se,
        variance_z: z_score(variance - prediction, variance_se.hypot(prediction_se)),
    }
}

fn ensemble_mean_table(paths: &[PathResult], decimation: usize) -> Table {
    let mut t = Table::new(
        "ensemble_mean",
        &["t", "energy_tot_mean", "energy_tot_se", "mass_mean", "mass_se", "residual_rms", "guard_mean"],
    );
    let rows = paths.iter().map(|p| p.ledger.len()).min().unwrap_or(0);
    for i in (0..rows).filter(|&i| keep_row(i, rows, decimation)) {
        let col = |f: fn(&LedgerRow) -> f64| paths.iter().map(|p| f(&p.ledger[i])).collect::<Vec<f64>>();
        let (e, e_se) = mean_and_error(&col(|r| r.energy_tot));
        let (m, m_se) = mean_and_error(&col(|r| r.mass));
        let (r2, _) = mean_and_error(&col(|r| r.residual * r.residual));
        let (g, _) = mean_and_error(&col(|r| r.guard));
        t.push(vec![
            paths[0].ledger[i].t.into(),
            e.into(),
            e_se.into(),
            m.into(),
            m_se.into(),
            r2.sqrt().into(),
            g.into(),
        ]);
    }
    t
}

fn moments_table(name: &str, reports: &[(usize, &MomentReport)]) -> Table {
    let mut t = Table::new(name, &["n", "order", "statistic", "mean", "std_error", "normalized"]);
    for &(n, rep) in reports {
        for e in &rep.estimates {
            t.push(vec![
                n.into(),
                (rep.order as usize).into(),
                e.name.as_str().into(),
                e.mean.into(),
                e.std_error.into(),
                e.normalized.into(),
            ]);
        }
    }
    t
}

fn inequality_checks(label: &str, rep: &InequalityReport) -> Vec<Check> {
    vec![
        Check::holds(format!("{label}inequality_constant_finite"), rep.finite),
        Check::holds(format!("{label}lhs_terms_nonnegative"), rep.lhs_terms_nonnegative),
    ]
}

fn monte_carlo(cfg: &RunConfig) -> Result<SuiteOutput> {
    let system = cfg.system()?;
    let paths = ensemble(cfg, &system, cfg.scheme.clone())?;
    let mut checks = ledger_checks(&paths);
    let reports: Vec<MomentReport> = cfg.experiment.moment_orders.iter().map(|&r| moment_certificate(&paths, r)).collect();
    for rep in &reports {
        checks.push(Check::holds(format!("moments_r{}_finite", rep.order), rep.all_finite));
    }
    let law = mass_law(&paths);
    checks.push(Check::at_most("mass_mean_z", law.mean_z, 3.0));
    checks.push(Check::at_most("mass_variance_z", law.variance_z, 3.0));
    let ineq = inequality_check(&paths, cfg.params.robin_k);
    checks.extend(inequality_checks("", &ineq));
    let residual: Vec<f64> = paths.iter().map(|p| p.final_row().residual.powi(2)).collect();
    let details = json!({
        "paths": paths.len(),
        "mass_law": law,
        "moments": reports,
        "inequality_constant": ineq.fitted_c,
        "residual_rms": mean_and_error(&residual).0.sqrt(),
    });
    let dec = cfg.output.decimation;
    let tagged: Vec<(usize, &MomentReport)> = reports.iter().map(|r| (cfg.geometry.n_x_modes, r)).collect();
    Ok(SuiteOutput {
        report: SuiteReport::new("monte-carlo", checks, details),
        tables: vec![
            ensemble_mean_table(&paths, dec),
            moments_table("moments", &tagged),
            ledger_table("ledger_path0", &paths[0], dec),
        ],
    })
}

fn final_state(p: &PathResult) -> DVector<f64> {
    let s = p.snapshots.last().expect("final snapshot");
    DVector::from_iterator(s.a.len() + s.b.len(), s.a.iter().chain(s.b.iter()).copied())
}

fn rms_difference(coarse: &[PathResult], fine: &[PathResult]) -> f64 {
    let ms: Vec<f64> = coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| (final_state(c) - final_state(f)).norm_squared())
        .collect();
    mean_and_error(&ms).0.sqrt()
}

/// `(slope, prefactor)` of a least-squares power law.
fn power_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let p = loglog_slope(x, y);
    let n = x.len() as f64;
    let b = x.iter().zip(y).map(|(x, y)| y.ln() - p * x.ln()).sum::<f64>() / n;
    (p, b.exp())
}

fn constant_ratio(cs: &[f64]) -> f64 {
    cs.windows(2)
        .map(|w| {
            let (lo, hi) = (w[0].min(w[1]), w[0].max(w[1]));
            if hi == 0.0 {
                1.0
            } else {
                hi / lo
            }
        })
        .fold(1.0, f64::max)
}

fn ladder_dt(cfg: &RunConfig) -> Result<SuiteOutput> {
    let system = cfg.system()?;
    let levels = &cfg.experiment.dt_levels;
    let finest = *levels.last().expect("validated");
    let horizon = cfg.horizon();
    let mut runs = Vec::new();
    for &dt in levels {
        // every level consumes the same fine Brownian path
        let mut scheme = cfg.scheme.clone();
        scheme.dt = dt;
        scheme.n_steps = (horizon / dt).round() as usize;
        scheme.brownian_refine = cfg.scheme.brownian_refine * (dt / finest).round() as u64;
        runs.push(ensemble(cfg, &system, scheme)?);
    }
    let rms: Vec<f64> = runs
        .iter()
        .map(|paths| {
            let sq: Vec<f64> = paths.iter().map(|p| p.final_row().residual.powi(2)).collect();
            mean_and_error(&sq).0.sqrt()
        })
        .collect();
    let constants: Vec<f64> = runs
        .iter()
        .map(|paths| inequality_check(paths, cfg.params.robin_k).fitted_c)
        .collect();
    let strong: Vec<f64> = runs.windows(2).map(|w| rms_difference(&w[0], &w[1])).collect();
    let (slope, prefactor) = power_fit(levels, &rms);
    let strong_slope = if strong.len() >= 2 {
        loglog_slope(&levels[..strong.len()], &strong)
    } else {
        f64::NAN
    };

    let mut t = Table::new(
        "ladder_dt",
        &["dt", "residual_rms", "residual_fit", "strong_error", "inequality_constant"],
    );
    for (i, &dt) in levels.iter().enumerate() {
        t.push(vec![
            dt.into(),
            rms[i].into(),
            (prefactor * dt.powf(slope)).into(),
            strong.get(i).copied().unwrap_or(f64::NAN).into(),
            constants[i].into(),
        ]);
    }
    let monotone = rms.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let mut checks = vec![
        Check::at_most("residual_ratio_max", monotone, 1.0),
        Check::at_least("residual_slope", slope, cfg.experiment.slope_min),
        Check::at_most("inequality_constant_ratio", constant_ratio(&constants), cfg.experiment.constant_ratio_max),
    ];
    for (i, paths) in runs.iter().enumerate() {
        let ineq = inequality_check(paths, cfg.params.robin_k);
        checks.extend(inequality_checks(&format!("level{i}_"), &ineq));
    }
    let details = json!({
        "horizon": horizon,
        "residual_rms": rms,
        "residual_slope": slope,
        "residual_prefactor": prefactor,
        "strong_error": strong,
        "strong_error_slope": strong_slope,
        "inequality_constants": constants,
    });
    Ok(SuiteOutput {
        report: SuiteReport::new("ladder:dt", checks, details),
        tables: vec![t],
    })
}

/// Relative change of every moment statistic between the two finest levels.
fn moment_stability(coarse: &[MomentReport], fine: &[MomentReport]) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (c, f) in coarse.iter().zip(fine) {
        for (ec, ef) in c.estimates.iter().zip(&f.estimates) {
            let scale = ef.mean.abs().max(ec.mean.abs());
            let rel = if scale == 0.0 { 0.0 } else { (ef.mean - ec.mean).abs() / scale };
            out.push((format!("r{}_{}", c.order, ec.name), rel));
        }
    }
    out
}

fn ladder_n(cfg: &RunConfig, with_constants: bool) -> Result<SuiteOutput> {
    let levels = &cfg.experiment.n_levels;
    let mut per_level: Vec<Vec<MomentReport>> = Vec::new();
    let mut constants = Vec::new();
    let mut checks = Vec::new();
    for &n in levels {
        let c = cfg.with_modes(n);
        let system = c.system()?;
        let paths = ensemble(&c, &system, c.scheme.clone())?;
        let reps: Vec<MomentReport> = cfg.experiment.moment_orders.iter().map(|&r| moment_certificate(&paths, r)).collect();
        for rep in &reps {
            checks.push(Check::holds(format!("n{n}_moments_r{}_finite", rep.order), rep.all_finite));
        }
        if with_constants {
            let ineq = inequality_check(&paths, cfg.params.robin_k);
            checks.extend(inequality_checks(&format!("n{n}_"), &ineq));
            constants.push(ineq.fitted_c);
        }
        per_level.push(reps);
    }
    let mut stability = Vec::new();
    if per_level.len() >= 2 {
        let k = per_level.len();
        stability = moment_stability(&per_level[k - 2], &per_level[k - 1]);
        for (name, rel) in &stability {
            checks.push(Check::at_most(format!("stability_{name}"), *rel, cfg.experiment.stability_tolerance));
        }
    }
    if with_constants {
        checks.push(Check::at_most(
            "inequality_constant_ratio",
            constant_ratio(&constants),
            cfg.experiment.constant_ratio_max,
        ));
    }
    let tagged: Vec<(usize, &MomentReport)> = levels
        .iter()
        .zip(&per_level)
        .flat_map(|(&n, reps)| reps.iter().map(move |r| (n, r)))
        .collect();
    let (suite, table) = if with_constants {
        ("ladder:n", "ladder_n")
    } else {
        ("certify:moments", "moments")
    };
    let details = json!({
        "levels": levels,
        "moments": per_level,
        "stability": stability.iter().map(|(n, r)| json!({"statistic": n, "relative_change": r})).collect::<Vec<_>>(),
        "inequality_constants": constants,
    });
    Ok(SuiteOutput {
        report: SuiteReport::new(suite, checks, details),
        tables: vec![moments_table(table, &tagged)],
    })
}

fn ladder_delta(cfg: &RunConfig) -> Result<SuiteOutput> {
    let levels = &cfg.experiment.delta_levels;
    let mut runs = Vec::new();
    for &delta in levels {
        let mut c = cfg.clone();
        c.potentials.delta = delta;
        let system = c.system()?;
        runs.push(ensemble(&c, &system, c.scheme.clone())?);
    }
    let cauchy: Vec<f64> = runs.windows(2).map(|w| rms_difference(&w[0], &w[1])).collect();
    let fit = if cauchy.len() >= 2 {
        power_fit(&levels[..cauchy.len()], &cauchy)
    } else {
        (f64::NAN, f64::NAN)
    };
    let mut t = Table::new(
        "ladder_delta",
        &["delta", "energy_tot_mean", "lyapunov_mean", "cauchy_difference", "cauchy_fit"],
    );
    let mut checks = Vec::new();
    for (i, &delta) in levels.iter().enumerate() {
        let e: Vec<f64> = runs[i].iter().map(|p| p.final_row().energy_tot).collect();
        let l: Vec<f64> = runs[i].iter().map(|p| p.final_row().lyapunov).collect();
        let (em, lm) = (mean_and_error(&e).0, mean_and_error(&l).0);
        let d = cauchy.get(i).copied().unwrap_or(f64::NAN);
        checks.push(Check::holds(format!("delta{i}_finite"), em.is_finite() && lm.is_finite()));
        t.push(vec![
            delta.into(),
            em.into(),
            lm.into(),
            d.into(),
            (fit.1 * delta.powf(fit.0)).into(),
        ]);
    }
    let details = json!({"cauchy_differences": cauchy, "cauchy_slope": fit.0});
    Ok(SuiteOutput {
        report: SuiteReport::new("ladder:delta", checks, details),
        tables: vec![t],
    })
}

fn certify_yosida(cfg: &RunConfig) -> Result<SuiteOutput> {
    let e = &cfg.experiment;
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for (label, base) in [("bulk", cfg.potentials.bulk_base()), ("surface", cfg.potentials.surface_base())] {
        let rep = yosida_suite(base, &e.yosida_deltas, e.yosida_range, e.yosida_step)?;
        for lv in &rep.levels {
            let tag = format!("{label}_delta{}", lv.delta);
            checks.push(Check::at_most(format!("{tag}_p1_identity"), lv.p1_identity_max, 1e-9));
            checks.push(Check::at_most(format!("{tag}_p3_sandwich_violations"), lv.p3_sandwich_violations as f64, 0.0));
            checks.push(Check::at_most(
                format!("{tag}_p4_lipschitz"),
                lv.p4_lipschitz_empirical,
                lv.p4_lipschitz_bound + 1e-9,
            ));
            checks.push(Check::at_most(
                format!("{tag}_p6_exact"),
                lv.p6_value_at_zero_error.max(lv.p6_derivative_at_zero),
                0.0,
            ));
        }
        checks.push(Check::at_most(format!("{label}_p2_violations"), rep.p2_violations as f64, 0.0));
        checks.push(Check::at_most(format!("{label}_p5_violations"), rep.p5_violations as f64, 0.0));
        checks.push(Check::at_most(
            format!("{label}_p5_signed_violations"),
            rep.p5_signed_violations as f64,
            0.0,
        ));
        checks.push(Check::at_most(
            format!("{label}_p5_operator_violations"),
            rep.p5_operator_violations as f64,
            0.0,
        ));

        let mut t = Table::new(&format!("yosida_levels_{label}"), &[
            "delta",
            "p1_identity_max",
            "p3_sandwich_violations",
            "p4_lipschitz_empirical",
            "p4_lipschitz_bound",
            "p6_value_at_zero_error",
            "p6_derivative_at_zero",
            "negative_values",
            "min_value",
        ]);
        for lv in &rep.levels {
            t.push(vec![
                lv.delta.into(),
                lv.p1_identity_max.into(),
                lv.p3_sandwich_violations.into(),
                lv.p4_lipschitz_empirical.into(),
                lv.p4_lipschitz_bound.into(),
                lv.p6_value_at_zero_error.into(),
                lv.p6_derivative_at_zero.into(),
                lv.negative_values.into(),
                lv.min_value.into(),
            ]);
        }
        tables.push(t);
        tables.push(yosida_profiles(label, base, &e.yosida_deltas, e.yosida_range, e.yosida_step)?);
        reports.push(json!({"potential": label, "report": rep}));
    }
    Ok(SuiteOutput {
        report: SuiteReport::new("certify:yosida", checks, json!(reports)),
        tables,
    })
}

fn yosida_profiles(
    label: &str,
    base: chb_core::potentials::SmoothPotential,
    deltas: &[f64],
    range: f64,
    step: f64,
) -> Result<Table> {
    let mut cols = vec!["s".to_string(), "F".into(), "dF".into()];
    for d in deltas {
        cols.push(format!("F_delta{d}"));
        cols.push(format!("dF_delta{d}"));
    }
    let refs: Vec<&str> = cols.iter().map(|s| s.as_str()).collect();
    let mut t = Table::new(&format!("yosida_profiles_{label}"), &refs);
    let pots: Vec<RegularizedPotential> = deltas
        .iter()
        .map(|&delta| RegularizedPotential {
            base,
            delta,
            resolvent_tolerance: 1e-12,
        })
        .collect();
    for s in chb_core::potentials::sample_grid(range, step) {
        let mut row: Vec<Cell> = vec![s.into(), base.value(s).into(), base.first_derivative(s).into()];
        for p in &pots {
            let y = p.evaluate(s)?;
            row.push(y.value.into());
            row.push(y.derivative.into());
        }
        t.push(row);
    }
    Ok(t)
}

fn certify_korn(cfg: &RunConfig) -> Result<SuiteOutput> {
    let system = cfg.system()?;
    let basis = system.basis();
    let samples = cfg.experiment.korn_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let mut min_eig = f64::INFINITY;
    for _ in 0..samples {
        let a = DVector::from_fn(basis.n_bulk(), |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(basis.n_boundary(), |_, _| rng.random_range(-1.0..1.0));
        let m = system.brinkman_assemble(&a, &b)?;
        min_eig = min_eig.min(m.symmetric_eigen().eigenvalues.min());
    }
    let cert = korn_poincare_certificate(basis, samples, cfg.master_seed)?;
    let again = korn_poincare_certificate(basis, samples, cfg.master_seed)?;
    let per_circle = basis.geometry().period_length / (2.0 * std::f64::consts::PI);
    let checks = vec![
        Check::at_least("brinkman_min_eigenvalue", min_eig, f64::MIN_POSITIVE),
        Check::holds("korn_ratio_finite", cert.korn_ratio_max.is_finite()),
        Check::at_most("poincare_ratio", cert.poincare_ratio_max, per_circle * (1.0 + 1e-10)),
        Check::holds("reproducible", cert == again),
    ];
    let mut t = Table::new("korn", &["quantity", "value"]);
    t.push(vec!["brinkman_min_eigenvalue".into(), min_eig.into()]);
    t.push(vec!["korn_ratio_max".into(), cert.korn_ratio_max.into()]);
    t.push(vec!["poincare_ratio_max".into(), cert.poincare_ratio_max.into()]);
    t.push(vec!["poincare_global_mean_ratio_max".into(), cert.poincare_global_mean_ratio_max.into()]);
    Ok(SuiteOutput {
        report: SuiteReport::new("certify:korn", checks, json!({"certificate": cert, "brinkman_min_eigenvalue": min_eig})),
        tables: vec![t],
    })
}

/// Noise switched off regardless of the noise block.
fn certify_energy(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut c = cfg.clone();
    c.noise = NoiseModel::silent();
    let system = c.system()?;
    let init = c.initial.project(system.basis())?;
    let path = Stepper::new(&system, c.scheme.clone())?.simulate_path(&init, &NoiseSource::new(c.master_seed), 0)?;
    let dt = path.dt;
    let mut t = Table::new("energy_defect", &["t", "energy", "dissipation", "defect", "mass"]);
    let (mut defect_max, mut increase_max, mut mass_drift) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let m0 = path.ledger[0].mass;
    for w in path.ledger.windows(2) {
        let d = w[1].energy - w[0].energy + dt * w[0].dissipation();
        defect_max = defect_max.max(d.abs());
        increase_max = increase_max.max(w[1].energy - w[0].energy);
        mass_drift = mass_drift.max((w[1].mass - m0).abs());
        t.push(vec![
            w[0].t.into(),
            w[0].energy.into(),
            w[0].dissipation().into(),
            d.into(),
            w[0].mass.into(),
        ]);
    }
    let e = &cfg.experiment;
    let mut checks = vec![
        Check::at_most("defect_over_dt2", defect_max / (dt * dt), e.defect_constant),
        Check::at_most("energy_increase_max", increase_max, e.energy_increase_tolerance),
        Check::at_most("mass_drift", mass_drift, e.mass_tolerance),
    ];
    checks.extend(ledger_checks(std::slice::from_ref(&path)));
    let details = json!({"dt": dt, "steps": path.ledger.len() - 1, "defect_max": defect_max});
    Ok(SuiteOutput {
        report: SuiteReport::new("certify:energy", checks, details),
        tables: vec![t, energy_stack_table(&path, cfg.output.decimation)],
    })
}

/// Base run, halved `dt`, doubled mode count.
fn certify_inequality(cfg: &RunConfig) -> Result<SuiteOutput> {
    let mut variants = vec![("base", cfg.clone())];
    let mut fine = cfg.clone();
    fine.scheme.dt /= 2.0;
    fine.scheme.n_steps *= 2;
    variants.push(("half_dt", fine));
    variants.push(("double_n", cfg.with_modes(2 * cfg.geometry.n_x_modes.max(cfg.geometry.n_y_modes))));

    let mut checks = Vec::new();
    let mut constants = Vec::new();
    let mut t = Table::new("inequality", &["variant", "dt", "n", "constant", "initial_lyapunov"]);
    for (label, c) in &variants {
        let system = c.system()?;
        let paths = ensemble(c, &system, c.scheme.clone())?;
        let rep = inequality_check(&paths, c.params.robin_k);
        checks.extend(inequality_checks(&format!("{label}_"), &rep));
        t.push(vec![
            (*label).into(),
            c.scheme.dt.into(),
            c.geometry.n_x_modes.into(),
            rep.fitted_c.into(),
            rep.initial_lyapunov.into(),
        ]);
        constants.push(rep.fitted_c);
    }
    let ratio = |a: f64, b: f64| constant_ratio(&[a, b]);
    checks.push(Check::at_most("dt_halving_ratio", ratio(constants[0], constants[1]), cfg.experiment.constant_ratio_max));
    checks.push(Check::at_most("n_doubling_ratio", ratio(constants[0], constants[2]), cfg.experiment.constant_ratio_max));
    let details = json!({"constants": constants});
    Ok(SuiteOutput {
        report: SuiteReport::new("certify:inequality", checks, details),
        tables: vec![t],
    })
}
