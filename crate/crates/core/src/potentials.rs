//! Double-well potentials, their convexity shift, and the Yosida regularization.
//!
//! With `Ft(s) = F(s) + (c/2) s^2` convex, the resolvent `J` solves
//! `x + delta Ft'(x) = s`, `A = (s - J)/delta`, and
//!
//! ```text
//! F'_delta(s) = A(s) - c s
//! F_delta(s)  = (delta/2) A(s)^2 + Ft(J(s)) - (c/2) s^2
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ChbError, Result};

const MAX_DOUBLINGS: u32 = 60;
const MAX_ITERATIONS: usize = 300;

/// `F(s) = (alpha/4)(s^2 - beta^2)^2` with convexity shift `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothPotential {
    pub alpha: f64,
    pub beta: f64,
    pub convexity_shift: f64,
}

impl SmoothPotential {
    /// Polynomial double well with the minimal shift `alpha beta^2`.
    pub fn polynomial(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            convexity_shift: alpha * beta * beta,
        }
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.convexity_shift = shift;
        self
    }

    pub const fn growth_exponent(&self) -> u32 {
        4
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            v.push(format!("alpha must be >= 0 (got {})", self.alpha));
        }
        if !self.beta.is_finite() {
            v.push(format!("beta must be finite (got {})", self.beta));
        }
        let minimal = self.alpha * self.beta * self.beta;
        if !(self.convexity_shift >= minimal) {
            v.push(format!(
                "convexity shift must be >= alpha beta^2 = {} (got {})",
                minimal, self.convexity_shift
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ChbError::Potential(v.join("; ")))
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let q = s * s - self.beta * self.beta;
        0.25 * self.alpha * q * q
    }

    pub fn first_derivative(&self, s: f64) -> f64 {
        self.alpha * s * (s * s - self.beta * self.beta)
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        self.alpha * (3.0 * s * s - self.beta * self.beta)
    }

    /// `Ft = F + (c/2) s^2`.
    pub fn shifted_value(&self, s: f64) -> f64 {
        self.value(s) + 0.5 * self.convexity_shift * s * s
    }

    pub fn shifted_derivative(&self, s: f64) -> f64 {
        self.first_derivative(s) + self.convexity_shift * s
    }

    pub fn shifted_second_derivative(&self, s: f64) -> f64 {
        self.second_derivative(s) + self.convexity_shift
    }

    /// Smallest `C` with `|F'|, |F''| <= C (1 + F)` on the sampled range.
    pub fn growth_constant(&self, range: f64, step: f64) -> f64 {
        sample_grid(range, step)
            .map(|s| {
                let denom = 1.0 + self.value(s);
                (self.first_derivative(s).abs() / denom).max(self.second_derivative(s).abs() / denom)
            })
            .fold(0.0, f64::max)
    }
}

/// Symmetric grid `-range, -range + step, ..., range`.
pub fn sample_grid(range: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = (2.0 * range / step).round() as i64;
    (0..=n).map(move |i| -range + i as f64 * step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedPotential {
    pub base: SmoothPotential,
    pub delta: f64,
    pub resolvent_tolerance: f64,
}

/// Values produced by one resolvent solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YosidaPoint {
    pub resolvent: f64,
    pub derivative: f64,
    pub value: f64,
    pub second_derivative: f64,
}

impl RegularizedPotential {
    pub fn new(base: SmoothPotential, delta: f64) -> Result<Self> {
        let p = Self {
            base,
            delta,
            resolvent_tolerance: 1e-12,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(ChbError::Potential(format!(
                "delta must lie in (0, 1) (got {})",
                self.delta
            )));
        }
        if !(self.resolvent_tolerance > 0.0) {
            return Err(ChbError::Potential(format!(
                "resolvent_tolerance must be > 0 (got {})",
                self.resolvent_tolerance
            )));
        }
        Ok(())
    }

    fn residual(&self, x: f64, s: f64) -> f64 {
        x + self.delta * self.base.shifted_derivative(x) - s
    }

    /// Unique root of `x + delta Ft'(x) = s`.
    pub fn resolvent(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let tol = self.resolvent_tolerance;
        let r0 = self.residual(s, s);
        if r0.abs() <= tol {
            return Ok(s);
        }
        // the residual is increasing, so the root sits on the side opposite to r(s)
        let (mut lo, mut hi) = if r0 > 0.0 { (s - 1.0, s) } else { (s, s + 1.0) };
        let mut width = 1.0;
        let mut doublings = 0;
        while self.residual(lo, s) > 0.0 {
            width *= 2.0;
            lo -= width;
            doublings += 1;
            if doublings > MAX_DOUBLINGS || !lo.is_finite() {
                return Err(ChbError::Bracket { s, doublings });
            }
        }
        while self.residual(hi, s) < 0.0 {
            width *= 2.0;
            hi += width;
            doublings += 1;
            if doublings > MAX_DOUBLINGS || !hi.is_finite() {
                return Err(ChbError::Bracket { s, doublings });
            }
        }

        let mut x = 0.5 * (lo + hi);
        for _ in 0..MAX_ITERATIONS {
            let r = self.residual(x, s);
            if r.abs() <= tol {
                return Ok(x);
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = 1.0 + self.delta * self.base.shifted_second_derivative(x);
            let newton = x - r / slope;
            x = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * x.abs().max(1.0) {
                return Ok(x);
            }
        }
        Ok(x)
    }

    /// `A(s) = (s - J(s)) / delta`.
    pub fn yosida_operator(&self, s: f64) -> Result<f64> {
        Ok((s - self.resolvent(s)?) / self.delta)
    }

    pub fn evaluate(&self, s: f64) -> Result<YosidaPoint> {
        let j = self.resolvent(s)?;
        let a = (s - j) / self.delta;
        let c = self.base.convexity_shift;
        let h = self.base.shifted_second_derivative(j);
        Ok(YosidaPoint {
            resolvent: j,
            derivative: a - c * s,
            value: 0.5 * self.delta * a * a + self.base.shifted_value(j) - 0.5 * c * s * s,
            second_derivative: h / (1.0 + self.delta * h) - c,
        })
    }

    pub fn derivative(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.derivative)
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.value)
    }

    pub fn second_derivative(&self, s: f64) -> Result<f64> {
        Ok(self.evaluate(s)?.second_derivative)
    }

    /// Moreau envelope `Ft_delta(s) = F_delta(s) + (c/2) s^2`.
    pub fn envelope(&self, s: f64) -> Result<f64> {
        Ok(self.value(s)? + 0.5 * self.base.convexity_shift * s * s)
    }

    /// `|F''_delta| <= 1/delta + c`.
    pub fn second_derivative_bound(&self) -> f64 {
        1.0 / self.delta + self.base.convexity_shift
    }

    /// Smallest `C` with `|F'_delta| <= C (1 + F_delta)` wherever `1 + F_delta > 0` on the sampled range.
    pub fn growth_constant(&self, range: f64, step: f64) -> Result<f64> {
        let mut c: f64 = 0.0;
        for s in sample_grid(range, step) {
            let p = self.evaluate(s)?;
            let denom = 1.0 + p.value;
            if denom > 0.0 {
                c = c.max(p.derivative.abs() / denom);
            }
        }
        Ok(c)
    }

    /// Pointwise `(F_delta, F'_delta, F''_delta)` on a grid.
    pub fn evaluate_grid(
        &self,
        grid: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let mut v = DMatrix::zeros(grid.nrows(), grid.ncols());
        let mut d = v.clone();
        let mut d2 = v.clone();
        for (i, &s) in grid.iter().enumerate() {
            let p = self.evaluate(s)?;
            v[i] = p.value;
            d[i] = p.derivative;
            d2[i] = p.second_derivative;
        }
        Ok((v, d, d2))
    }
}

/// Pointwise application of `f`; shape preserved.
pub fn nemytskii<F: Fn(f64) -> f64>(grid: &DMatrix<f64>, f: F) -> DMatrix<f64> {
    grid.map(f)
}

/// Fallible variant of [`nemytskii`].
pub fn try_nemytskii<F: Fn(f64) -> Result<f64>>(grid: &DMatrix<f64>, f: F) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(grid.nrows(), grid.ncols());
    for (o, &s) in out.iter_mut().zip(grid.iter()) {
        *o = f(s)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YosidaLevel {
    pub delta: f64,
    /// max |Ft_delta - ((delta/2) A^2 + Ft(J))| measured against an independent envelope minimization
    pub p1_identity_max: f64,
    pub p3_sandwich_violations: usize,
    pub p4_lipschitz_empirical: f64,
    pub p4_lipschitz_bound: f64,
    pub p6_value_at_zero_error: f64,
    pub p6_derivative_at_zero: f64,
    pub resolvent_nonexpansive_violations: usize,
    pub negative_values: usize,
    pub min_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct YosidaReport {
    pub range: f64,
    pub step: f64,
    pub levels: Vec<YosidaLevel>,
    /// grid points where |F_delta - F| fails to decrease along the ladder
    pub p2_violations: usize,
    /// grid points where |F'_delta| fails to be nondecreasing as delta decreases
    pub p5_violations: usize,
    pub p5_first_violation: Option<f64>,
    /// grid points where F'_delta fails to move monotonically toward F'
    pub p5_signed_violations: usize,
    /// grid points where |A_delta| fails to be nondecreasing as delta decreases
    pub p5_operator_violations: usize,
}

/// Golden-section minimization of `y -> (s - y)^2/(2 delta) + Ft(y)`, used as an independent envelope.
pub fn envelope_by_minimization(pot: &RegularizedPotential, s: f64) -> f64 {
    let f = |y: f64| (s - y) * (s - y) / (2.0 * pot.delta) + pot.base.shifted_value(y);
    // the minimizer lies between 0 and s because Ft' has the sign of its argument
    let (mut a, mut b) = if s >= 0.0 { (0.0, s) } else { (s, 0.0) };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + s.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    f(0.5 * (a + b))
}

/// Checks the Yosida properties on `[-range, range]` for each `delta` (listed in decreasing order).
pub fn yosida_suite(base: SmoothPotential, deltas: &[f64], range: f64, step: f64) -> Result<YosidaReport> {
    let grid: Vec<f64> = sample_grid(range, step).collect();
    let mut levels = Vec::new();
    let mut table: Vec<Vec<YosidaPoint>> = Vec::new();
    for &delta in deltas {
        let pot = RegularizedPotential::new(base, delta)?;
        let pts: Vec<YosidaPoint> = grid.iter().map(|&s| pot.evaluate(s)).collect::<Result<_>>()?;
        let mut p1: f64 = 0.0;
        let mut sandwich = 0;
        let mut lip: f64 = 0.0;
        let mut nonexp = 0;
        let mut negative = 0;
        let mut min_value = f64::INFINITY;
        for (i, (&s, p)) in grid.iter().zip(&pts).enumerate() {
            let envelope = p.value + 0.5 * base.convexity_shift * s * s;
            let independent = envelope_by_minimization(&pot, s);
            p1 = p1.max((envelope - independent).abs());
            let lower = base.shifted_value(p.resolvent);
            let upper = base.shifted_value(s);
            if envelope < lower || envelope > upper {
                sandwich += 1;
            }
            if p.value < 0.0 {
                negative += 1;
            }
            min_value = min_value.min(p.value);
            if i > 0 {
                let (t, q) = (grid[i - 1], &pts[i - 1]);
                lip = lip.max((p.derivative - q.derivative).abs() / (s - t).abs());
                if (p.resolvent - q.resolvent).abs() > (s - t).abs() + pot.resolvent_tolerance {
                    nonexp += 1;
                }
            }
        }
        // wider pairs as well, strided through the grid
        for stride in [7usize, 53, 401] {
            for i in stride..grid.len() {
                let (s, t) = (grid[i], grid[i - stride]);
                lip = lip.max((pts[i].derivative - pts[i - stride].derivative).abs() / (s - t).abs());
                if (pts[i].resolvent - pts[i - stride].resolvent).abs()
                    > (s - t).abs() + pot.resolvent_tolerance
                {
                    nonexp += 1;
                }
            }
        }
        let at_zero = pot.evaluate(0.0)?;
        levels.push(YosidaLevel {
            delta,
            p1_identity_max: p1,
            p3_sandwich_violations: sandwich,
            p4_lipschitz_empirical: lip,
            p4_lipschitz_bound: pot.second_derivative_bound(),
            p6_value_at_zero_error: (at_zero.value - base.value(0.0)).abs(),
            p6_derivative_at_zero: at_zero.derivative.abs(),
            resolvent_nonexpansive_violations: nonexp,
            negative_values: negative,
            min_value,
        });
        table.push(pts);
    }

    let mut p2 = 0;
    let mut p5 = 0;
    let mut p5_first = None;
    let mut p5_signed = 0;
    let mut p5_operator = 0;
    for (i, &s) in grid.iter().enumerate() {
        let exact = base.first_derivative(s);
        for w in table.windows(2) {
            let (coarse, fine) = (&w[0][i], &w[1][i]);
            if (fine.value - base.value(s)).abs() > (coarse.value - base.value(s)).abs() {
                p2 += 1;
            }
            if fine.derivative.abs() < coarse.derivative.abs() {
                p5 += 1;
                p5_first.get_or_insert(s);
            }
            if (exact - fine.derivative).abs() > (exact - coarse.derivative).abs()
                || (fine.derivative - coarse.derivative) * (exact - coarse.derivative) < 0.0
            {
                p5_signed += 1;
            }
            let c = base.convexity_shift;
            if (fine.derivative + c * s).abs() < (coarse.derivative + c * s).abs() {
                p5_operator += 1;
            }
        }
    }

    Ok(YosidaReport {
        range,
        step,
        levels,
        p2_violations: p2,
        p5_violations: p5,
        p5_first_violation: p5_first,
        p5_signed_violations: p5_signed,
        p5_operator_violations: p5_operator,
    })
}
