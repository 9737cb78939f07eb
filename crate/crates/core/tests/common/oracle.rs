//! Brute-force reference implementation: closed-form basis functions evaluated
//! pointwise, Gauss-Legendre in `y`, 4x oversampled trapezoid in `x`, and an
//! independent bisection resolvent. Shares no code with the library transforms.

#![allow(dead_code)]

use std::f64::consts::PI;

use chb_core::galerkin::PhysicalParams;
use chb_core::geometry::ChannelGeometry;
use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on `[lo, hi]`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * z;
        weights[i] = (hi - lo) / ((1.0 - z * z) * dp * dp);
    }
    (nodes, weights)
}

/// Cubic double well with shift `c`: the shifted derivative is
/// `alpha s^3 + (c - alpha beta^2) s`.
#[derive(Clone, Copy, Debug)]
pub struct OraclePotential {
    pub alpha: f64,
    pub beta: f64,
    pub shift: f64,
    pub delta: f64,
}

impl OraclePotential {
    pub fn new(alpha: f64, beta: f64, delta: f64) -> Self {
        Self {
            alpha,
            beta,
            shift: alpha * beta * beta,
            delta,
        }
    }

    fn shifted_derivative(&self, s: f64) -> f64 {
        self.alpha * s * s * s + (self.shift - self.alpha * self.beta * self.beta) * s
    }

    fn shifted_value(&self, s: f64) -> f64 {
        let q = s * s - self.beta * self.beta;
        0.25 * self.alpha * q * q + 0.5 * self.shift * s * s
    }

    /// Root of `r + delta Ft'(r) = s` by plain bisection.
    pub fn resolvent(&self, s: f64) -> f64 {
        let g = |r: f64| r + self.delta * self.shifted_derivative(r) - s;
        let (mut lo, mut hi) = (-s.abs() - 1.0, s.abs() + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        (s - self.resolvent(s)) / self.delta - self.shift * s
    }

    pub fn value(&self, s: f64) -> f64 {
        let j = self.resolvent(s);
        (s - j).powi(2) / (2.0 * self.delta) + self.shifted_value(j) - 0.5 * self.shift * s * s
    }
}

/// Periodic factor number `j` in the ordering `1, cos kx, sin kx, ...`:
/// `(value, d/dx, d2/dx2)`.
pub fn x_factor(j: usize, x: f64, l: f64) -> (f64, f64, f64) {
    if j == 0 {
        return (1.0 / l.sqrt(), 0.0, 0.0);
    }
    let k = ((j + 1) / 2) as f64 * 2.0 * PI / l;
    let a = (2.0 / l).sqrt();
    let (s, c) = (k * x).sin_cos();
    if j % 2 == 1 {
        (a * c, -a * k * s, -a * k * k * c)
    } else {
        (a * s, a * k * c, -a * k * k * s)
    }
}

pub fn x_wavenumber(j: usize, l: f64) -> f64 {
    ((j + 1) / 2) as f64 * 2.0 * PI / l
}

/// Neumann factor `C_m`: `(value, d/dy)`.
pub fn cos_factor(m: usize, y: f64, h: f64) -> (f64, f64) {
    if m == 0 {
        return (1.0 / h.sqrt(), 0.0);
    }
    let w = m as f64 * PI / h;
    let a = (2.0 / h).sqrt();
    (a * (w * y).cos(), -a * w * (w * y).sin())
}

/// Dirichlet factor `S_m`, `m >= 1`: `(value, d/dy, d2/dy2)`.
pub fn sin_factor(m: usize, y: f64, h: f64) -> (f64, f64, f64) {
    let w = m as f64 * PI / h;
    let a = (2.0 / h).sqrt();
    let (s, c) = (w * y).sin_cos();
    (a * s, a * w * c, -a * w * w * s)
}

/// Velocity mode sampled at a point.
#[derive(Clone, Copy, Debug, Default)]
pub struct VelocityPoint {
    pub ux: f64,
    pub uy: f64,
    pub dx_ux: f64,
    pub dy_ux: f64,
    pub dx_uy: f64,
    pub dy_uy: f64,
}

pub struct Oracle {
    pub l: f64,
    pub h: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub xq: Vec<f64>,
    pub wx: f64,
    pub yq: Vec<f64>,
    pub wy: Vec<f64>,
}

impl Oracle {
    /// Oversamples the geometry's own quadrature by four in each direction.
    pub fn new(geom: &ChannelGeometry) -> Self {
        let g = geom.resolved();
        let nqx = 4 * g.n_quad_x;
        let nqy = 4 * g.n_quad_y;
        let l = g.period_length;
        let h = g.channel_height;
        let (yq, wy) = gauss_legendre(nqy, 0.0, h);
        Self {
            l,
            h,
            n_x: g.n_x_modes,
            n_y: g.n_y_modes,
            xq: (0..nqx).map(|q| q as f64 * l / nqx as f64).collect(),
            wx: l / nqx as f64,
            yq,
            wy,
        }
    }

    pub fn nxf(&self) -> usize {
        2 * self.n_x - 1
    }

    pub fn n_bulk(&self) -> usize {
        self.nxf() * self.n_y
    }

    pub fn n_boundary(&self) -> usize {
        2 * self.nxf()
    }

    pub fn n_velocity(&self) -> usize {
        1 + self.nxf() * self.n_y
    }

    /// Bulk mode `i = j n_y + m`: `(value, d/dx, d/dy)`.
    pub fn bulk_mode(&self, i: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let (j, m) = (i / self.n_y, i % self.n_y);
        let (xv, xd, _) = x_factor(j, x, self.l);
        let (cv, cd) = cos_factor(m, y, self.h);
        (xv * cv, xd * cv, xv * cd)
    }

    /// Boundary mode `i = circle nxf + j` on `circle` (0 bottom, 1 top): `(value, d/dx)`.
    pub fn boundary_mode(&self, i: usize, circle: usize, x: f64) -> (f64, f64) {
        if i / self.nxf() != circle {
            return (0.0, 0.0);
        }
        let (v, d, _) = x_factor(i % self.nxf(), x, self.l);
        (v, d)
    }

    pub fn velocity_mode(&self, i: usize, x: f64, y: f64) -> VelocityPoint {
        if i == 0 {
            return VelocityPoint {
                ux: 1.0 / (self.l * self.h).sqrt(),
                ..Default::default()
            };
        }
        let (j, m) = ((i - 1) / self.n_y, (i - 1) % self.n_y + 1);
        let k = x_wavenumber(j, self.l);
        let w = m as f64 * PI / self.h;
        let n = 1.0 / (k * k + w * w).sqrt();
        let (xv, xd, xdd) = x_factor(j, x, self.l);
        let (sv, sd, sdd) = sin_factor(m, y, self.h);
        // u = (psi_y, -psi_x), psi = n X S
        VelocityPoint {
            ux: n * xv * sd,
            uy: -n * xd * sv,
            dx_ux: n * xd * sd,
            dy_ux: n * xv * sdd,
            dx_uy: -n * xdd * sv,
            dy_uy: -n * xd * sd,
        }
    }

    pub fn bulk_field(&self, a: &DVector<f64>, x: f64, y: f64) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for i in 0..a.len() {
            let (v, dx, dy) = self.bulk_mode(i, x, y);
            out.0 += a[i] * v;
            out.1 += a[i] * dx;
            out.2 += a[i] * dy;
        }
        out
    }

    pub fn boundary_field(&self, b: &DVector<f64>, circle: usize, x: f64) -> (f64, f64) {
        let mut out = (0.0, 0.0);
        for i in 0..b.len() {
            let (v, d) = self.boundary_mode(i, circle, x);
            out.0 += b[i] * v;
            out.1 += b[i] * d;
        }
        out
    }

    pub fn velocity_field(&self, e: &DVector<f64>, x: f64, y: f64) -> VelocityPoint {
        let mut out = VelocityPoint::default();
        for i in 0..e.len() {
            let p = self.velocity_mode(i, x, y);
            out.ux += e[i] * p.ux;
            out.uy += e[i] * p.uy;
            out.dx_ux += e[i] * p.dx_ux;
            out.dy_ux += e[i] * p.dy_ux;
            out.dx_uy += e[i] * p.dx_uy;
            out.dy_uy += e[i] * p.dy_uy;
        }
        out
    }

    /// Visits every bulk quadrature node with its weight.
    pub fn for_bulk(&self, mut f: impl FnMut(f64, f64, f64)) {
        for (r, &y) in self.yq.iter().enumerate() {
            for &x in &self.xq {
                f(x, y, self.wy[r] * self.wx);
            }
        }
    }

    /// Visits every boundary node as `(circle, y_wall, x, weight)`.
    pub fn for_boundary(&self, mut f: impl FnMut(usize, f64, f64, f64)) {
        for (circle, y) in [(0usize, 0.0), (1usize, self.h)] {
            for &x in &self.xq {
                f(circle, y, x, self.wx);
            }
        }
    }

    pub fn bulk_gram(&self) -> DMatrix<f64> {
        let n = self.n_bulk();
        let mut g = DMatrix::zeros(n, n);
        self.for_bulk(|x, y, w| {
            let v: Vec<f64> = (0..n).map(|i| self.bulk_mode(i, x, y).0).collect();
            for i in 0..n {
                for k in 0..n {
                    g[(i, k)] += w * v[i] * v[k];
                }
            }
        });
        g
    }

    pub fn velocity_gram(&self) -> DMatrix<f64> {
        let n = self.n_velocity();
        let mut g = DMatrix::zeros(n, n);
        self.for_bulk(|x, y, w| {
            let v: Vec<VelocityPoint> = (0..n).map(|i| self.velocity_mode(i, x, y)).collect();
            for i in 0..n {
                for k in 0..n {
                    g[(i, k)] += w * (v[i].ux * v[k].ux + v[i].uy * v[k].uy);
                }
            }
        });
        g
    }

    /// Free energy without the `|phi|^2 / 2` addend.
    pub fn energy(
        &self,
        p: &PhysicalParams,
        fb: &OraclePotential,
        fs: &OraclePotential,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> f64 {
        let mut e = 0.0;
        self.for_bulk(|x, y, w| {
            let (v, dx, dy) = self.bulk_field(a, x, y);
            e += w * (0.5 * p.eps * (dx * dx + dy * dy) + fb.value(v) / p.eps);
        });
        self.for_boundary(|c, y, x, w| {
            let (v, d) = self.boundary_field(b, c, x);
            let tr = self.bulk_field(a, x, y).0;
            e += w * (0.5 * p.eps_gamma * d * d + fs.value(v) / p.eps_gamma + 0.5 * p.eps / p.robin_k * (v - tr).powi(2));
        });
        e
    }

    /// Energy gradients `(c, d)` from the weak forms.
    pub fn chemical_potentials(
        &self,
        p: &PhysicalParams,
        fb: &OraclePotential,
        fs: &OraclePotential,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let nb = self.n_bulk();
        let nd = self.n_boundary();
        let penalty = p.eps / p.robin_k;
        let mut c = DVector::zeros(nb);
        let mut d = DVector::zeros(nd);
        self.for_bulk(|x, y, w| {
            let (v, dx, dy) = self.bulk_field(a, x, y);
            let f1 = fb.derivative(v) / p.eps;
            for i in 0..nb {
                let (ev, ex, ey) = self.bulk_mode(i, x, y);
                c[i] += w * (p.eps * (dx * ex + dy * ey) + f1 * ev);
            }
        });
        self.for_boundary(|circle, y, x, w| {
            let (v, dv) = self.boundary_field(b, circle, x);
            let tr = self.bulk_field(a, x, y).0;
            let jump = tr - v;
            for i in 0..nb {
                c[i] += w * penalty * jump * self.bulk_mode(i, x, y).0;
            }
            let g1 = fs.derivative(v) / p.eps_gamma;
            for i in 0..nd {
                let (gv, gd) = self.boundary_mode(i, circle, x);
                d[i] += w * (p.eps_gamma * dv * gd + g1 * gv - penalty * jump * gv);
            }
        });
        (c, d)
    }

    pub fn brinkman_matrix(&self, p: &PhysicalParams, a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n_velocity();
        let mut m = DMatrix::zeros(n, n);
        self.for_bulk(|x, y, w| {
            let phi = self.bulk_field(a, x, y).0;
            let nu = p.viscosity.eval(phi);
            let lam = p.permeability.eval(phi);
            let v: Vec<VelocityPoint> = (0..n).map(|i| self.velocity_mode(i, x, y)).collect();
            for i in 0..n {
                for k in 0..n {
                    let (s, t) = (v[i], v[k]);
                    let sxy = 0.5 * (s.dy_ux + s.dx_uy);
                    let txy = 0.5 * (t.dy_ux + t.dx_uy);
                    let strain = s.dx_ux * t.dx_ux + 2.0 * sxy * txy + s.dy_uy * t.dy_uy;
                    m[(i, k)] += w * (2.0 * nu * strain + lam * (s.ux * t.ux + s.uy * t.uy));
                }
            }
        });
        self.for_boundary(|circle, y, x, w| {
            let gam = p.friction.eval(self.boundary_field(b, circle, x).0);
            let v: Vec<f64> = (0..n).map(|i| self.velocity_mode(i, x, y).ux).collect();
            for i in 0..n {
                for k in 0..n {
                    m[(i, k)] += w * gam * v[i] * v[k];
                }
            }
        });
        m
    }

    /// Full drift `(da, db)` and the velocity coefficients.
    pub fn drift(
        &self,
        p: &PhysicalParams,
        fb: &OraclePotential,
        fs: &OraclePotential,
        a: &DVector<f64>,
        b: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (c, d) = self.chemical_potentials(p, fb, fs, a, b);
        let nv = self.n_velocity();
        let nb = self.n_bulk();
        let nd = self.n_boundary();
        let mut f = DVector::zeros(nv);
        self.for_bulk(|x, y, w| {
            let phi = self.bulk_field(a, x, y).0;
            let (_, mx, my) = self.bulk_field(&c, x, y);
            for i in 0..nv {
                let v = self.velocity_mode(i, x, y);
                f[i] -= w * phi * (mx * v.ux + my * v.uy);
            }
        });
        self.for_boundary(|circle, y, x, w| {
            let psi = self.boundary_field(b, circle, x).0;
            let tx = self.boundary_field(&d, circle, x).1;
            for i in 0..nv {
                f[i] -= w * psi * tx * self.velocity_mode(i, x, y).ux;
            }
        });
        let e = self
            .brinkman_matrix(p, a, b)
            .lu()
            .solve(&f)
            .expect("Brinkman matrix is invertible");

        let mut da = DVector::zeros(nb);
        let mut db = DVector::zeros(nd);
        self.for_bulk(|x, y, w| {
            let phi = self.bulk_field(a, x, y).0;
            let (_, mx, my) = self.bulk_field(&c, x, y);
            let u = self.velocity_field(&e, x, y);
            let mob = p.bulk_mobility.eval(phi);
            let gx = phi * u.ux - mob * mx;
            let gy = phi * u.uy - mob * my;
            for i in 0..nb {
                let (_, ex, ey) = self.bulk_mode(i, x, y);
                da[i] += w * (gx * ex + gy * ey);
            }
        });
        self.for_boundary(|circle, y, x, w| {
            let psi = self.boundary_field(b, circle, x).0;
            let tx = self.boundary_field(&d, circle, x).1;
            let uw = self.velocity_field(&e, x, y).ux;
            let g = psi * uw - p.surface_mobility.eval(psi) * tx;
            for i in 0..nd {
                db[i] += w * g * self.boundary_mode(i, circle, x).1;
            }
        });
        (da, db, e)
    }
}

/// `max |x - y| / max(max |y|, floor)`.
pub fn relative_error(x: &DVector<f64>, y: &DVector<f64>, floor: f64) -> f64 {
    (x - y).amax() / y.amax().max(floor)
}

pub fn relative_error_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, floor: f64) -> f64 {
    (x - y).amax() / y.amax().max(floor)
}
