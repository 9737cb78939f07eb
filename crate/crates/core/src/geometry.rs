//! Periodic channel `T_L x (0, H)` and the trigonometric bases living on it.
//!
//! Bulk fields are expanded in Neumann eigenfunctions `X_j(x) C_m(y)`, boundary
//! fields in Fourier modes on each of the two circles `y = 0` and `y = H`, and
//! velocities in a uniform translation plus stream-function modes
//! `psi = N X_j(x) S_m(y)` with `u = (psi_y, -psi_x)`.
//!
//! Quadrature is tensor-product: uniform trapezoid in the periodic direction and
//! the closed trapezoid rule (nodes include both walls) in `y`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ChbError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

/// One periodic factor `X_j`. Wavenumber zero only carries `Cos`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct XMode {
    pub wavenumber: usize,
    pub parity: Parity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Circle {
    Bottom,
    Top,
}

impl Circle {
    pub fn row(self) -> usize {
        match self {
            Circle::Bottom => 0,
            Circle::Top => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Bulk,
    Boundary,
    Velocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelGeometry {
    #[serde(default = "default_period")]
    pub period_length: f64,
    #[serde(default = "default_height")]
    pub channel_height: f64,
    pub n_x_modes: usize,
    pub n_y_modes: usize,
    #[serde(default)]
    pub n_quad_x: usize,
    #[serde(default)]
    pub n_quad_y: usize,
}

fn default_period() -> f64 {
    2.0 * PI
}

fn default_height() -> f64 {
    1.0
}

impl Default for ChannelGeometry {
    /// 8 x 8 modes; zero quadrature sizes resolve to the dealiased minimum.
    fn default() -> Self {
        Self::new(8, 8).with_quadrature(0, 0)
    }
}

impl ChannelGeometry {
    /// Default channel `2 pi x 1` with the minimal dealiased grids.
    pub fn new(n_x_modes: usize, n_y_modes: usize) -> Self {
        Self {
            period_length: default_period(),
            channel_height: default_height(),
            n_x_modes,
            n_y_modes,
            n_quad_x: 3 * n_x_modes,
            n_quad_y: 3 * n_y_modes,
        }
    }

    pub fn with_quadrature(mut self, n_quad_x: usize, n_quad_y: usize) -> Self {
        self.n_quad_x = n_quad_x;
        self.n_quad_y = n_quad_y;
        self
    }

    /// Zero quadrature sizes mean "use the minimal dealiased size".
    pub fn resolved(&self) -> Self {
        let mut g = self.clone();
        if g.n_quad_x == 0 {
            g.n_quad_x = 3 * g.n_x_modes;
        }
        if g.n_quad_y == 0 {
            g.n_quad_y = 3 * g.n_y_modes;
        }
        g
    }

    /// All violated constraints, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let g = self.resolved();
        let mut out = Vec::new();
        if !(g.period_length.is_finite() && g.period_length > 0.0) {
            out.push(format!("period_length must be > 0 (got {})", g.period_length));
        }
        if !(g.channel_height.is_finite() && g.channel_height > 0.0) {
            out.push(format!("channel_height must be > 0 (got {})", g.channel_height));
        }
        if g.n_x_modes == 0 {
            out.push("n_x_modes must be >= 1 (got 0)".to_string());
        }
        if g.n_y_modes == 0 {
            out.push("n_y_modes must be >= 1 (got 0)".to_string());
        }
        if g.n_quad_x < 3 * g.n_x_modes {
            out.push(format!(
                "n_quad_x must be >= 3 * n_x_modes = {} (got {})",
                3 * g.n_x_modes,
                g.n_quad_x
            ));
        }
        if g.n_quad_y < 3 * g.n_y_modes.max(1) {
            out.push(format!(
                "n_quad_y must be >= 3 * n_y_modes = {} (got {})",
                3 * g.n_y_modes,
                g.n_quad_y
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ChbError::Geometry(v.join("; ")))
        }
    }

    /// |O| = L H.
    pub fn area(&self) -> f64 {
        self.period_length * self.channel_height
    }

    /// |Gamma| = 2 L (two circles).
    pub fn boundary_length(&self) -> f64 {
        2.0 * self.period_length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeDescriptor {
    pub family: Family,
    pub index: usize,
    pub wavenumber: usize,
    pub parity: Parity,
    /// y index (`m`); zero for boundary modes.
    pub m: usize,
    pub circle: Option<Circle>,
    pub eigenvalue: f64,
}

/// Grid values of the four velocity-gradient components.
#[derive(Clone, Debug)]
pub struct VelocityGradient {
    pub dx_ux: DMatrix<f64>,
    pub dy_ux: DMatrix<f64>,
    pub dx_uy: DMatrix<f64>,
    pub dy_uy: DMatrix<f64>,
}

impl VelocityGradient {
    /// Pointwise `Du : Du`.
    pub fn strain_squared(&self) -> DMatrix<f64> {
        let mut out = self.dx_ux.component_mul(&self.dx_ux);
        out += self.dy_uy.component_mul(&self.dy_uy);
        let off = (&self.dy_ux + &self.dx_uy) * 0.5;
        out += off.component_mul(&off) * 2.0;
        out
    }

    /// Pointwise `|grad u|^2`.
    pub fn gradient_squared(&self) -> DMatrix<f64> {
        self.dx_ux.component_mul(&self.dx_ux)
            + self.dy_ux.component_mul(&self.dy_ux)
            + self.dx_uy.component_mul(&self.dx_uy)
            + self.dy_uy.component_mul(&self.dy_uy)
    }

    /// Pointwise divergence.
    pub fn divergence(&self) -> DMatrix<f64> {
        &self.dx_ux + &self.dy_uy
    }
}

/// Velocity modes evaluated on the grid, one column per mode. Only needed for
/// assembly with non-constant coefficients.
#[derive(Clone, Debug)]
pub struct VelocityTables {
    pub ux: DMatrix<f64>,
    pub uy: DMatrix<f64>,
    pub exx: DMatrix<f64>,
    pub exy: DMatrix<f64>,
    pub eyy: DMatrix<f64>,
    /// Boundary `u_x`, rows ordered bottom circle then top circle.
    pub ux_boundary: DMatrix<f64>,
}

#[derive(Debug)]
pub struct SpectralBasis {
    geom: ChannelGeometry,
    x_modes: Vec<XMode>,
    kappa: Vec<f64>,
    x_nodes: DVector<f64>,
    x_weight: f64,
    x_val_t: DMatrix<f64>,
    x_der_t: DMatrix<f64>,
    x_der2_t: DMatrix<f64>,
    xw: DMatrix<f64>,
    xw_der: DMatrix<f64>,
    y_nodes: DVector<f64>,
    y_weights: DVector<f64>,
    c_val: DMatrix<f64>,
    c_der: DMatrix<f64>,
    cw_t: DMatrix<f64>,
    cdw_t: DMatrix<f64>,
    s_val: DMatrix<f64>,
    s_der: DMatrix<f64>,
    s_der2: DMatrix<f64>,
    sw_t: DMatrix<f64>,
    sdw_t: DMatrix<f64>,
    stream_norm: DMatrix<f64>,
    bulk_eigen: DVector<f64>,
    boundary_eigen: DVector<f64>,
    velocity_tables: OnceLock<VelocityTables>,
}

fn diag_scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        row *= w[r];
    }
    out
}

impl SpectralBasis {
    /// Builds every table for a validated geometry.
    pub fn new(geom: &ChannelGeometry) -> Result<Self> {
        let geom = geom.resolved();
        geom.validate()?;
        let l = geom.period_length;
        let h = geom.channel_height;
        let nx = geom.n_quad_x;
        let ny = geom.n_quad_y;
        let n_y = geom.n_y_modes;

        let mut x_modes = vec![XMode {
            wavenumber: 0,
            parity: Parity::Cos,
        }];
        for k in 1..geom.n_x_modes {
            x_modes.push(XMode {
                wavenumber: k,
                parity: Parity::Cos,
            });
            x_modes.push(XMode {
                wavenumber: k,
                parity: Parity::Sin,
            });
        }
        let nxf = x_modes.len();
        let kappa: Vec<f64> = x_modes
            .iter()
            .map(|m| 2.0 * PI * m.wavenumber as f64 / l)
            .collect();

        let x_nodes = DVector::from_fn(nx, |q, _| q as f64 * l / nx as f64);
        let x_weight = l / nx as f64;
        let mut x_val = DMatrix::zeros(nx, nxf);
        let mut x_der = DMatrix::zeros(nx, nxf);
        let mut x_der2 = DMatrix::zeros(nx, nxf);
        let amp0 = 1.0 / l.sqrt();
        let amp = (2.0 / l).sqrt();
        for (j, mode) in x_modes.iter().enumerate() {
            let kap = kappa[j];
            for q in 0..nx {
                if mode.wavenumber == 0 {
                    x_val[(q, j)] = amp0;
                    continue;
                }
                // reduce the phase exactly before scaling by 2 pi
                let phase = ((mode.wavenumber * q) % nx) as f64 / nx as f64;
                let (s, c) = (2.0 * PI * phase).sin_cos();
                match mode.parity {
                    Parity::Cos => {
                        x_val[(q, j)] = amp * c;
                        x_der[(q, j)] = -amp * kap * s;
                        x_der2[(q, j)] = -amp * kap * kap * c;
                    }
                    Parity::Sin => {
                        x_val[(q, j)] = amp * s;
                        x_der[(q, j)] = amp * kap * c;
                        x_der2[(q, j)] = -amp * kap * kap * s;
                    }
                }
            }
        }

        let y_nodes = DVector::from_fn(ny, |r, _| r as f64 * h / (ny - 1) as f64);
        let y_weights = DVector::from_fn(ny, |r, _| {
            let w = h / (ny - 1) as f64;
            if r == 0 || r == ny - 1 {
                0.5 * w
            } else {
                w
            }
        });
        let mut c_val = DMatrix::zeros(ny, n_y);
        let mut c_der = DMatrix::zeros(ny, n_y);
        let mut s_val = DMatrix::zeros(ny, n_y);
        let mut s_der = DMatrix::zeros(ny, n_y);
        let mut s_der2 = DMatrix::zeros(ny, n_y);
        let cy = (2.0 / h).sqrt();
        for r in 0..ny {
            let wall = r == 0 || r == ny - 1;
            for m in 0..n_y {
                let (s, c) = cos_sin_on_walls(m, r, ny);
                let om = m as f64 * PI / h;
                if m == 0 {
                    c_val[(r, 0)] = 1.0 / h.sqrt();
                } else {
                    c_val[(r, m)] = cy * c;
                    c_der[(r, m)] = if wall { 0.0 } else { -cy * om * s };
                }
                // sine family is shifted by one: column m holds S_{m+1}
                let ms = m + 1;
                let (s, c) = cos_sin_on_walls(ms, r, ny);
                let oms = ms as f64 * PI / h;
                let sv = if wall { 0.0 } else { cy * s };
                s_val[(r, m)] = sv;
                s_der[(r, m)] = cy * oms * c;
                s_der2[(r, m)] = -oms * oms * sv;
            }
        }

        let mut stream_norm = DMatrix::zeros(n_y, nxf);
        for j in 0..nxf {
            for m in 0..n_y {
                let om = (m + 1) as f64 * PI / h;
                stream_norm[(m, j)] = 1.0 / (kappa[j] * kappa[j] + om * om).sqrt();
            }
        }

        let mut bulk_eigen = DVector::zeros(nxf * n_y);
        for j in 0..nxf {
            for m in 0..n_y {
                let om = m as f64 * PI / h;
                bulk_eigen[j * n_y + m] = kappa[j] * kappa[j] + om * om;
            }
        }
        let mut boundary_eigen = DVector::zeros(2 * nxf);
        for c in 0..2 {
            for j in 0..nxf {
                boundary_eigen[c * nxf + j] = kappa[j] * kappa[j];
            }
        }

        let xw = &x_val * x_weight;
        let xw_der = &x_der * x_weight;
        let cw_t = diag_scale_rows(&c_val, &y_weights).transpose();
        let cdw_t = diag_scale_rows(&c_der, &y_weights).transpose();
        let sw_t = diag_scale_rows(&s_val, &y_weights).transpose();
        let sdw_t = diag_scale_rows(&s_der, &y_weights).transpose();

        Ok(Self {
            x_val_t: x_val.transpose(),
            x_der_t: x_der.transpose(),
            x_der2_t: x_der2.transpose(),
            geom,
            x_modes,
            kappa,
            x_nodes,
            x_weight,
            xw,
            xw_der,
            y_nodes,
            y_weights,
            c_val,
            c_der,
            cw_t,
            cdw_t,
            s_val,
            s_der,
            s_der2,
            sw_t,
            sdw_t,
            stream_norm,
            bulk_eigen,
            boundary_eigen,
            velocity_tables: OnceLock::new(),
        })
    }

    pub fn geometry(&self) -> &ChannelGeometry {
        &self.geom
    }

    pub fn x_modes(&self) -> &[XMode] {
        &self.x_modes
    }

    pub fn n_x_functions(&self) -> usize {
        self.x_modes.len()
    }

    pub fn n_bulk(&self) -> usize {
        self.x_modes.len() * self.geom.n_y_modes
    }

    pub fn n_boundary(&self) -> usize {
        2 * self.x_modes.len()
    }

    pub fn n_velocity(&self) -> usize {
        1 + self.x_modes.len() * self.geom.n_y_modes
    }

    pub fn len(&self, family: Family) -> usize {
        match family {
            Family::Bulk => self.n_bulk(),
            Family::Boundary => self.n_boundary(),
            Family::Velocity => self.n_velocity(),
        }
    }

    /// (rows, cols) of bulk grids: y nodes by x nodes.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.geom.n_quad_y, self.geom.n_quad_x)
    }

    pub fn boundary_grid_shape(&self) -> (usize, usize) {
        (2, self.geom.n_quad_x)
    }

    pub fn x_nodes(&self) -> &DVector<f64> {
        &self.x_nodes
    }

    pub fn y_nodes(&self) -> &DVector<f64> {
        &self.y_nodes
    }

    pub fn x_weight(&self) -> f64 {
        self.x_weight
    }

    pub fn y_weights(&self) -> &DVector<f64> {
        &self.y_weights
    }

    pub fn bulk_eigenvalues(&self) -> &DVector<f64> {
        &self.bulk_eigen
    }

    pub fn boundary_eigenvalues(&self) -> &DVector<f64> {
        &self.boundary_eigen
    }

    /// Bulk mode index for x-function `j` and y-index `m`.
    pub fn bulk_index(&self, j: usize, m: usize) -> usize {
        j * self.geom.n_y_modes + m
    }

    /// Boundary mode index for x-function `j` on `circle`.
    pub fn boundary_index(&self, circle: Circle, j: usize) -> usize {
        circle.row() * self.x_modes.len() + j
    }

    /// Velocity index of stream mode (`j`, `m`), `m >= 1`. Index 0 is the translation.
    pub fn velocity_index(&self, j: usize, m: usize) -> usize {
        1 + j * self.geom.n_y_modes + (m - 1)
    }

    pub fn mode_table(&self) -> Vec<ModeDescriptor> {
        let n_y = self.geom.n_y_modes;
        let h = self.geom.channel_height;
        let mut out = Vec::new();
        for (j, xm) in self.x_modes.iter().enumerate() {
            for m in 0..n_y {
                let idx = self.bulk_index(j, m);
                out.push(ModeDescriptor {
                    family: Family::Bulk,
                    index: idx,
                    wavenumber: xm.wavenumber,
                    parity: xm.parity,
                    m,
                    circle: None,
                    eigenvalue: self.bulk_eigen[idx],
                });
            }
        }
        for circle in [Circle::Bottom, Circle::Top] {
            for (j, xm) in self.x_modes.iter().enumerate() {
                let idx = self.boundary_index(circle, j);
                out.push(ModeDescriptor {
                    family: Family::Boundary,
                    index: idx,
                    wavenumber: xm.wavenumber,
                    parity: xm.parity,
                    m: 0,
                    circle: Some(circle),
                    eigenvalue: self.boundary_eigen[idx],
                });
            }
        }
        out.push(ModeDescriptor {
            family: Family::Velocity,
            index: 0,
            wavenumber: 0,
            parity: Parity::Cos,
            m: 0,
            circle: None,
            eigenvalue: 0.0,
        });
        for (j, xm) in self.x_modes.iter().enumerate() {
            for m in 1..=n_y {
                let om = m as f64 * PI / h;
                out.push(ModeDescriptor {
                    family: Family::Velocity,
                    index: self.velocity_index(j, m),
                    wavenumber: xm.wavenumber,
                    parity: xm.parity,
                    m,
                    circle: None,
                    eigenvalue: self.kappa[j] * self.kappa[j] + om * om,
                });
            }
        }
        out
    }

    fn check_len(&self, what: &'static str, v: &DVector<f64>, expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(ChbError::LengthMismatch {
                what,
                expected,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn check_shape(
        &self,
        what: &'static str,
        g: &DMatrix<f64>,
        expected: (usize, usize),
    ) -> Result<()> {
        if g.shape() != expected {
            return Err(ChbError::ShapeMismatch {
                what,
                expected,
                got: g.shape(),
            });
        }
        Ok(())
    }

    fn bulk_matrix(&self, a: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.geom.n_y_modes, self.x_modes.len(), a.as_slice())
    }

    fn boundary_matrix(&self, b: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, self.x_modes.len(), b.as_slice())
    }

    fn boundary_vector(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(2 * self.x_modes.len(), m.transpose().iter().copied())
    }

    fn stream_matrix(&self, e: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.geom.n_y_modes, self.x_modes.len(), &e.as_slice()[1..])
            .component_mul(&self.stream_norm)
    }

    // ---- bulk ----

    pub fn bulk_to_grid(&self, a: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len("bulk coefficients", a, self.n_bulk())?;
        Ok(&self.c_val * self.bulk_matrix(a) * &self.x_val_t)
    }

    /// `(d/dx, d/dy)` of a bulk expansion on the grid.
    pub fn bulk_gradient(&self, a: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_len("bulk coefficients", a, self.n_bulk())?;
        let am = self.bulk_matrix(a);
        Ok((
            &self.c_val * &am * &self.x_der_t,
            &self.c_der * &am * &self.x_val_t,
        ))
    }

    /// Quadrature L2 projection onto the bulk modes.
    pub fn bulk_from_grid(&self, f: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape("bulk grid", f, self.grid_shape())?;
        let m = &self.cw_t * f * &self.xw;
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    /// `Q(gx d_x v_i + gy d_y v_i)` for every bulk mode `v_i`.
    pub fn bulk_project_gradient(&self, gx: &DMatrix<f64>, gy: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape("bulk grid", gx, self.grid_shape())?;
        self.check_shape("bulk grid", gy, self.grid_shape())?;
        let m = &self.cw_t * gx * &self.xw_der + &self.cdw_t * gy * &self.xw;
        Ok(DVector::from_column_slice(m.as_slice()))
    }

    /// Tensor quadrature of a bulk grid.
    pub fn integrate(&self, f: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for r in 0..f.nrows() {
            total += self.y_weights[r] * f.row(r).sum();
        }
        total * self.x_weight
    }

    // ---- boundary ----

    pub fn boundary_to_grid(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len("boundary coefficients", b, self.n_boundary())?;
        Ok(self.boundary_matrix(b) * &self.x_val_t)
    }

    /// Tangential derivative `d/dx` on each circle.
    pub fn boundary_derivative(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len("boundary coefficients", b, self.n_boundary())?;
        Ok(self.boundary_matrix(b) * &self.x_der_t)
    }

    pub fn boundary_from_grid(&self, g: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape("boundary grid", g, self.boundary_grid_shape())?;
        Ok(self.boundary_vector(&(g * &self.xw)))
    }

    /// `Q_Gamma(g d_x Lambda_i)` for every boundary mode.
    pub fn boundary_project_derivative(&self, g: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_shape("boundary grid", g, self.boundary_grid_shape())?;
        Ok(self.boundary_vector(&(g * &self.xw_der)))
    }

    /// Quadrature over both circles.
    pub fn integrate_boundary(&self, g: &DMatrix<f64>) -> f64 {
        g.sum() * self.x_weight
    }

    pub fn integrate_circle(&self, g: &DMatrix<f64>, circle: Circle) -> f64 {
        g.row(circle.row()).sum() * self.x_weight
    }

    // ---- trace ----

    /// Restriction of a bulk grid to the two wall rows.
    pub fn trace_grid(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shape("bulk grid", f, self.grid_shape())?;
        let last = f.nrows() - 1;
        let mut out = DMatrix::zeros(2, f.ncols());
        out.row_mut(0).copy_from(&f.row(0));
        out.row_mut(1).copy_from(&f.row(last));
        Ok(out)
    }

    /// Trace of a bulk expansion, expressed in boundary coefficients.
    pub fn trace(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("bulk coefficients", a, self.n_bulk())?;
        let am = self.bulk_matrix(a);
        let last = self.c_val.nrows() - 1;
        let mut out = DMatrix::zeros(2, self.x_modes.len());
        out.row_mut(0).copy_from(&(self.c_val.row(0) * &am));
        out.row_mut(1).copy_from(&(self.c_val.row(last) * &am));
        Ok(self.boundary_vector(&out))
    }

    /// Adjoint of [`Self::trace`]: `(T^T g)_i = sum_circle g_circle,j C_m(wall)`.
    pub fn trace_adjoint(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len("boundary coefficients", g, self.n_boundary())?;
        let gm = self.boundary_matrix(g);
        let last = self.c_val.nrows() - 1;
        let bottom = self.c_val.row(0).transpose();
        let top = self.c_val.row(last).transpose();
        let am = &bottom * gm.row(0) + &top * gm.row(1);
        Ok(DVector::from_column_slice(am.as_slice()))
    }

    /// Dense trace matrix `T` (boundary x bulk).
    pub fn trace_matrix(&self) -> DMatrix<f64> {
        let nb = self.n_bulk();
        let mut t = DMatrix::zeros(self.n_boundary(), nb);
        for i in 0..nb {
            let mut e = DVector::zeros(nb);
            e[i] = 1.0;
            t.set_column(i, &self.trace(&e).expect("length matches"));
        }
        t
    }

    // ---- velocity ----

    /// `(u_x, u_y)` on the bulk grid.
    pub fn velocity_to_grid(&self, e: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_len("velocity coefficients", e, self.n_velocity())?;
        let em = self.stream_matrix(e);
        let shift = e[0] / self.geom.area().sqrt();
        let ux = (&self.s_der * &em * &self.x_val_t).add_scalar(shift);
        let uy = -(&self.s_val * &em * &self.x_der_t);
        Ok((ux, uy))
    }

    pub fn velocity_gradient(&self, e: &DVector<f64>) -> Result<VelocityGradient> {
        self.check_len("velocity coefficients", e, self.n_velocity())?;
        let em = self.stream_matrix(e);
        let dx_ux = &self.s_der * &em * &self.x_der_t;
        Ok(VelocityGradient {
            dy_uy: -&dx_ux,
            dx_ux,
            dy_ux: &self.s_der2 * &em * &self.x_val_t,
            dx_uy: -(&self.s_val * &em * &self.x_der2_t),
        })
    }

    /// Tangential velocity on the two circles (the normal part vanishes).
    pub fn velocity_boundary(&self, e: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (ux, _) = self.velocity_to_grid(e)?;
        self.trace_grid(&ux)
    }

    /// Load vector `Q(fx w_x + fy w_y) + Q_Gamma(fb w_x)` for every velocity mode.
    pub fn velocity_project(
        &self,
        fx: &DMatrix<f64>,
        fy: &DMatrix<f64>,
        fb: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        self.check_shape("bulk grid", fx, self.grid_shape())?;
        self.check_shape("bulk grid", fy, self.grid_shape())?;
        self.check_shape("boundary grid", fb, self.boundary_grid_shape())?;
        let mut m = &self.sdw_t * fx * &self.xw - &self.sw_t * fy * &self.xw_der;
        let fbw = fb * &self.xw;
        let last = self.s_der.nrows() - 1;
        for j in 0..self.x_modes.len() {
            for mi in 0..self.geom.n_y_modes {
                m[(mi, j)] +=
                    self.s_der[(0, mi)] * fbw[(0, j)] + self.s_der[(last, mi)] * fbw[(1, j)];
            }
        }
        let m = m.component_mul(&self.stream_norm);
        let mut out = DVector::zeros(self.n_velocity());
        out[0] = (self.integrate(fx) + self.integrate_boundary(fb)) / self.geom.area().sqrt();
        out.as_mut_slice()[1..].copy_from_slice(m.as_slice());
        Ok(out)
    }

    /// Per-mode grid tables, built on first use.
    pub fn velocity_tables(&self) -> &VelocityTables {
        self.velocity_tables.get_or_init(|| {
            let nv = self.n_velocity();
            let (ny, nx) = self.grid_shape();
            let ng = ny * nx;
            let mut t = VelocityTables {
                ux: DMatrix::zeros(ng, nv),
                uy: DMatrix::zeros(ng, nv),
                exx: DMatrix::zeros(ng, nv),
                exy: DMatrix::zeros(ng, nv),
                eyy: DMatrix::zeros(ng, nv),
                ux_boundary: DMatrix::zeros(2 * nx, nv),
            };
            for j in 0..nv {
                let mut e = DVector::zeros(nv);
                e[j] = 1.0;
                let (ux, uy) = self.velocity_to_grid(&e).expect("length matches");
                let g = self.velocity_gradient(&e).expect("length matches");
                let exy = (&g.dy_ux + &g.dx_uy) * 0.5;
                let ub = self.trace_grid(&ux).expect("shape matches");
                t.ux.set_column(j, &DVector::from_column_slice(ux.as_slice()));
                t.uy.set_column(j, &DVector::from_column_slice(uy.as_slice()));
                t.exx.set_column(j, &DVector::from_column_slice(g.dx_ux.as_slice()));
                t.exy.set_column(j, &DVector::from_column_slice(exy.as_slice()));
                t.eyy.set_column(j, &DVector::from_column_slice(g.dy_uy.as_slice()));
                t.ux_boundary
                    .set_column(j, &DVector::from_column_slice(ub.as_slice()));
            }
            t
        })
    }

    /// Flattened tensor quadrature weights (column-major, matching grid storage).
    pub fn flat_weights(&self) -> DVector<f64> {
        let (ny, nx) = self.grid_shape();
        DVector::from_fn(ny * nx, |i, _| self.y_weights[i % ny] * self.x_weight)
    }

    // ---- forms ----

    /// `int w grad f . grad g` over the bulk (or the boundary analogue with
    /// tangential derivatives). `weight` is a grid of the matching family.
    pub fn gradient_quadrature(
        &self,
        f: &DVector<f64>,
        g: &DVector<f64>,
        weight: &DMatrix<f64>,
        family: Family,
    ) -> Result<f64> {
        match family {
            Family::Bulk => {
                self.check_shape("weight grid", weight, self.grid_shape())?;
                let (fx, fy) = self.bulk_gradient(f)?;
                let (gx, gy) = self.bulk_gradient(g)?;
                let integrand = (fx.component_mul(&gx) + fy.component_mul(&gy)).component_mul(weight);
                Ok(self.integrate(&integrand))
            }
            Family::Boundary => {
                self.check_shape("weight grid", weight, self.boundary_grid_shape())?;
                let fx = self.boundary_derivative(f)?;
                let gx = self.boundary_derivative(g)?;
                Ok(self.integrate_boundary(&fx.component_mul(&gx).component_mul(weight)))
            }
            Family::Velocity => {
                self.check_shape("weight grid", weight, self.grid_shape())?;
                let fg = self.velocity_gradient(f)?;
                let gg = self.velocity_gradient(g)?;
                let integrand = fg.dx_ux.component_mul(&gg.dx_ux)
                    + fg.dy_ux.component_mul(&gg.dy_ux)
                    + fg.dx_uy.component_mul(&gg.dx_uy)
                    + fg.dy_uy.component_mul(&gg.dy_uy);
                Ok(self.integrate(&integrand.component_mul(weight)))
            }
        }
    }

    pub fn to_grid(&self, coeffs: &DVector<f64>, family: Family) -> Result<DMatrix<f64>> {
        match family {
            Family::Bulk => self.bulk_to_grid(coeffs),
            Family::Boundary => self.boundary_to_grid(coeffs),
            Family::Velocity => Err(ChbError::Geometry(
                "velocity fields are vector valued; use velocity_to_grid".into(),
            )),
        }
    }

    pub fn from_grid(&self, values: &DMatrix<f64>, family: Family) -> Result<DVector<f64>> {
        match family {
            Family::Bulk => self.bulk_from_grid(values),
            Family::Boundary => self.boundary_from_grid(values),
            Family::Velocity => Err(ChbError::Geometry(
                "velocity fields are vector valued; use velocity_project".into(),
            )),
        }
    }
}

/// `(sin, cos)` of `m pi r / (n - 1)` with exact values on the walls.
fn cos_sin_on_walls(m: usize, r: usize, n: usize) -> (f64, f64) {
    if r == 0 {
        return (0.0, 1.0);
    }
    if r == n - 1 {
        return (0.0, if m % 2 == 0 { 1.0 } else { -1.0 });
    }
    let phase = ((m * r) % (2 * (n - 1))) as f64 / (n - 1) as f64;
    (PI * phase).sin_cos()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KornPoincareCertificate {
    pub samples: usize,
    /// max `|grad v| / (|Dv| + |v|_Gamma)`
    pub korn_ratio_max: f64,
    /// max `|v - mean_c v|_Gamma / |d_x v|_Gamma`, means taken per circle
    pub poincare_ratio_max: f64,
    /// same with a single mean over both circles
    pub poincare_global_mean_ratio_max: f64,
    pub korn_skipped: usize,
    pub poincare_skipped: usize,
}

/// Samples random velocity and boundary fields and records the worst ratios.
pub fn korn_poincare_certificate(
    basis: &SpectralBasis,
    n_samples: usize,
    seed: u64,
) -> Result<KornPoincareCertificate> {
    if n_samples == 0 {
        return Err(ChbError::Geometry("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cert = KornPoincareCertificate {
        samples: n_samples,
        korn_ratio_max: 0.0,
        poincare_ratio_max: 0.0,
        poincare_global_mean_ratio_max: 0.0,
        korn_skipped: 0,
        poincare_skipped: 0,
    };
    let nv = basis.n_velocity();
    let nbd = basis.n_boundary();
    for _ in 0..n_samples {
        let e = DVector::from_fn(nv, |_, _| StandardNormal.sample(&mut rng));
        let (grad, strain, wall) = korn_terms(basis, &e)?;
        let denom = strain + wall;
        if denom > 0.0 {
            cert.korn_ratio_max = cert.korn_ratio_max.max(grad / denom);
        } else {
            cert.korn_skipped += 1;
        }

        let b = DVector::from_fn(nbd, |_, _| StandardNormal.sample(&mut rng));
        let (dev, dev_global, tangential) = poincare_terms(basis, &b)?;
        if tangential > 0.0 {
            cert.poincare_ratio_max = cert.poincare_ratio_max.max(dev / tangential);
            cert.poincare_global_mean_ratio_max =
                cert.poincare_global_mean_ratio_max.max(dev_global / tangential);
        } else {
            cert.poincare_skipped += 1;
        }
    }
    Ok(cert)
}

/// `(|grad v|, |Dv|, |v|_Gamma)` for a velocity expansion.
pub fn korn_terms(basis: &SpectralBasis, e: &DVector<f64>) -> Result<(f64, f64, f64)> {
    let g = basis.velocity_gradient(e)?;
    let wall = basis.velocity_boundary(e)?;
    Ok((
        basis.integrate(&g.gradient_squared()).max(0.0).sqrt(),
        basis.integrate(&g.strain_squared()).max(0.0).sqrt(),
        basis.integrate_boundary(&wall.component_mul(&wall)).max(0.0).sqrt(),
    ))
}

/// `(|v - per-circle mean|, |v - global mean|, |d_x v|)` on Gamma.
pub fn poincare_terms(basis: &SpectralBasis, b: &DVector<f64>) -> Result<(f64, f64, f64)> {
    let v = basis.boundary_to_grid(b)?;
    let dv = basis.boundary_derivative(b)?;
    let l = basis.geometry().period_length;
    let mut per_circle = v.clone();
    for c in [Circle::Bottom, Circle::Top] {
        let mean = basis.integrate_circle(&v, c) / l;
        per_circle.row_mut(c.row()).add_scalar_mut(-mean);
    }
    let global_mean = basis.integrate_boundary(&v) / basis.geometry().boundary_length();
    let global = v.add_scalar(-global_mean);
    Ok((
        basis
            .integrate_boundary(&per_circle.component_mul(&per_circle))
            .max(0.0)
            .sqrt(),
        basis.integrate_boundary(&global.component_mul(&global)).max(0.0).sqrt(),
        basis.integrate_boundary(&dv.component_mul(&dv)).max(0.0).sqrt(),
    ))
}
