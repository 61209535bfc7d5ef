//! Backward PDE pricing on a truncated box.
//!
//! Solves `dv/dt + L_t v - r v = 0` backward from the terminal payoff,
//! where `L_t` is the generator of the factor diffusion. Time stepping is
//! Crank-Nicolson with four fully implicit startup steps to damp payoff
//! kinks. In two dimensions the unidirectional operators are handled
//! implicitly one axis at a time (Douglas splitting, tridiagonal solves
//! only) while the cross-derivative term is applied explicitly within the
//! step; a step-size heuristic guards the explicit part.
//!
//! Boundary treatment: the second spatial derivative is set to zero on the
//! boundary (asymptotic linearity), with a one-sided first derivative.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_models::FactorModel;
use crate::pricing::{Asset, Gradient, Pricer};

/// Number of fully implicit startup steps.
const RANNACHER_STEPS: usize = 4;

/// Limit on `dt * max|a_12| / (h_x h_y)` for the explicit cross term.
const CROSS_STABILITY_LIMIT: f64 = 25.0;

/// Rectangular space-time grid specification.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    pub time_steps: usize,
}

impl GridSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lower.len() != dim || self.upper.len() != dim || self.nodes.len() != dim {
            return Err(Error::Config(format!("grid must be {dim}-dimensional")));
        }
        if self
            .lower
            .iter()
            .chain(self.upper.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("grid box must be bounded".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("grid box is empty or inverted".into()));
        }
        if self.nodes.iter().any(|&n| n < 5) {
            return Err(Error::Config("need at least 5 nodes per axis".into()));
        }
        if self.time_steps <= RANNACHER_STEPS {
            return Err(Error::Config(format!(
                "need more than {RANNACHER_STEPS} time steps"
            )));
        }
        Ok(())
    }
}

/// Finite-difference stencils of the generator on the spatial grid.
///
/// Per axis and node, `second` holds the pure second-order stencil
/// `(lo, diag, hi)` of `a_ii/2 d^2/dx_i^2` (zero on boundary nodes) and
/// `first` the drift stencil (one-sided on the boundary). `cross` holds the
/// mixed coefficient `a_12` per node, zero on any boundary node. The
/// `-r` zeroth-order term is split evenly across axes as `discount_split`.
#[derive(Debug, Clone)]
pub struct DiscretizedGenerator {
    pub shape: Vec<usize>,
    pub h: Vec<f64>,
    pub second: Vec<Vec<[f64; 3]>>,
    pub first: Vec<Vec<[f64; 3]>>,
    pub cross: Vec<f64>,
    pub discount_split: f64,
}

impl DiscretizedGenerator {
    fn empty(shape: &[usize], h: &[f64], rate: f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            h: h.to_vec(),
            second: vec![vec![[0.0; 3]; n]; shape.len()],
            first: vec![vec![[0.0; 3]; n]; shape.len()],
            cross: if shape.len() == 2 { vec![0.0; n] } else { Vec::new() },
            discount_split: -rate / shape.len() as f64,
        }
    }

    /// Fill the stencils from the model coefficients at time `t`.
    fn refresh(&mut self, model: &FactorModel, axes: &[Vec<f64>], t: f64) -> Result<f64> {
        let dim = self.shape.len();
        let n: usize = self.shape.iter().product();
        let mut x = vec![0.0; dim];
        let mut max_cross: f64 = 0.0;
        for idx in 0..n {
            let mut rem = idx;
            let mut on_boundary = vec![false; dim];
            for ax in 0..dim {
                let i = rem % self.shape[ax];
                rem /= self.shape[ax];
                x[ax] = axes[ax][i];
                on_boundary[ax] = i == 0 || i == self.shape[ax] - 1;
            }
            let m = model.drift(t, &x);
            let s = model.diffusion(t, &x);
            if m.iter().any(|v| !v.is_finite()) || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "model coefficients non-finite at grid point {x:?}"
                )));
            }
            let mut rem = idx;
            for ax in 0..dim {
                let i = rem % self.shape[ax];
                rem /= self.shape[ax];
                let h = self.h[ax];
                let mut a_ii = 0.0;
                for k in 0..dim {
                    a_ii += s[(ax, k)] * s[(ax, k)];
                }
                if on_boundary[ax] {
                    // Zero second derivative; one-sided first derivative.
                    self.second[ax][idx] = [0.0; 3];
                    self.first[ax][idx] = if i == 0 {
                        [0.0, -m[ax] / h, m[ax] / h]
                    } else {
                        [-m[ax] / h, m[ax] / h, 0.0]
                    };
                } else {
                    let c = 0.5 * a_ii / (h * h);
                    self.second[ax][idx] = [c, -2.0 * c, c];
                    let b = m[ax] / (2.0 * h);
                    self.first[ax][idx] = [-b, 0.0, b];
                }
            }
            if dim == 2 {
                // a_12 = a_21 exactly for sigma sigma^T.
                let a12 = s[(0, 0)] * s[(1, 0)] + s[(0, 1)] * s[(1, 1)];
                let interior = !on_boundary[0] && !on_boundary[1];
                self.cross[idx] = if interior { a12 } else { 0.0 };
                max_cross = max_cross.max(a12.abs());
            }
        }
        Ok(max_cross)
    }

    fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.shape[0]
        }
    }

    /// `out = A_axis v` (second + first + split zeroth order).
    fn apply_axis(&self, axis: usize, v: &[f64], out: &mut [f64]) {
        let stride = self.stride(axis);
        let sec = &self.second[axis];
        let fir = &self.first[axis];
        let n_axis = self.shape[axis];
        let disc = self.discount_split;
        for idx in 0..v.len() {
            let pos = (idx / stride) % n_axis;
            let s = sec[idx];
            let f = fir[idx];
            let mut acc = (s[1] + f[1] + disc) * v[idx];
            if pos > 0 {
                acc += (s[0] + f[0]) * v[idx - stride];
            }
            if pos + 1 < n_axis {
                acc += (s[2] + f[2]) * v[idx + stride];
            }
            out[idx] = acc;
        }
    }

    /// `out = A_0 v` (explicit mixed-derivative term; zero unless dim = 2).
    fn apply_cross(&self, v: &[f64], out: &mut [f64]) {
        if self.shape.len() != 2 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let nx = self.shape[0];
        let ny = self.shape[1];
        let scale = 1.0 / (4.0 * self.h[0] * self.h[1]);
        out.iter_mut().for_each(|o| *o = 0.0);
        for iy in 1..ny - 1 {
            for ix in 1..nx - 1 {
                let idx = ix + nx * iy;
                let c = self.cross[idx];
                if c != 0.0 {
                    let d = v[idx + 1 + nx] - v[idx + 1 - nx] - v[idx - 1 + nx]
                        + v[idx - 1 - nx];
                    out[idx] = c * scale * d;
                }
            }
        }
    }

    /// Solve `(I - theta_dt A_axis) out = rhs` line by line (Thomas).
    fn solve_axis(&self, axis: usize, theta_dt: f64, rhs: &[f64], out: &mut [f64]) {
        let n_axis = self.shape[axis];
        let stride = self.stride(axis);
        let n_lines = rhs.len() / n_axis;
        let sec = &self.second[axis];
        let fir = &self.first[axis];
        let disc = self.discount_split;

        let mut sub = vec![0.0; n_axis];
        let mut diag = vec![0.0; n_axis];
        let mut sup = vec![0.0; n_axis];
        let mut d = vec![0.0; n_axis];
        let mut c_prime = vec![0.0; n_axis];

        for line in 0..n_lines {
            // Base flat index of this line.
            let base = if axis == 0 {
                line * n_axis
            } else {
                // Lines along axis 1 are indexed by ix in 0..nx.
                line
            };
            for k in 0..n_axis {
                let idx = base + k * stride;
                let s = sec[idx];
                let f = fir[idx];
                sub[k] = -theta_dt * (s[0] + f[0]);
                diag[k] = 1.0 - theta_dt * (s[1] + f[1] + disc);
                sup[k] = -theta_dt * (s[2] + f[2]);
                d[k] = rhs[idx];
            }
            // Thomas sweep.
            c_prime[0] = sup[0] / diag[0];
            d[0] /= diag[0];
            for k in 1..n_axis {
                let m = diag[k] - sub[k] * c_prime[k - 1];
                c_prime[k] = sup[k] / m;
                d[k] = (d[k] - sub[k] * d[k - 1]) / m;
            }
            for k in (0..n_axis - 1).rev() {
                d[k] -= c_prime[k] * d[k + 1];
            }
            for k in 0..n_axis {
                out[base + k * stride] = d[k];
            }
        }
    }
}

/// A solved pricing surface: the full time stack of grid solutions.
///
/// Queries interpolate multilinearly in space and linearly in time;
/// gradients use fourth-order central differences of the interpolated
/// field, which requires the query point to sit at least two mesh widths
/// inside the box.
pub struct PricingSurface {
    pub asset: Asset,
    pub axes: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub times: Vec<f64>,
    values: Vec<f64>,
    pub backend: &'static str,
    pub boundary: &'static str,
    pub rate: f64,
}

impl std::fmt::Debug for PricingSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PricingSurface")
            .field("asset", &self.asset)
            .field("nodes", &self.axes.iter().map(Vec::len).collect::<Vec<_>>())
            .field("time_steps", &(self.times.len() - 1))
            .field("backend", &self.backend)
            .finish()
    }
}

impl PricingSurface {
    fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Values at time index `i` (ascending in t; last slice is the payoff).
    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn locate(&self, axis: usize, x: f64) -> Result<(usize, f64)> {
        let nodes = &self.axes[axis];
        let lo = nodes[0];
        let hi = *nodes.last().unwrap();
        if x < lo - 1e-12 || x > hi + 1e-12 {
            return Err(Error::Domain(format!(
                "x_{axis} = {x} outside grid box [{lo}, {hi}]"
            )));
        }
        let h = self.h[axis];
        let i = (((x - lo) / h).floor() as usize).min(nodes.len() - 2);
        let w = ((x - nodes[i]) / h).clamp(0.0, 1.0);
        Ok((i, w))
    }

    fn interp_space(&self, slice: &[f64], x: &[f64]) -> Result<f64> {
        match self.dim() {
            1 => {
                let (i, w) = self.locate(0, x[0])?;
                Ok((1.0 - w) * slice[i] + w * slice[i + 1])
            }
            2 => {
                let (ix, wx) = self.locate(0, x[0])?;
                let (iy, wy) = self.locate(1, x[1])?;
                let nx = self.axes[0].len();
                let v00 = slice[ix + nx * iy];
                let v10 = slice[ix + 1 + nx * iy];
                let v01 = slice[ix + nx * (iy + 1)];
                let v11 = slice[ix + 1 + nx * (iy + 1)];
                Ok((1.0 - wx) * ((1.0 - wy) * v00 + wy * v01)
                    + wx * ((1.0 - wy) * v10 + wy * v11))
            }
            d => Err(Error::Config(format!("unsupported surface dimension {d}"))),
        }
    }

    /// Interpolated value at `(t, x)`.
    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        let t_max = *self.times.last().unwrap();
        if t < -1e-12 || t > t_max + 1e-12 {
            return Err(Error::Domain(format!("t = {t} outside [0, {t_max}]")));
        }
        let dt = self.times[1] - self.times[0];
        let i = ((t / dt).floor() as usize).min(self.times.len() - 2);
        let w = ((t - self.times[i]) / dt).clamp(0.0, 1.0);
        let a = self.interp_space(self.slice(i), x)?;
        let b = self.interp_space(self.slice(i + 1), x)?;
        Ok((1.0 - w) * a + w * b)
    }

    /// Fourth-order finite-difference spatial gradient at `(t, x)`.
    pub fn gradient4(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        for ax in 0..self.dim() {
            let h = self.h[ax];
            let lo = self.axes[ax][0];
            let hi = *self.axes[ax].last().unwrap();
            if x[ax] - 2.0 * h < lo || x[ax] + 2.0 * h > hi {
                return Err(Error::Domain(format!(
                    "point too close to grid edge along axis {ax} for gradient stencil"
                )));
            }
            let mut probe = x.to_vec();
            let mut vals = [0.0; 4];
            for (slot, off) in [(-2.0, 0), (-1.0, 1), (1.0, 2), (2.0, 3)] {
                probe[ax] = x[ax] + slot * h;
                vals[off] = self.value(t, &probe)?;
            }
            g[ax] = (-vals[3] + 8.0 * vals[2] - 8.0 * vals[1] + vals[0]) / (12.0 * h);
        }
        Ok(g)
    }

    /// Export as CSV rows `t,x_1..x_d,value` with the given strides.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        time_stride: usize,
        node_stride: usize,
    ) -> Result<()> {
        let dim = self.dim();
        let mut header = String::from("t");
        for j in 1..=dim {
            header.push_str(&format!(",x_{j}"));
        }
        header.push_str(",value");
        writeln!(w, "{header}")?;
        let t_stride = time_stride.max(1);
        let n_stride = node_stride.max(1);
        let n = self.n_nodes();
        for (i, t) in self.times.iter().enumerate() {
            if i % t_stride != 0 && i != self.times.len() - 1 {
                continue;
            }
            let slice = self.slice(i);
            for idx in (0..n).step_by(n_stride) {
                let mut line = format!("{t}");
                let mut rem = idx;
                for ax in 0..dim {
                    let k = rem % self.axes[ax].len();
                    rem /= self.axes[ax].len();
                    line.push_str(&format!(",{}", self.axes[ax][k]));
                }
                line.push_str(&format!(",{}", slice[idx]));
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

impl Pricer for PricingSurface {
    fn price(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.value(t, x)
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Result<Gradient> {
        Ok(Gradient::exact(self.gradient4(t, x)?))
    }
}

/// Solve the backward pricing PDE for one asset on the given grid.
pub fn solve_pde(model: &FactorModel, asset: &Asset, grid: &GridSpec) -> Result<PricingSurface> {
    let dim = model.dim();
    if dim > 2 {
        return Err(Error::Config(
            "the PDE backend supports one- and two-factor models".into(),
        ));
    }
    grid.validate(dim)?;

    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|ax| {
            let n = grid.nodes[ax];
            let h = (grid.upper[ax] - grid.lower[ax]) / (n - 1) as f64;
            (0..n).map(|i| grid.lower[ax] + h * i as f64).collect()
        })
        .collect();
    let h: Vec<f64> = (0..dim)
        .map(|ax| (grid.upper[ax] - grid.lower[ax]) / (grid.nodes[ax] - 1) as f64)
        .collect();
    let shape: Vec<usize> = grid.nodes.clone();
    let n_nodes: usize = shape.iter().product();
    let maturity = asset.maturity;
    let m_steps = grid.time_steps;
    let dt = maturity / m_steps as f64;
    let times: Vec<f64> = (0..=m_steps).map(|i| i as f64 * dt).collect();

    // Terminal payoff slice.
    let mut payoff = vec![0.0; n_nodes];
    {
        let mut x = vec![0.0; dim];
        for (idx, p) in payoff.iter_mut().enumerate() {
            let mut rem = idx;
            for ax in 0..dim {
                let i = rem % shape[ax];
                rem /= shape[ax];
                x[ax] = axes[ax][i];
            }
            *p = asset.value(&x);
            if !p.is_finite() {
                return Err(Error::Numerical(format!(
                    "payoff non-finite at grid point {x:?}"
                )));
            }
        }
    }

    let mut values = vec![0.0; (m_steps + 1) * n_nodes];
    values[m_steps * n_nodes..].copy_from_slice(&payoff);

    let mut gen = DiscretizedGenerator::empty(&shape, &h, model.rate());
    let mut v = payoff;
    let mut a1v = vec![0.0; n_nodes];
    let mut a2v = vec![0.0; n_nodes];
    let mut a0v = vec![0.0; n_nodes];
    let mut rhs = vec![0.0; n_nodes];
    let mut stage = vec![0.0; n_nodes];

    // March backward in t (slice m_steps - 1 down to 0).
    for step in 0..m_steps {
        let slice_idx = m_steps - 1 - step;
        let theta = if step < RANNACHER_STEPS { 1.0 } else { 0.5 };
        let t_mid = 0.5 * (times[slice_idx] + times[slice_idx + 1]);
        let max_cross = gen.refresh(model, &axes, t_mid)?;
        if dim == 2 {
            let cross_number = dt * max_cross / (h[0] * h[1]);
            if cross_number > CROSS_STABILITY_LIMIT {
                return Err(Error::Config(format!(
                    "explicit cross-derivative term unstable (dt |a12| / (hx hy) = \
                     {cross_number:.1} > {CROSS_STABILITY_LIMIT}); use a smaller time step"
                )));
            }
        }

        gen.apply_axis(0, &v, &mut a1v);
        if dim == 2 {
            gen.apply_axis(1, &v, &mut a2v);
            gen.apply_cross(&v, &mut a0v);
        }

        // Predictor: v + dt (A0 + A1 + A2) v, then an implicit correction
        // per axis (dimension splitting keeps every solve tridiagonal).
        for i in 0..n_nodes {
            let full = a1v[i] + if dim == 2 { a2v[i] + a0v[i] } else { 0.0 };
            rhs[i] = v[i] + dt * full - theta * dt * a1v[i];
        }
        gen.solve_axis(0, theta * dt, &rhs, &mut stage);

        if dim == 2 {
            for i in 0..n_nodes {
                rhs[i] = stage[i] - theta * dt * a2v[i];
            }
            gen.solve_axis(1, theta * dt, &rhs, &mut v);
        } else {
            std::mem::swap(&mut v, &mut stage);
        }

        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "PDE solution became non-finite at t = {}",
                times[slice_idx]
            )));
        }
        values[slice_idx * n_nodes..(slice_idx + 1) * n_nodes].copy_from_slice(&v);
    }

    let surface = PricingSurface {
        asset: asset.clone(),
        axes,
        h,
        times,
        values,
        backend: "pde",
        boundary: "zero_gamma",
        rate: model.rate(),
    };

    // Prices of nonnegative payoffs must stay nonnegative up to scheme noise.
    if asset.payoff.is_nonnegative() {
        let scale = surface
            .slice(m_steps)
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()))
            .max(1.0);
        if surface.min_value() < -1e-6 * scale {
            return Err(Error::Numerical(format!(
                "PDE produced significantly negative prices (min {})",
                surface.min_value()
            )));
        }
    }
    Ok(surface)
}
