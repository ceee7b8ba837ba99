//! Periodic uniform grids, real fields, and the spectral toolbox built on them.
//!
//! Fields are stored row-major with the last axis contiguous. Fourier
//! coefficients follow the unnormalized DFT convention
//! `f_hat[k] = sum_j f[j] exp(-i xi_k x_j)`, so the inverse carries the `1/N^n`
//! factor and Parseval reads `h^n sum |f|^2 = (h/N)^n sum |f_hat|^2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid on the torus `[0, L)^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    points: usize,
    length: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} outside {{1, 2, 3}}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per dimension must be a power of two >= 8, got {points}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        Ok(Grid { dim, points, length })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    /// Total number of grid points, `N^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Wavenumbers `2 pi k / L` along one axis in FFT storage order
    /// (`0, 1, ..., N/2-1, -N/2, ..., -1`).
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.points as i64;
        (0..n)
            .map(|j| {
                let k = if j < n / 2 { j } else { j - n };
                2.0 * PI * k as f64 / self.length
            })
            .collect()
    }

    /// Integer wave index in `{-N/2, ..., N/2-1}` for a storage position.
    pub fn wave_index(&self, j: usize) -> i64 {
        let n = self.points as i64;
        let j = j as i64;
        if j < n / 2 {
            j
        } else {
            j - n
        }
    }

    /// Per-axis positions of a flat index (unused axes are 0).
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.points;
            rest /= self.points;
        }
        out
    }

    pub fn coordinate(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let m = self.unravel(idx);
        [m[0] as f64 * h, m[1] as f64 * h, m[2] as f64 * h]
    }

    /// Minimum-image displacement `x - center` on the torus.
    pub fn periodic_offset(&self, x: f64, center: f64) -> f64 {
        let l = self.length;
        let mut d = (x - center) % l;
        if d > 0.5 * l {
            d -= l;
        } else if d < -0.5 * l {
            d += l;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L1,
    L2,
    Linf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NormKind::L1 => "L1",
            NormKind::L2 => "L2",
            NormKind::Linf => "Linf",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every grid point; the closure receives `dim` coordinates.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.coordinate(i);
                f(&x[..grid.dim()])
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("norm"));
        }
        Ok(norm_of(&self.values, self.grid.cell_volume(), kind))
    }
}

pub(crate) fn norm_of(values: &[f64], cell_volume: f64, kind: NormKind) -> f64 {
    match kind {
        NormKind::L1 => cell_volume * values.iter().map(|v| v.abs()).sum::<f64>(),
        NormKind::L2 => (cell_volume * values.iter().map(|v| v * v).sum::<f64>()).sqrt(),
        NormKind::Linf => values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
    }
}

/// Norm of a vector-valued field given by its components, using the pointwise
/// Euclidean length.
pub(crate) fn vector_norm_of(components: &[&[f64]], cell_volume: f64, kind: NormKind) -> f64 {
    let len = components.first().map_or(0, |c| c.len());
    let pointwise = (0..len).map(|i| components.iter().map(|c| c[i] * c[i]).sum::<f64>());
    match kind {
        NormKind::L1 => cell_volume * pointwise.map(f64::sqrt).sum::<f64>(),
        NormKind::L2 => (cell_volume * pointwise.sum::<f64>()).sqrt(),
        NormKind::Linf => pointwise.fold(0.0_f64, f64::max).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::InvalidGrid("vector field without components".into()))?
            .grid();
        if components.len() != grid.dim() {
            return Err(Error::InvalidGrid(format!(
                "vector field on a {}-d grid needs {} components, got {}",
                grid.dim(),
                grid.dim(),
                components.len()
            )));
        }
        if components.iter().any(|c| *c.grid() != grid) {
            return Err(Error::InvalidGrid("vector components live on different grids".into()));
        }
        Ok(VectorField { grid, components })
    }

    pub fn zeros(grid: Grid) -> Self {
        VectorField { grid, components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &ScalarField {
        &self.components[j]
    }

    pub fn norm(&self, kind: NormKind) -> Result<f64> {
        let comps: Vec<&[f64]> = self.components.iter().map(|c| c.values()).collect();
        if comps.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("norm"));
        }
        Ok(vector_norm_of(&comps, self.grid.cell_volume(), kind))
    }
}

/// Fourier coefficients of the hyperbolic unknowns `w = (u, v)` and of `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub grid: Grid,
    /// `n + 1` coefficient arrays: `u` first, then `v_1..v_n`.
    pub w_hat: Vec<Vec<Complex64>>,
    pub phi_hat: Vec<Complex64>,
}

impl SpectralState {
    pub fn zeros(grid: Grid) -> Self {
        let modes = grid.len();
        SpectralState {
            grid,
            w_hat: vec![vec![Complex64::new(0.0, 0.0); modes]; grid.dim() + 1],
            phi_hat: vec![Complex64::new(0.0, 0.0); modes],
        }
    }

    pub fn u_hat(&self) -> &[Complex64] {
        &self.w_hat[0]
    }

    pub fn v_hat(&self, j: usize) -> &[Complex64] {
        &self.w_hat[j + 1]
    }
}

/// FFT plans and wavenumber tables for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
    /// Same as `wavenumbers` with the Nyquist entry zeroed; used by odd-order
    /// derivatives so that real fields stay real.
    derivative_wavenumbers: Vec<f64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.points());
        let inverse = planner.plan_fft_inverse(grid.points());
        let wavenumbers = grid.wavenumbers();
        let mut derivative_wavenumbers = wavenumbers.clone();
        derivative_wavenumbers[grid.points() / 2] = 0.0;
        Spectral { grid, forward, inverse, wavenumbers, derivative_wavenumbers }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Full `|xi|^2` of a mode (Nyquist included), for even-order operators.
    pub fn xi_squared(&self, mode: usize) -> f64 {
        let m = self.grid.unravel(mode);
        (0..self.grid.dim()).map(|a| self.wavenumbers[m[a]].powi(2)).sum()
    }

    /// Wavevector used by first-order operators (Nyquist components zeroed).
    pub fn derivative_wavevector(&self, mode: usize) -> [f64; 3] {
        let m = self.grid.unravel(mode);
        let mut xi = [0.0; 3];
        for a in 0..self.grid.dim() {
            xi[a] = self.derivative_wavenumbers[m[a]];
        }
        xi
    }

    /// Tables for per-mode loops: derivative wavevectors and full `|xi|^2`.
    pub fn mode_tables(&self) -> (Vec<[f64; 3]>, Vec<f64>) {
        let n = self.grid.len();
        let xi = (0..n).map(|m| self.derivative_wavevector(m)).collect();
        let xi2 = (0..n).map(|m| self.xi_squared(m)).collect();
        (xi, xi2)
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, true);
        data
    }

    pub fn forward_field(&self, field: &ScalarField) -> Vec<Complex64> {
        self.forward(field.values())
    }

    /// Inverse transform, keeping the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.transform(&mut data, false);
        let scale = 1.0 / self.grid.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    pub fn inverse_field(&self, coeffs: &[Complex64]) -> ScalarField {
        ScalarField { grid: self.grid, values: self.inverse(coeffs) }
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let fft = if forward { &self.forward } else { &self.inverse };
        let n = self.grid.points();
        let total = data.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let dim = self.grid.dim();
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            // Gather strided lines into contiguous rows, transform, scatter back.
            let mut lines = vec![Complex64::new(0.0, 0.0); total];
            let block = n * stride;
            let mut row = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let dst = &mut lines[row * n..(row + 1) * n];
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d = data[base + j * stride];
                    }
                    row += 1;
                }
            }
            fft.process_with_scratch(&mut lines, &mut scratch);
            row = 0;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let src = &lines[row * n..(row + 1) * n];
                    for (j, s) in src.iter().enumerate() {
                        data[base + j * stride] = *s;
                    }
                    row += 1;
                }
            }
        }
    }

    /// Multiplies each coefficient by `i xi_axis` (derivative along `axis`).
    pub fn differentiate(&self, coeffs: &[Complex64], axis: usize) -> Vec<Complex64> {
        coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| {
                let k = self.derivative_wavenumbers[self.grid.unravel(m)[axis]];
                Complex64::new(-k * c.im, k * c.re)
            })
            .collect()
    }

    pub fn grad(&self, field: &ScalarField) -> VectorField {
        let coeffs = self.forward(field.values());
        let components = (0..self.grid.dim())
            .map(|a| self.inverse_field(&self.differentiate(&coeffs, a)))
            .collect();
        VectorField { grid: self.grid, components }
    }

    pub fn divergence(&self, field: &VectorField) -> ScalarField {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (a, comp) in field.components().iter().enumerate() {
            let d = self.differentiate(&self.forward(comp.values()), a);
            for (s, x) in acc.iter_mut().zip(d) {
                *s += x;
            }
        }
        self.inverse_field(&acc)
    }

    pub fn laplacian(&self, field: &ScalarField) -> ScalarField {
        let coeffs: Vec<Complex64> = self
            .forward(field.values())
            .into_iter()
            .enumerate()
            .map(|(m, c)| -c * self.xi_squared(m))
            .collect();
        self.inverse_field(&coeffs)
    }

    /// `(h/N)^n`: converts `sum |f_hat|^2` into the squared `L2` norm.
    pub fn parseval_weight(&self) -> f64 {
        (self.grid.spacing() / self.grid.points() as f64).powi(self.grid.dim() as i32)
    }

    /// `H^s` norm of a field given by its coefficients.
    pub fn sobolev_norm_hat(&self, coeffs: &[Complex64], s: f64) -> f64 {
        let sum: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| (1.0 + self.xi_squared(m)).powf(s) * c.norm_sqr())
            .sum();
        (self.parseval_weight() * sum).sqrt()
    }

    pub fn l2_norm_hat(&self, coeffs: &[Complex64]) -> f64 {
        (self.parseval_weight() * coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn sobolev_norm(&self, field: &ScalarField, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::param("s", "Sobolev index must be nonnegative"));
        }
        if field.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sobolev_norm"));
        }
        Ok(self.sobolev_norm_hat(&self.forward(field.values()), s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_construction() {
        let g = Grid::new(1, 64, 2.0 * PI).unwrap();
        assert_relative_eq!(g.spacing(), 2.0 * PI / 64.0);
        let k = g.wavenumbers();
        assert_eq!(g.wave_index(0), 0);
        assert_eq!(g.wave_index(32), -32);
        assert_eq!(g.wave_index(63), -1);
        assert_relative_eq!(k[31], 31.0);
        assert_relative_eq!(k[32], -32.0);

        let g2 = Grid::new(2, 8, 1.0).unwrap();
        assert_eq!(g2.len(), 64);
        assert_relative_eq!(g2.spacing(), 0.125);
        assert_eq!(g2.spacing() * 8.0, g2.length());
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(1, 63, 1.0).is_err());
        assert!(Grid::new(1, 4, 1.0).is_err());
        assert!(Grid::new(4, 8, 1.0).is_err());
        assert!(Grid::new(0, 8, 1.0).is_err());
        assert!(Grid::new(1, 8, -1.0).is_err());
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = Grid::new(1, 64, 1.0).unwrap();
        let two = ScalarField::constant(g, 2.0);
        assert_relative_eq!(two.norm(NormKind::L2).unwrap(), 2.0, epsilon = 1e-14);

        let g = Grid::new(1, 64, 2.0 * PI).unwrap();
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        assert_relative_eq!(s.norm(NormKind::L2).unwrap(), PI.sqrt(), epsilon = 1e-12);

        let z = ScalarField::zeros(g);
        for kind in [NormKind::L1, NormKind::L2, NormKind::Linf] {
            assert_eq!(z.norm(kind).unwrap(), 0.0);
        }

        let mut bad = ScalarField::zeros(g);
        bad.values_mut()[3] = f64::NAN;
        assert!(bad.norm(NormKind::L2).is_err());
    }

    #[test]
    fn sobolev_norms() {
        let g = Grid::new(1, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        assert_relative_eq!(
            sp.sobolev_norm(&s, 0.0).unwrap(),
            s.norm(NormKind::L2).unwrap(),
            max_relative = 1e-12
        );
        assert_relative_eq!(sp.sobolev_norm(&s, 1.0).unwrap(), (2.0 * PI).sqrt(), max_relative = 1e-12);

        let g3 = Grid::new(2, 16, 3.0).unwrap();
        let c = ScalarField::constant(g3, 1.5);
        let sp3 = Spectral::new(g3);
        for s in [0.0, 1.0, 2.5] {
            assert_relative_eq!(sp3.sobolev_norm(&c, s).unwrap(), 1.5 * 3.0, max_relative = 1e-12);
        }
        assert!(sp3.sobolev_norm(&c, -1.0).is_err());
    }

    #[test]
    fn spectral_derivatives() {
        let g = Grid::new(1, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let s = ScalarField::from_fn(g, |x| x[0].sin());
        let ds = sp.grad(&s);
        for (i, v) in ds.component(0).values().iter().enumerate() {
            assert!((v - g.coordinate(i)[0].cos()).abs() < 1e-10);
        }

        let c = ScalarField::constant(g, 4.0);
        let dc = sp.grad(&c);
        assert!(dc.component(0).values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn div_grad_is_laplacian_2d() {
        let g = Grid::new(2, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(g);
        let f = ScalarField::from_fn(g, |x| (x[0]).sin() * (2.0 * x[1]).cos() + (3.0 * x[0] + x[1]).cos());
        let dg = sp.divergence(&sp.grad(&f));
        let lap = sp.laplacian(&f);
        for (a, b) in dg.values().iter().zip(lap.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        // analytic check: Laplacian of the first term is -5x, second -10x
        for (i, v) in lap.values().iter().enumerate() {
            let x = g.coordinate(i);
            let exact = -5.0 * x[0].sin() * (2.0 * x[1]).cos() - 10.0 * (3.0 * x[0] + x[1]).cos();
            assert!((v - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn vector_field_checks_shape() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        assert!(VectorField::new(vec![ScalarField::zeros(g)]).is_err());
        let v = VectorField::new(vec![ScalarField::constant(g, 3.0), ScalarField::constant(g, 4.0)]).unwrap();
        assert_relative_eq!(v.norm(NormKind::Linf).unwrap(), 5.0);
        assert_relative_eq!(v.norm(NormKind::L2).unwrap(), 5.0);
    }
}
