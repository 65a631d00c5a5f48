//! Uniform periodic grids on the unit torus and FFT plumbing.
//!
//! All fields live on the unit cell [0,1)^N with N = 1 or 2 and the same
//! even resolution n along every axis. Sample points sit at cell centers
//! y_j = (j + 1/2)/n, so piecewise presets whose interfaces lie on cell
//! faces are sampled away from their discontinuities.
//!
//! Conventions used throughout the crate:
//!
//! * flat storage is row-major with the last axis fastest, so in 2D the
//!   flat index of (i0, i1) is `i0 * n + i1`;
//! * inner products and norms are normalized by the number of nodes, which
//!   makes them the trapezoidal (here: exact midpoint) quadrature of the
//!   corresponding integrals over the unit cell;
//! * discrete differentiation is spectral, `d/dy ~ i (2 pi k)`, with the
//!   derivative of the Nyquist mode set to zero so that differentiation
//!   commutes with complex conjugation and the shifted operators below stay
//!   Hermitian with even spectra.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Square periodic grid: `n` cells per axis in `dim` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidSpec(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidSpec(format!(
                "resolution must be even and at least 4, got {n}"
            )));
        }
        Ok(Grid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of nodes, n^dim.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat index.
    pub fn coords(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => [flat / self.n, flat % self.n],
        }
    }

    /// Flat index of a multi-index.
    pub fn flat(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[0] * self.n + idx[1],
        }
    }

    /// Cell-center coordinates of a flat index.
    pub fn center(&self, flat: usize) -> [f64; 2] {
        let idx = self.coords(flat);
        let mut y = [0.0; 2];
        for d in 0..self.dim {
            y[d] = (idx[d] as f64 + 0.5) / self.n as f64;
        }
        y
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "expected {}d grid with n={}, got {}d with n={}",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Mean over nodes; the midpoint quadrature of the integral over the cell.
pub fn mean_c(data: &[Complex64]) -> Complex64 {
    let s: Complex64 = data.iter().sum();
    s / data.len() as f64
}

pub fn mean_r(data: &[f64]) -> f64 {
    data.iter().sum::<f64>() / data.len() as f64
}

/// Normalized inner product <u, v> = mean(u conj(v)).
pub fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    let s: Complex64 = u.iter().zip(v).map(|(a, b)| a * b.conj()).sum();
    s / u.len() as f64
}

/// Normalized L2 norm.
pub fn norm(u: &[Complex64]) -> f64 {
    (u.iter().map(|a| a.norm_sqr()).sum::<f64>() / u.len() as f64).sqrt()
}

pub fn norm_r(u: &[f64]) -> f64 {
    (u.iter().map(|a| a * a).sum::<f64>() / u.len() as f64).sqrt()
}

/// Least-squares slope of ln(y) against ln(x). Convergence tables report
/// this as the empirical order.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Numeric(format!(
            "slope fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mut lx = Vec::with_capacity(points.len());
    let mut ly = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::Numeric(format!(
                "slope fit needs positive data, got ({x}, {y})"
            )));
        }
        lx.push(x.ln());
        ly.push(y.ln());
    }
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        return Err(Error::Numeric("slope fit abscissae coincide".into()));
    }
    Ok(num / den)
}

/// Signed integer frequency of DFT index `m` for transform length `n`.
pub fn signed_freq(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Angular frequency used for differentiation: 2 pi k with the Nyquist
/// derivative zeroed. Keeping the Nyquist term out makes the first-order
/// derivative operator skew-Hermitian on the nodal space and preserves the
/// eta -> -eta symmetry of the shifted operators.
pub fn deriv_freq(m: usize, n: usize) -> f64 {
    if m == n / 2 {
        0.0
    } else {
        TWO_PI * signed_freq(m, n) as f64
    }
}

/// FFT plans and scratch space for one grid. Forward transforms are
/// unnormalized; inverse transforms divide by the node count, so
/// `inverse(forward(u)) == u`.
pub struct Spectral {
    grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    column: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n());
        let inv = planner.plan_fft_inverse(grid.n());
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Spectral {
            grid,
            fwd,
            inv,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            column: vec![Complex64::new(0.0, 0.0); grid.n()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn transform_axis(&mut self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.grid.n();
        let plan = if forward { &self.fwd } else { &self.inv };
        match (self.grid.dim(), axis) {
            (1, _) => plan.process_with_scratch(data, &mut self.scratch),
            (_, 1) => {
                for row in data.chunks_exact_mut(n) {
                    plan.process_with_scratch(row, &mut self.scratch);
                }
            }
            _ => {
                for i1 in 0..n {
                    for i0 in 0..n {
                        self.column[i0] = data[i0 * n + i1];
                    }
                    plan.process_with_scratch(&mut self.column, &mut self.scratch);
                    for i0 in 0..n {
                        data[i0 * n + i1] = self.column[i0];
                    }
                }
            }
        }
    }

    /// In-place forward DFT along every axis (unnormalized).
    pub fn forward(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.grid.len());
        for axis in 0..self.grid.dim() {
            self.transform_axis(data, axis, true);
        }
    }

    /// In-place inverse DFT along every axis, normalized by the node count.
    pub fn inverse(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.grid.len());
        for axis in 0..self.grid.dim() {
            self.transform_axis(data, axis, false);
        }
        let scale = 1.0 / self.grid.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Multiply a spectrum in place by a per-axis symbol, evaluated on the
    /// DFT index along `axis`.
    pub fn apply_axis_symbol(&self, spec: &mut [Complex64], axis: usize, symbol: &[Complex64]) {
        let n = self.grid.n();
        match (self.grid.dim(), axis) {
            (1, _) => {
                for (v, s) in spec.iter_mut().zip(symbol) {
                    *v *= s;
                }
            }
            (_, 1) => {
                for row in spec.chunks_exact_mut(n) {
                    for (v, s) in row.iter_mut().zip(symbol) {
                        *v *= s;
                    }
                }
            }
            _ => {
                for (i0, row) in spec.chunks_exact_mut(n).enumerate() {
                    let s = symbol[i0];
                    for v in row.iter_mut() {
                        *v *= s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(3, 8).is_err());
        assert!(Grid::new(2, 7).is_err());
        assert!(Grid::new(2, 2).is_err());
        assert!(Grid::new(2, 8).is_ok());
    }

    #[test]
    fn fft_roundtrip_2d() {
        let grid = Grid::new(2, 8).unwrap();
        let mut sp = Spectral::new(grid);
        let mut data: Vec<Complex64> = (0..grid.len())
            .map(|i| Complex64::new(i as f64 * 0.37 - 3.0, (i % 5) as f64))
            .collect();
        let orig = data.clone();
        sp.forward(&mut data);
        sp.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn spectral_derivative_of_plane_wave() {
        // d/dy exp(2 pi i y) = 2 pi i exp(2 pi i y), sampled at cell centers.
        let grid = Grid::new(1, 16).unwrap();
        let mut sp = Spectral::new(grid);
        let mut data: Vec<Complex64> = (0..grid.len())
            .map(|i| {
                let y = grid.center(i)[0];
                Complex64::new(0.0, TWO_PI * y).exp()
            })
            .collect();
        let expected: Vec<Complex64> = data
            .iter()
            .map(|v| v * Complex64::new(0.0, TWO_PI))
            .collect();
        sp.forward(&mut data);
        let symbol: Vec<Complex64> = (0..grid.n())
            .map(|m| Complex64::new(0.0, deriv_freq(m, grid.n())))
            .collect();
        sp.apply_axis_symbol(&mut data, 0, &symbol);
        sp.inverse(&mut data);
        for (a, b) in data.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-10);
        }
    }
}
