//! Small dense symmetric matrices for 1x1 and 2x2 coefficient values.
//!
//! Coefficient fields store one symmetric positive definite matrix per grid
//! node. The spatial dimension is 1 or 2, so everything here is closed form;
//! no linear algebra backend is involved.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric `dim x dim` matrix with `dim` in {1, 2}. Entries beyond `dim`
/// are kept at zero so a fixed-size backing array can be used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    dim: usize,
    e: [[f64; 2]; 2],
}

impl SymMat {
    pub fn zero(dim: usize) -> Self {
        SymMat { dim, e: [[0.0; 2]; 2] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    /// `c` times the identity.
    pub fn scalar(dim: usize, c: f64) -> Self {
        let mut m = Self::zero(dim);
        for d in 0..dim {
            m.e[d][d] = c;
        }
        m
    }

    /// Build from full row-major entries, enforcing symmetry to 1e-14
    /// relative to the largest entry. The stored matrix is the symmetric
    /// average of the input.
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 || dim > 2 || rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidSpec(format!(
                "matrix value must be {dim}x{dim}"
            )));
        }
        let mut scale: f64 = 0.0;
        for r in rows {
            for &v in r {
                if !v.is_finite() {
                    return Err(Error::InvalidSpec("matrix entry is not finite".into()));
                }
                scale = scale.max(v.abs());
            }
        }
        let mut m = Self::zero(dim);
        for i in 0..dim {
            for j in 0..dim {
                if (rows[i][j] - rows[j][i]).abs() > 1e-14 * scale.max(1.0) {
                    return Err(Error::InvalidSpec(format!(
                        "matrix value is not symmetric: [{i}][{j}]={} vs [{j}][{i}]={}",
                        rows[i][j], rows[j][i]
                    )));
                }
                m.e[i][j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[i][j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.e[i][j] = v;
        self.e[j][i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|d| self.e[d][d]).sum()
    }

    /// Entries as nested rows, for serialization.
    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.e[i][j]).collect())
            .collect()
    }

    /// Smallest and largest eigenvalue, closed form.
    pub fn eig_range(&self) -> (f64, f64) {
        match self.dim {
            1 => (self.e[0][0], self.e[0][0]),
            _ => {
                let a = self.e[0][0];
                let b = self.e[0][1];
                let c = self.e[1][1];
                let mid = 0.5 * (a + c);
                let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                (mid - rad, mid + rad)
            }
        }
    }

    pub fn min_eig(&self) -> f64 {
        self.eig_range().0
    }

    pub fn inverse(&self) -> Result<Self> {
        let mut m = Self::zero(self.dim);
        match self.dim {
            1 => {
                let a = self.e[0][0];
                if a.abs() < 1e-300 {
                    return Err(Error::Numeric("singular 1x1 matrix".into()));
                }
                m.e[0][0] = 1.0 / a;
            }
            _ => {
                let det = self.e[0][0] * self.e[1][1] - self.e[0][1] * self.e[1][0];
                if det.abs() < 1e-300 {
                    return Err(Error::Numeric("singular 2x2 matrix".into()));
                }
                m.e[0][0] = self.e[1][1] / det;
                m.e[1][1] = self.e[0][0] / det;
                m.e[0][1] = -self.e[0][1] / det;
                m.e[1][0] = -self.e[1][0] / det;
            }
        }
        Ok(m)
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.e[i][j] += other.e[i][j];
            }
        }
        m
    }

    pub fn scale(&self, c: f64) -> SymMat {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.e[i][j] *= c;
            }
        }
        m
    }

    /// Convex blend `(1 - t) * self + t * other`; preserves symmetry and,
    /// for SPD inputs, positive definiteness.
    pub fn blend(&self, other: &SymMat, t: f64) -> SymMat {
        self.scale(1.0 - t).add(&other.scale(t))
    }

    /// Apply to a real vector, first `dim` components used.
    pub fn matvec(&self, v: [f64; 2]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i] += self.e[i][j] * v[j];
            }
        }
        out
    }

    /// Apply to a complex vector, first `dim` components used.
    pub fn matvec_c(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i] += v[j] * self.e[i][j];
            }
        }
        out
    }

    /// Quadratic form v . (M v) for a complex vector, returned as complex;
    /// real up to rounding because M is real symmetric.
    pub fn quad_c(&self, v: [Complex64; 2]) -> Complex64 {
        let mv = self.matvec_c(v);
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            s += mv[i] * v[i].conj();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig_range_matches_hand_values() {
        let m = SymMat::from_rows(2, &[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (lo, hi) = m.eig_range();
        assert!((lo - 1.0).abs() < 1e-14);
        assert!((hi - 3.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = SymMat::from_rows(2, &[vec![3.0, 0.5], vec![0.5, 1.5]]).unwrap();
        let inv = m.inverse().unwrap();
        let prod_00 = m.get(0, 0) * inv.get(0, 0) + m.get(0, 1) * inv.get(1, 0);
        let prod_01 = m.get(0, 0) * inv.get(0, 1) + m.get(0, 1) * inv.get(1, 1);
        assert!((prod_00 - 1.0).abs() < 1e-14);
        assert!(prod_01.abs() < 1e-14);
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(SymMat::from_rows(2, &[vec![1.0, 0.2], vec![0.1, 1.0]]).is_err());
    }
}
