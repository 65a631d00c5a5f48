//! Periodic coefficient fields on the unit torus: preset construction,
//! ellipticity validation, and exact rational resampling.

use std::fs;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, TWO_PI};
use crate::matrix::SymMat;

/// A phase value in a preset: either c (meaning c times identity) or a full
/// symmetric matrix given by rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhaseValue {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl PhaseValue {
    pub fn to_matrix(&self, dim: usize) -> Result<SymMat> {
        let m = match self {
            PhaseValue::Scalar(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidSpec("non-finite phase value".into()));
                }
                SymMat::scalar(dim, *c)
            }
            PhaseValue::Matrix(rows) => SymMat::from_rows(dim, rows)?,
        };
        if m.min_eig() <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "phase value is not positive definite (min eigenvalue {})",
                m.min_eig()
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrigFunc {
    Sin,
    Cos,
}

/// One separable factor sin(2 pi (freq y_axis) + phase) or the cosine analog.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AxisFactor {
    /// 1-based axis index.
    pub axis: usize,
    pub func: TrigFunc,
    pub freq: i64,
    #[serde(default)]
    pub phase: f64,
}

impl AxisFactor {
    fn eval(&self, y: &[f64; 2]) -> f64 {
        let arg = TWO_PI * self.freq as f64 * y[self.axis - 1] + self.phase;
        match self.func {
            TrigFunc::Sin => arg.sin(),
            TrigFunc::Cos => arg.cos(),
        }
    }
}

/// One product term of a trigonometric polynomial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub factors: Vec<AxisFactor>,
}

fn default_fraction() -> f64 {
    0.5
}

fn default_axis() -> usize {
    1
}

/// Recipe for a coefficient field. Piecewise presets place every interface
/// on a cell face; `smoothing` widens each interface into a linear blend
/// over that many grid cells along the interface normal.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PresetSpec {
    Constant {
        value: PhaseValue,
    },
    Laminate {
        phases: [PhaseValue; 2],
        #[serde(default = "default_fraction")]
        fraction: f64,
        /// 1-based axis along which the coefficient varies.
        #[serde(default = "default_axis")]
        axis: usize,
        #[serde(default)]
        smoothing: f64,
    },
    Checkerboard {
        phases: [PhaseValue; 2],
        #[serde(default)]
        smoothing: f64,
    },
    DiskInclusion {
        background: PhaseValue,
        inclusion: PhaseValue,
        /// Area fraction of the inclusion; sets the disk radius.
        fraction: f64,
        #[serde(default)]
        smoothing: f64,
    },
    TrigSmooth {
        offset: f64,
        #[serde(default)]
        terms: Vec<TrigTerm>,
    },
    Tabulated {
        path: String,
    },
}

/// Grid-sampled symmetric-matrix coefficient on the unit torus, with the
/// eigenvalue range actually attained over the grid.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    grid: Grid,
    values: Vec<SymMat>,
    alpha: f64,
    beta: f64,
}

impl CoefficientField {
    pub fn from_values(grid: Grid, values: Vec<SymMat>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let mut alpha = f64::INFINITY;
        let mut beta = f64::NEG_INFINITY;
        for (i, m) in values.iter().enumerate() {
            if m.dim() != grid.dim() {
                return Err(Error::GridMismatch(format!(
                    "value {} has dimension {}, grid has {}",
                    i,
                    m.dim(),
                    grid.dim()
                )));
            }
            let (lo, hi) = m.eig_range();
            alpha = alpha.min(lo);
            beta = beta.max(hi);
        }
        if !(alpha > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "coefficient field is not uniformly positive definite (min eigenvalue {alpha})"
            )));
        }
        Ok(CoefficientField {
            grid,
            values,
            alpha,
            beta,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn value(&self, flat: usize) -> &SymMat {
        &self.values[flat]
    }

    pub fn values(&self) -> &[SymMat] {
        &self.values
    }

    /// Smallest eigenvalue attained over the grid.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Largest eigenvalue attained over the grid.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Cell average of the matrix field.
    pub fn mean(&self) -> SymMat {
        let mut acc = SymMat::zero(self.grid.dim());
        for m in &self.values {
            acc = acc.add(m);
        }
        acc.scale(1.0 / self.values.len() as f64)
    }

    /// Cell average of the pointwise inverse.
    pub fn mean_of_inverses(&self) -> Result<SymMat> {
        let mut acc = SymMat::zero(self.grid.dim());
        for m in &self.values {
            acc = acc.add(&m.inverse()?);
        }
        Ok(acc.scale(1.0 / self.values.len() as f64))
    }

    /// Pointwise scaled copy, c * A(y).
    pub fn scaled(&self, c: f64) -> Result<CoefficientField> {
        let values = self.values.iter().map(|m| m.scale(c)).collect();
        CoefficientField::from_values(self.grid, values)
    }
}

/// Worst-case eigenvalue range over the grid, checked against a declared
/// ellipticity pair.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub declared_alpha: f64,
    pub declared_beta: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub pass: bool,
}

pub fn validate_ellipticity(field: &CoefficientField, alpha: f64, beta: f64) -> ValidationReport {
    let slack = 1e-12 * beta.abs().max(1.0);
    let pass = field.alpha() >= alpha - slack && field.beta() <= beta + slack;
    ValidationReport {
        declared_alpha: alpha,
        declared_beta: beta,
        min_eig: field.alpha(),
        max_eig: field.beta(),
        pass,
    }
}

/// Linear ramp from 0 to 1 over `width` centered on the interface; a step
/// function when width is zero. `d` is the signed distance past the
/// interface into the second phase.
fn ramp(d: f64, width: f64) -> f64 {
    if width <= 0.0 {
        if d > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (d / width + 0.5).clamp(0.0, 1.0)
    }
}

/// Signed periodic distance to the boundary of [fraction, 1): positive
/// inside that interval, negative inside [0, fraction).
fn laminate_distance(y: f64, fraction: f64) -> f64 {
    if y >= fraction {
        (y - fraction).min(1.0 - y)
    } else {
        -((fraction - y).min(y))
    }
}

fn check_fraction_on_grid(fraction: f64, n: usize) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "volume fraction must lie in (0,1), got {fraction}"
        )));
    }
    let cells = fraction * n as f64;
    if (cells - cells.round()).abs() > 1e-9 {
        return Err(Error::InvalidSpec(format!(
            "volume fraction {fraction} is not representable on a grid with n={n}"
        )));
    }
    Ok(())
}

fn check_smoothing(smoothing: f64) -> Result<()> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "smoothing width must be nonnegative, got {smoothing}"
        )));
    }
    Ok(())
}

/// Sample a preset at cell centers y_j = (j + 1/2)/n on an n^dim grid.
pub fn build_field(spec: &PresetSpec, dim: usize, n: usize) -> Result<CoefficientField> {
    let grid = Grid::new(dim, n)?;
    let h = 1.0 / n as f64;
    let mut values = Vec::with_capacity(grid.len());
    match spec {
        PresetSpec::Constant { value } => {
            let m = value.to_matrix(dim)?;
            values.resize(grid.len(), m);
        }
        PresetSpec::Laminate {
            phases,
            fraction,
            axis,
            smoothing,
        } => {
            if *axis == 0 || *axis > dim {
                return Err(Error::InvalidSpec(format!(
                    "laminate axis must lie in 1..={dim}, got {axis}"
                )));
            }
            check_fraction_on_grid(*fraction, n)?;
            check_smoothing(*smoothing)?;
            let p0 = phases[0].to_matrix(dim)?;
            let p1 = phases[1].to_matrix(dim)?;
            let width = smoothing * h;
            for flat in 0..grid.len() {
                let y = grid.center(flat)[*axis - 1];
                let w = ramp(laminate_distance(y, *fraction), width);
                values.push(p0.blend(&p1, w));
            }
        }
        PresetSpec::Checkerboard { phases, smoothing } => {
            if dim != 2 {
                return Err(Error::InvalidSpec(
                    "checkerboard preset requires dimension 2".into(),
                ));
            }
            check_smoothing(*smoothing)?;
            let p0 = phases[0].to_matrix(dim)?;
            let p1 = phases[1].to_matrix(dim)?;
            let width = smoothing * h;
            for flat in 0..grid.len() {
                let y = grid.center(flat);
                let s0 = ramp(laminate_distance(y[0], 0.5), width);
                let s1 = ramp(laminate_distance(y[1], 0.5), width);
                // Smooth XOR of the two half-cell indicators: 0 or 1 at
                // width 0, a blend near the interfaces otherwise.
                let w = s0 + s1 - 2.0 * s0 * s1;
                values.push(p0.blend(&p1, w));
            }
        }
        PresetSpec::DiskInclusion {
            background,
            inclusion,
            fraction,
            smoothing,
        } => {
            if dim != 2 {
                return Err(Error::InvalidSpec(
                    "disk-inclusion preset requires dimension 2".into(),
                ));
            }
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "volume fraction must lie in (0,1), got {fraction}"
                )));
            }
            check_smoothing(*smoothing)?;
            let radius = (fraction / std::f64::consts::PI).sqrt();
            if radius + 0.5 * smoothing * h > 0.5 {
                return Err(Error::InvalidSpec(format!(
                    "inclusion of fraction {fraction} does not fit inside the unit cell"
                )));
            }
            let bg = background.to_matrix(dim)?;
            let inc = inclusion.to_matrix(dim)?;
            let width = smoothing * h;
            for flat in 0..grid.len() {
                let y = grid.center(flat);
                let dist = ((y[0] - 0.5).powi(2) + (y[1] - 0.5).powi(2)).sqrt();
                let w = ramp(radius - dist, width);
                values.push(bg.blend(&inc, w));
            }
        }
        PresetSpec::TrigSmooth { offset, terms } => {
            for t in terms {
                for f in &t.factors {
                    if f.axis == 0 || f.axis > dim {
                        return Err(Error::InvalidSpec(format!(
                            "trig factor axis must lie in 1..={dim}, got {}",
                            f.axis
                        )));
                    }
                }
            }
            for flat in 0..grid.len() {
                let y = grid.center(flat);
                let mut s = *offset;
                for t in terms {
                    let mut prod = t.amplitude;
                    for f in &t.factors {
                        prod *= f.eval(&y);
                    }
                    s += prod;
                }
                if s <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "trig-smooth preset is nonpositive ({s}) at y=({}, {})",
                        y[0], y[1]
                    )));
                }
                values.push(SymMat::scalar(dim, s));
            }
        }
        PresetSpec::Tabulated { path } => {
            let text = fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let entries: Vec<f64> = line
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<f64>().map_err(|_| {
                            Error::InvalidSpec(format!(
                                "bad number {:?} on line {} of {path}",
                                tok,
                                lineno + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if entries.len() != dim * dim {
                    return Err(Error::InvalidSpec(format!(
                        "line {} of {path} has {} entries, expected {}",
                        lineno + 1,
                        entries.len(),
                        dim * dim
                    )));
                }
                let rows: Vec<Vec<f64>> = entries.chunks(dim).map(|c| c.to_vec()).collect();
                values.push(SymMat::from_rows(dim, &rows)?);
            }
            if values.len() != grid.len() {
                return Err(Error::InvalidSpec(format!(
                    "{path} holds {} matrices, expected {} for n={n}, dim={dim}",
                    values.len(),
                    grid.len()
                )));
            }
        }
    }
    CoefficientField::from_values(grid, values)
}

/// Per-axis index map realizing g(t y) on a target grid by exact integer
/// arithmetic. Target centers are (2i+1)/(2 n_dst); the map exists when
/// every t-scaled center lands on a source center modulo 1.
fn axis_resample_map(n_src: usize, t: Rational64, n_dst: usize) -> Result<Vec<usize>> {
    let p = *t.numer();
    let q = *t.denom();
    if p <= 0 {
        return Err(Error::UnsupportedFactor(format!(
            "two-scale factor must be positive, got {t}"
        )));
    }
    let qd = q
        .checked_mul(n_dst as i64)
        .ok_or_else(|| Error::UnsupportedFactor("factor denominator overflow".into()))?;
    let mut map = Vec::with_capacity(n_dst);
    for i in 0..n_dst {
        let num = p * (2 * i as i64 + 1) * n_src as i64;
        if num % qd != 0 || (num / qd) % 2 == 0 {
            return Err(Error::UnsupportedFactor(format!(
                "factor {t}: target point {} of n={n_dst} misses the n={n_src} source grid",
                i
            )));
        }
        let h = num / qd;
        map.push(((h - 1) / 2).rem_euclid(n_src as i64) as usize);
    }
    Ok(map)
}

/// Flat-index gather map for resampling from `src` to `dst` by factor t
/// along every axis.
pub fn resample_map(src: Grid, t: Rational64, dst: Grid) -> Result<Vec<usize>> {
    if src.dim() != dst.dim() {
        return Err(Error::GridMismatch(format!(
            "resample between dimensions {} and {}",
            src.dim(),
            dst.dim()
        )));
    }
    let axis = axis_resample_map(src.n(), t, dst.n())?;
    match src.dim() {
        1 => Ok(axis),
        _ => {
            let mut map = Vec::with_capacity(dst.len());
            for i0 in 0..dst.n() {
                for i1 in 0..dst.n() {
                    map.push(src.flat([axis[i0], axis[i1]]));
                }
            }
            Ok(map)
        }
    }
}

/// Gather any per-node data through the exact resample map.
pub fn resample_values<T: Copy>(
    src: Grid,
    values: &[T],
    t: Rational64,
    dst: Grid,
) -> Result<Vec<T>> {
    if values.len() != src.len() {
        return Err(Error::GridMismatch(format!(
            "expected {} source values, got {}",
            src.len(),
            values.len()
        )));
    }
    let map = resample_map(src, t, dst)?;
    Ok(map.into_iter().map(|m| values[m]).collect())
}

/// The composed coefficient field y -> A(t y) on the target grid.
pub fn resample_periodic(
    field: &CoefficientField,
    t: Rational64,
    target: Grid,
) -> Result<CoefficientField> {
    let values = resample_values(field.grid(), field.values(), t, target)?;
    CoefficientField::from_values(target, values)
}

/// Smallest even source resolution >= 4 from which resampling by t onto an
/// n-point target grid is exact. Searches odd multipliers so that the parity
/// condition of the index map holds.
pub fn compatible_source_resolution(t: Rational64, n_target: usize) -> Result<usize> {
    let p = *t.numer();
    let q = *t.denom();
    if p <= 0 {
        return Err(Error::UnsupportedFactor(format!(
            "two-scale factor must be positive, got {t}"
        )));
    }
    let mut beta: i64 = 1;
    while beta < 200 {
        let num = q * n_target as i64 * beta;
        if num % p == 0 {
            let ng = num / p;
            if ng >= 4 && ng % 2 == 0 && axis_resample_map(ng as usize, t, n_target).is_ok() {
                return Ok(ng as usize);
            }
        }
        beta += 2;
    }
    Err(Error::UnsupportedFactor(format!(
        "no source resolution below 200x target supports factor {t} at n={n_target}"
    )))
}
