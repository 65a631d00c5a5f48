//! One-dimensional epsilon experiment: face-harmonic solves of the state
//! and adjoint problems, exact analytic limit coefficients for piecewise
//! constant profiles, and convergence tables in antiderivative metrics.

use num_rational::Rational64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::log_log_slope;

/// Largest grid the epsilon sweep will allocate; the solves are linear in
/// the cell count, so this bounds memory, not accuracy.
const MAX_RESOLUTION: usize = 1 << 22;

fn frac(x: Rational64) -> Rational64 {
    x - x.floor()
}

fn checked_lcm(a: i64, b: i64) -> Result<i64> {
    let g = gcd(a, b);
    (a / g).checked_mul(b).ok_or_else(|| {
        Error::Config("breakpoint denominators overflow the face lattice".into())
    })
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.abs().max(1)
}

/// Piecewise constant profile on the unit period, breakpoints exact
/// rationals. Piece `i` covers `[breaks[i-1], breaks[i])` with `breaks[-1]`
/// read as zero; the last breakpoint must be one.
#[derive(Clone, Debug)]
pub struct Profile1d {
    breaks: Vec<Rational64>,
    values: Vec<f64>,
}

impl Profile1d {
    pub fn new(breaks: Vec<Rational64>, values: Vec<f64>) -> Result<Self> {
        if breaks.is_empty() || breaks.len() != values.len() {
            return Err(Error::Config(
                "profile needs one value per breakpoint".into(),
            ));
        }
        let one = Rational64::from_integer(1);
        let mut prev = Rational64::from_integer(0);
        for (i, b) in breaks.iter().enumerate() {
            if *b <= prev || *b > one {
                return Err(Error::Config(format!(
                    "profile breakpoints must increase strictly through (0, 1], got {b} at piece {i}"
                )));
            }
            prev = *b;
        }
        if prev != one {
            return Err(Error::Config("last profile breakpoint must be 1".into()));
        }
        for v in &values {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::Config(format!(
                    "profile values must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Profile1d { breaks, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Profile1d::new(vec![Rational64::from_integer(1)], vec![value])
    }

    pub fn two_phase(fraction: Rational64, first: f64, second: f64) -> Result<Self> {
        Profile1d::new(
            vec![fraction, Rational64::from_integer(1)],
            vec![first, second],
        )
    }

    pub fn breakpoints(&self) -> &[Rational64] {
        &self.breaks
    }

    /// Value at a point of the periodic extension; exact rational
    /// comparisons, right-continuous at breakpoints.
    pub fn value_at(&self, y: Rational64) -> f64 {
        let y = frac(y);
        for (b, v) in self.breaks.iter().zip(&self.values) {
            if y < *b {
                return *v;
            }
        }
        self.values[self.values.len() - 1]
    }

    fn denominator_lcm(&self) -> Result<i64> {
        let mut l = 1i64;
        for b in &self.breaks {
            l = checked_lcm(l, *b.denom())?;
        }
        Ok(l)
    }
}

/// The three analytic limit coefficients of the 1D two-scale problem.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Limits1d {
    pub a_star: f64,
    pub b_star: f64,
    pub b_sharp: f64,
}

fn harmonic_mean(p: &Profile1d) -> f64 {
    let mut acc = 0.0;
    let mut prev = Rational64::from_integer(0);
    for (b, v) in p.breaks.iter().zip(&p.values) {
        let len = b - prev;
        acc += (*len.numer() as f64 / *len.denom() as f64) / v;
        prev = *b;
    }
    1.0 / acc
}

/// Exact limit coefficients for piecewise constant profiles: a* and b* are
/// harmonic means, and b# = (a*)^2 times the mean of b(t y) / a(y)^2 over
/// the common period of the two oscillations. The quadrature cuts at every
/// breakpoint image, so it is exact up to rounding.
pub fn analytic_1d_limits(a: &Profile1d, b: &Profile1d, t: Rational64) -> Result<Limits1d> {
    if t <= Rational64::from_integer(0) {
        return Err(Error::Config(format!("scale ratio t must be positive, got {t}")));
    }
    let a_star = harmonic_mean(a);
    let b_star = harmonic_mean(b);

    // Common period of a(y) and b(t y): q for t = p/q in lowest terms.
    let q = *t.denom();
    let period = Rational64::from_integer(q);
    let mut cuts: Vec<Rational64> = vec![Rational64::from_integer(0)];
    for k in 0..q {
        let base = Rational64::from_integer(k);
        for br in &a.breaks {
            cuts.push(base + br);
        }
    }
    let p = *t.numer();
    for j in 0..p {
        let base = Rational64::from_integer(j);
        for br in &b.breaks {
            let y = (base + br) / t;
            if y <= period {
                cuts.push(y);
            }
        }
    }
    cuts.sort();
    cuts.dedup();
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let mid = (w[0] + w[1]) / 2;
        let len = w[1] - w[0];
        let val = b.value_at(frac(t * mid)) / a.value_at(frac(mid)).powi(2);
        acc += (*len.numer() as f64 / *len.denom() as f64) * val;
    }
    let b_sharp = a_star * a_star * acc / q as f64;
    Ok(Limits1d {
        a_star,
        b_star,
        b_sharp,
    })
}

/// One epsilon-indexed oscillating problem on (0, 1): a varies at scale
/// eps = 1 / periods, b at scale eps / t.
#[derive(Clone, Debug)]
pub struct EpsilonProblem<'p> {
    pub a: &'p Profile1d,
    pub b: &'p Profile1d,
    /// Number of a-periods in (0, 1); eps = 1 / periods.
    pub periods: usize,
    pub t: Rational64,
    /// Grid cells per a-period, at least 32.
    pub per_cell: usize,
}

impl EpsilonProblem<'_> {
    pub fn epsilon(&self) -> f64 {
        1.0 / self.periods as f64
    }

    fn validate(&self) -> Result<()> {
        if self.periods == 0 || self.periods > 4096 {
            return Err(Error::Config(format!(
                "period count must lie in 1..=4096, got {}",
                self.periods
            )));
        }
        if self.per_cell < 32 {
            return Err(Error::Config(format!(
                "resolution per period must be at least 32, got {}",
                self.per_cell
            )));
        }
        if self.t <= Rational64::from_integer(0) {
            return Err(Error::Config(format!(
                "scale ratio t must be positive, got {}",
                self.t
            )));
        }
        Ok(())
    }

    /// Smallest grid with at least `per_cell` cells per period that puts
    /// every coefficient jump of both oscillating fields on a face.
    pub fn resolution(&self) -> Result<usize> {
        self.validate()?;
        let m = self.periods as i64;
        // a jumps on the lattice (k + beta)/m; b(t m x) jumps where the
        // argument crosses a breakpoint, a lattice with denominator
        // dividing numer(t m) times the breakpoint denominators.
        let tm = self.t * Rational64::from_integer(m);
        let mut base = checked_lcm(m, m.checked_mul(self.a.denominator_lcm()?).ok_or_else(
            || Error::Config("face lattice overflow".into()),
        )?)?;
        base = checked_lcm(
            base,
            tm.numer().checked_mul(self.b.denominator_lcm()?).ok_or_else(
                || Error::Config("face lattice overflow".into()),
            )?,
        )?;
        let want = (self.per_cell * self.periods) as i64;
        let mult = (want + base - 1) / base;
        let r = (base * mult.max(1)) as usize;
        if r > MAX_RESOLUTION {
            return Err(Error::Config(format!(
                "epsilon grid needs {r} cells, above the limit {MAX_RESOLUTION}; \
                 coarsen the breakpoints or the epsilon list"
            )));
        }
        Ok(r)
    }

    /// Midpoint samples of a^eps; exact because jumps sit on faces.
    pub fn a_cells(&self, r: usize) -> Vec<f64> {
        let m = Rational64::from_integer(self.periods as i64);
        (0..r)
            .map(|i| {
                let x = Rational64::new(2 * i as i64 + 1, 2 * r as i64);
                self.a.value_at(frac(m * x))
            })
            .collect()
    }

    /// Midpoint samples of b^eps = b(t x / eps).
    pub fn b_cells(&self, r: usize) -> Vec<f64> {
        let tm = self.t * Rational64::from_integer(self.periods as i64);
        (0..r)
            .map(|i| {
                let x = Rational64::new(2 * i as i64 + 1, 2 * r as i64);
                self.b.value_at(frac(tm * x))
            })
            .collect()
    }
}

/// Dirichlet state solution on cell centers with its face fluxes.
#[derive(Clone, Debug)]
pub struct StateSolution {
    pub h: f64,
    /// Cell-center values, length r.
    pub u: Vec<f64>,
    /// Face fluxes sigma = a u', length r + 1.
    pub sigma: Vec<f64>,
}

/// Face weights of the harmonic scheme: h/2 of the inverse coefficient on
/// each side, half cells at the Dirichlet ends.
fn face_weights(a: &[f64], h: f64) -> Vec<f64> {
    let r = a.len();
    let mut w = Vec::with_capacity(r + 1);
    w.push(0.5 * h / a[0]);
    for j in 1..r {
        w.push(0.5 * h * (1.0 / a[j - 1] + 1.0 / a[j]));
    }
    w.push(0.5 * h / a[r - 1]);
    w
}

/// Solve -(a u')' = f, u(0) = u(1) = 0 by the exact first integral of the
/// face-harmonic scheme: fluxes are the cumulative quadrature of f, and the
/// starting flux is fixed by the vanishing total increment of u. For
/// face-aligned piecewise constant a the fluxes are exact up to the
/// midpoint quadrature of f.
pub fn solve_state_1d(a_cells: &[f64], f_cells: &[f64]) -> Result<StateSolution> {
    let r = a_cells.len();
    if r == 0 || f_cells.len() != r {
        return Err(Error::Config(
            "state solve needs matching nonempty coefficient and source arrays".into(),
        ));
    }
    if a_cells.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Config("state coefficient must be positive".into()));
    }
    let h = 1.0 / r as f64;
    let w = face_weights(a_cells, h);
    // Cumulative load: sigma_j = sigma_0 - F_j.
    let mut cum = Vec::with_capacity(r + 1);
    let mut acc = 0.0;
    cum.push(0.0);
    for f in f_cells {
        acc += h * f;
        cum.push(acc);
    }
    let wsum: f64 = w.iter().sum();
    let wf: f64 = w.iter().zip(&cum).map(|(wj, fj)| wj * fj).sum();
    if !(wsum > 0.0) || !wf.is_finite() {
        return Err(Error::Numeric(
            "state solve produced a singular face-weight system".into(),
        ));
    }
    let sigma0 = wf / wsum;
    let sigma: Vec<f64> = cum.iter().map(|fj| sigma0 - fj).collect();
    let mut u = Vec::with_capacity(r);
    let mut val = sigma[0] * w[0];
    u.push(val);
    for j in 1..r {
        val += sigma[j] * w[j];
        u.push(val);
    }
    let residual = (u[r - 1] + sigma[r] * w[r]).abs();
    let scale = sigma.iter().fold(0.0f64, |m, s| m.max(s.abs())).max(1.0);
    if residual > 1e-10 * scale {
        return Err(Error::Numeric(format!(
            "state boundary residual {residual:.3e} signals a bad grid"
        )));
    }
    Ok(StateSolution { h, u, sigma })
}

/// Adjoint solution: p on cell centers, the constant flux z, and the
/// boundary defect of the closing quadrature.
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    pub p: Vec<f64>,
    /// The constant value of z = a p' - b u'.
    pub z: f64,
    pub boundary_residual: f64,
}

/// Solve (a p' - b u')' = 0, p(0) = p(1) = 0 by exact quadrature: the flux
/// z = a p' - b u' is a constant c, fixed by the vanishing total increment
/// of p; p follows by the same face quadrature the state solve uses.
pub fn solve_adjoint_1d(
    a_cells: &[f64],
    b_cells: &[f64],
    state: &StateSolution,
) -> Result<AdjointSolution> {
    let r = a_cells.len();
    if b_cells.len() != r || state.u.len() != r || state.sigma.len() != r + 1 {
        return Err(Error::Config(
            "adjoint solve needs the state from the same grid".into(),
        ));
    }
    let h = state.h;
    let w = face_weights(a_cells, h);
    // Face quadrature of b u' / a = b sigma / a^2, one-sided per half cell.
    let mut q = Vec::with_capacity(r + 1);
    q.push(0.5 * h * b_cells[0] / (a_cells[0] * a_cells[0]) * state.sigma[0]);
    for j in 1..r {
        let left = b_cells[j - 1] / (a_cells[j - 1] * a_cells[j - 1]);
        let right = b_cells[j] / (a_cells[j] * a_cells[j]);
        q.push(0.5 * h * (left + right) * state.sigma[j]);
    }
    q.push(0.5 * h * b_cells[r - 1] / (a_cells[r - 1] * a_cells[r - 1]) * state.sigma[r]);
    let wsum: f64 = w.iter().sum();
    let qsum: f64 = q.iter().sum();
    let z = -qsum / wsum;
    let mut p = Vec::with_capacity(r);
    let mut val = z * w[0] + q[0];
    p.push(val);
    for j in 1..r {
        val += z * w[j] + q[j];
        p.push(val);
    }
    let boundary_residual = (p[r - 1] + z * w[r] + q[r]).abs();
    if boundary_residual > 1e-12 {
        return Err(Error::Numeric(format!(
            "adjoint boundary residual {boundary_residual:.3e} exceeds 1e-12"
        )));
    }
    Ok(AdjointSolution {
        p,
        z,
        boundary_residual,
    })
}

/// One row of the convergence table; errors are L2 norms of antiderivative
/// differences on faces, the desk-scale surrogate for weak convergence.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub err_u: f64,
    pub err_sigma: f64,
    pub err_z: f64,
    /// Same Z metric against the wrong limit flux built with b* in place
    /// of b#; it plateaus instead of converging.
    pub err_z_control: f64,
    /// Defect of the energy density integral against its b# limit.
    pub err_energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceTable {
    pub limits: Limits1d,
    pub rows: Vec<ConvergenceRow>,
    pub slope_u: Option<f64>,
    pub slope_sigma: Option<f64>,
    pub slope_z: Option<f64>,
    /// Last-row ratio of the control Z error to the true Z error.
    pub control_plateau_ratio: Option<f64>,
}

fn l2_faces(h: f64, v: &[f64]) -> f64 {
    let r = v.len() - 1;
    let mut acc = 0.5 * (v[0] * v[0] + v[r] * v[r]);
    for x in &v[1..r] {
        acc += x * x;
    }
    (h * acc).sqrt()
}

/// Face antiderivative of cell values by the midpoint rule.
fn antiderivative_cells(h: f64, cells: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(cells.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for c in cells {
        acc += h * c;
        out.push(acc);
    }
    out
}

/// Face antiderivative of face values by the trapezoid rule; exact for the
/// piecewise linear fluxes the solves produce.
fn antiderivative_faces(h: f64, faces: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(faces.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..faces.len() {
        acc += 0.5 * h * (faces[j - 1] + faces[j]);
        out.push(acc);
    }
    out
}

fn cell_energy(b_cells: &[f64], a_cells: &[f64], sigma: &[f64], h: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..a_cells.len() {
        let grad = 0.5 * (sigma[i] + sigma[i + 1]) / a_cells[i];
        acc += b_cells[i] * grad * grad;
    }
    h * acc
}

/// Run the epsilon sweep: solve state and adjoint at every epsilon, solve
/// the limit problems with the analytic coefficients on the same grids,
/// and measure the flux limits sigma -> a* u' and z -> a* p' - b# u' in
/// antiderivative metrics. The control column replaces b# by b* in the
/// limit flux; a gap between the two is the observable content of the
/// microstructure-interaction coefficient.
pub fn flux_convergence<F>(
    a: &Profile1d,
    b: &Profile1d,
    t: Rational64,
    f: F,
    periods: &[usize],
    per_cell: usize,
) -> Result<ConvergenceTable>
where
    F: Fn(f64) -> f64 + Sync,
{
    if periods.len() < 4 {
        return Err(Error::Config(format!(
            "epsilon list needs at least 4 entries, got {}",
            periods.len()
        )));
    }
    for w in periods.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Config("epsilon list must refine strictly".into()));
        }
    }
    for m in periods {
        if !m.is_power_of_two() {
            return Err(Error::Config(format!(
                "epsilon list must be dyadic, got 1/{m}"
            )));
        }
    }
    let limits = analytic_1d_limits(a, b, t)?;

    let rows: Result<Vec<ConvergenceRow>> = periods
        .par_iter()
        .map(|&m| {
            let prob = EpsilonProblem {
                a,
                b,
                periods: m,
                t,
                per_cell,
            };
            let r = prob.resolution()?;
            let h = 1.0 / r as f64;
            let f_cells: Vec<f64> = (0..r).map(|i| f((i as f64 + 0.5) * h)).collect();
            let a_eps = prob.a_cells(r);
            let b_eps = prob.b_cells(r);
            let state = solve_state_1d(&a_eps, &f_cells)?;
            let adjoint = solve_adjoint_1d(&a_eps, &b_eps, &state)?;

            let a_lim = vec![limits.a_star; r];
            let b_lim = vec![limits.b_sharp; r];
            let state_lim = solve_state_1d(&a_lim, &f_cells)?;
            let adjoint_lim = solve_adjoint_1d(&a_lim, &b_lim, &state_lim)?;

            let du: Vec<f64> = {
                let ue = antiderivative_cells(h, &state.u);
                let ul = antiderivative_cells(h, &state_lim.u);
                ue.iter().zip(&ul).map(|(x, y)| x - y).collect()
            };
            let dsigma: Vec<f64> = {
                let se = antiderivative_faces(h, &state.sigma);
                let sl = antiderivative_faces(h, &state_lim.sigma);
                se.iter().zip(&sl).map(|(x, y)| x - y).collect()
            };
            // z antiderivatives: the eps flux is the constant c^eps; the
            // limit flux is the constant from the limit adjoint; the control
            // swaps b* into the limit flux along the true limit state.
            let dz: Vec<f64> = (0..=r)
                .map(|j| (adjoint.z - adjoint_lim.z) * (j as f64 * h))
                .collect();
            let control_faces: Vec<f64> = state_lim
                .sigma
                .iter()
                .map(|s| adjoint_lim.z + (limits.b_sharp - limits.b_star) * s / limits.a_star)
                .collect();
            let control_anti = antiderivative_faces(h, &control_faces);
            let dz_control: Vec<f64> = (0..=r)
                .map(|j| adjoint.z * (j as f64 * h) - control_anti[j])
                .collect();

            let energy_eps = cell_energy(&b_eps, &a_eps, &state.sigma, h);
            let energy_lim = cell_energy(&b_lim, &a_lim, &state_lim.sigma, h);

            Ok(ConvergenceRow {
                epsilon: prob.epsilon(),
                err_u: l2_faces(h, &du),
                err_sigma: l2_faces(h, &dsigma),
                err_z: l2_faces(h, &dz),
                err_z_control: l2_faces(h, &dz_control),
                err_energy: (energy_eps - energy_lim).abs(),
            })
        })
        .collect();
    let rows = rows?;

    let slope = |get: fn(&ConvergenceRow) -> f64| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.epsilon, get(r))).collect();
        if pts.iter().any(|(_, e)| *e <= 1e-13) {
            return None;
        }
        log_log_slope(&pts).ok()
    };
    let last = &rows[rows.len() - 1];
    let control_plateau_ratio = if last.err_z > 0.0 {
        Some(last.err_z_control / last.err_z)
    } else {
        None
    };
    Ok(ConvergenceTable {
        limits,
        slope_u: slope(|r| r.err_u),
        slope_sigma: slope(|r| r.err_sigma),
        slope_z: slope(|r| r.err_z),
        control_plateau_ratio,
        rows,
    })
}
