//! Effective-tensor assembly from solved correctors, the bound chain, and
//! the variational identity.
//!
//! Every quadrature below is the plain nodal mean, which is the quadrature
//! the discretizations themselves use; the equalities between the assembly
//! routes then hold at the discrete level up to solver residuals.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::cell_solver::{solve_corrector_set, CorrectorField, CorrectorSet, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::matrix::SymMat;
use crate::microstructure::{
    build_field, compatible_source_resolution, resample_periodic, resample_values,
    CoefficientField, PresetSpec,
};

/// Minimum eigenvalue a positive-semidefinite comparison may report before
/// its link is declared violated.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "Astar")]
    Astar,
    #[serde(rename = "Bstar")]
    Bstar,
    #[serde(rename = "Bsharp-energy")]
    BsharpEnergy,
    #[serde(rename = "Bsharp-flux")]
    BsharpFlux,
    #[serde(rename = "Bsharp-perturbation")]
    BsharpPerturbation,
    #[serde(rename = "Bsharp-twoscale-t")]
    BsharpTwoscaleT,
    #[serde(rename = "Bsharp-twoscale-s")]
    BsharpTwoscaleS,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::Astar => "Astar",
            Provenance::Bstar => "Bstar",
            Provenance::BsharpEnergy => "Bsharp-energy",
            Provenance::BsharpFlux => "Bsharp-flux",
            Provenance::BsharpPerturbation => "Bsharp-perturbation",
            Provenance::BsharpTwoscaleT => "Bsharp-twoscale-t",
            Provenance::BsharpTwoscaleS => "Bsharp-twoscale-s",
        }
    }
}

/// Assembled effective tensor. `matrix` is the symmetrized result;
/// `asymmetry` records the largest entry of the skew part before
/// symmetrization, which is solver noise for symmetric inputs.
#[derive(Clone, Debug)]
pub struct HomogTensor {
    pub provenance: Provenance,
    pub n: usize,
    pub tol: f64,
    pub matrix: SymMat,
    pub asymmetry: f64,
    /// Flux route only: the constant vector mean(A grad psi_k - B (grad
    /// chi_k + e_k)) per direction k.
    pub aux_flux_mean: Option<Vec<[f64; 2]>>,
}

fn finish(
    provenance: Provenance,
    n: usize,
    tol: f64,
    dim: usize,
    raw: [[f64; 2]; 2],
    aux: Option<Vec<[f64; 2]>>,
) -> HomogTensor {
    let mut asymmetry = 0.0f64;
    let mut m = SymMat::zero(dim);
    for i in 0..dim {
        for j in 0..dim {
            if j >= i {
                m.set_sym(i, j, 0.5 * (raw[i][j] + raw[j][i]));
            }
            asymmetry = asymmetry.max((raw[i][j] - raw[j][i]).abs());
        }
    }
    HomogTensor {
        provenance,
        n,
        tol,
        matrix: m,
        asymmetry,
        aux_flux_mean: aux,
    }
}

/// Largest absolute entry difference between two tensors of equal
/// dimension.
pub fn entry_distance(a: &SymMat, b: &SymMat) -> f64 {
    let mut d = 0.0f64;
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            d = d.max((a.get(i, j) - b.get(i, j)).abs());
        }
    }
    d
}

fn unit(dim: usize, k: usize) -> [f64; 2] {
    let mut e = [0.0; 2];
    if k < dim {
        e[k] = 1.0;
    }
    e
}

/// mean over nodes of field (grad_r + e_r) . (grad_l + e_l).
fn energy_entry(
    field: &CoefficientField,
    right: &CorrectorField,
    e_r: [f64; 2],
    left: &CorrectorField,
    e_l: [f64; 2],
) -> f64 {
    let len = field.grid().len();
    let mut acc = 0.0;
    for j in 0..len {
        let vr = [right.grad[j][0] + e_r[0], right.grad[j][1] + e_r[1]];
        let vl = [left.grad[j][0] + e_l[0], left.grad[j][1] + e_l[1]];
        let f = field.value(j).matvec(vr);
        acc += f[0] * vl[0] + f[1] * vl[1];
    }
    acc / len as f64
}

fn check_same_grid(field: &CoefficientField, set: &CorrectorSet) -> Result<()> {
    field.grid().same_as(&set.grid)
}

/// The homogenized tensor of `field` from its own correctors: entries
/// mean(A (grad chi_k + e_k) . (grad chi_j + e_j)). With the B field and
/// its correctors this yields the classical B*.
pub fn assemble_homogenized(
    field: &CoefficientField,
    correctors: &CorrectorSet,
    provenance: Provenance,
) -> Result<HomogTensor> {
    check_same_grid(field, correctors)?;
    let dim = field.grid().dim();
    let mut raw = [[0.0; 2]; 2];
    for k in 0..dim {
        for j in 0..dim {
            raw[j][k] = energy_entry(
                field,
                correctors.field(k + 1),
                unit(dim, k),
                correctors.field(j + 1),
                unit(dim, j),
            );
        }
    }
    Ok(finish(
        provenance,
        field.grid().n(),
        correctors.tol,
        dim,
        raw,
        None,
    ))
}

/// Energy form of the interaction tensor: entries
/// mean(B (grad chi_k + e_k) . (grad chi_j + e_j)) with the A correctors.
pub fn assemble_bsharp_energy(
    field_b: &CoefficientField,
    chi: &CorrectorSet,
) -> Result<HomogTensor> {
    check_same_grid(field_b, chi)?;
    let dim = field_b.grid().dim();
    let mut raw = [[0.0; 2]; 2];
    for k in 0..dim {
        for j in 0..dim {
            raw[j][k] = energy_entry(
                field_b,
                chi.field(k + 1),
                unit(dim, k),
                chi.field(j + 1),
                unit(dim, j),
            );
        }
    }
    Ok(finish(
        Provenance::BsharpEnergy,
        field_b.grid().n(),
        chi.tol,
        dim,
        raw,
        None,
    ))
}

/// Flux form: column k is mean(B (grad chi_k + e_k) - A grad psi_k). The
/// auxiliary constant flux mean(A grad psi_k - B (grad chi_k + e_k)) is
/// stored alongside.
pub fn assemble_bsharp_flux(
    field_a: &CoefficientField,
    field_b: &CoefficientField,
    chi: &CorrectorSet,
    psi: &CorrectorSet,
) -> Result<HomogTensor> {
    field_a.grid().same_as(&field_b.grid())?;
    check_same_grid(field_a, chi)?;
    check_same_grid(field_a, psi)?;
    let dim = field_a.grid().dim();
    let len = field_a.grid().len();
    for k in 1..=dim {
        let res = psi.field(k).residual;
        if res > psi.tol * 10.0 + 1e-13 {
            return Err(Error::InvalidSpec(format!(
                "coupling corrector {k} is stale: residual {res:.3e} exceeds tolerance {:.1e}",
                psi.tol
            )));
        }
    }
    let mut raw = [[0.0; 2]; 2];
    let mut aux = Vec::with_capacity(dim);
    for k in 0..dim {
        let e = unit(dim, k);
        let chi_k = chi.field(k + 1);
        let psi_k = psi.field(k + 1);
        let mut col = [0.0; 2];
        for j in 0..len {
            let vc = [chi_k.grad[j][0] + e[0], chi_k.grad[j][1] + e[1]];
            let fb = field_b.value(j).matvec(vc);
            let fa = field_a.value(j).matvec(psi_k.grad[j]);
            col[0] += fb[0] - fa[0];
            col[1] += fb[1] - fa[1];
        }
        col[0] /= len as f64;
        col[1] /= len as f64;
        for j in 0..dim {
            raw[j][k] = col[j];
        }
        aux.push([-col[0], -col[1]]);
    }
    Ok(finish(
        Provenance::BsharpFlux,
        field_a.grid().n(),
        psi.tol,
        dim,
        raw,
        Some(aux),
    ))
}

/// Perturbation form: B* plus mean(B grad(chi_k - zeta_k) . grad(chi_j -
/// zeta_j)).
pub fn assemble_bsharp_perturbation(
    field_b: &CoefficientField,
    chi: &CorrectorSet,
    zeta: &CorrectorSet,
    bstar: &HomogTensor,
) -> Result<HomogTensor> {
    check_same_grid(field_b, chi)?;
    check_same_grid(field_b, zeta)?;
    let dim = field_b.grid().dim();
    let len = field_b.grid().len();
    let mut raw = [[0.0; 2]; 2];
    let diff: Vec<Vec<[f64; 2]>> = (1..=dim)
        .map(|k| {
            let c = chi.field(k);
            let z = zeta.field(k);
            (0..len)
                .map(|j| {
                    [
                        c.grad[j][0] - z.grad[j][0],
                        c.grad[j][1] - z.grad[j][1],
                    ]
                })
                .collect()
        })
        .collect();
    for k in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for node in 0..len {
                let f = field_b.value(node).matvec(diff[k][node]);
                acc += f[0] * diff[j][node][0] + f[1] * diff[j][node][1];
            }
            raw[j][k] = bstar.matrix.get(j, k) + acc / len as f64;
        }
    }
    Ok(finish(
        Provenance::BsharpPerturbation,
        field_b.grid().n(),
        chi.tol,
        dim,
        raw,
        None,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoScaleMode {
    TRatio,
    SRatio,
}

/// Interaction tensor for coefficient pairs oscillating at commensurate
/// but different periods.
///
/// t-ratio: the B profile is composed as b(t y) and sampled exactly onto
/// the corrector grid. s-ratio: the correctors are solved on their own
/// commensurate grid and composed as chi(s y); the gradient is resampled
/// as a field, not re-differentiated.
/// Lattice shifts realizing the translates of the fast coordinate over the
/// common period cell: for factor p/q the composed integrand is q-periodic,
/// and each unit-cell translate c advances the source argument by p c / q,
/// an exact source-lattice shift whenever the resample itself is exact.
fn translate_shifts(n_src: usize, factor: Rational64, dim: usize) -> Result<Vec<[usize; 2]>> {
    let p = *factor.numer();
    let q = *factor.denom();
    let prod = n_src as i64 * p;
    if prod % q != 0 {
        return Err(Error::UnsupportedFactor(format!(
            "source resolution {n_src} does not carry the translates of factor {factor}"
        )));
    }
    let shift = (prod / q).rem_euclid(n_src as i64) as usize;
    let reps = q as usize;
    let mut out = Vec::with_capacity(reps.pow(dim as u32));
    if dim == 1 {
        for c in 0..reps {
            out.push([(shift * c) % n_src, 0]);
        }
    } else {
        for c0 in 0..reps {
            for c1 in 0..reps {
                out.push([(shift * c0) % n_src, (shift * c1) % n_src]);
            }
        }
    }
    Ok(out)
}

fn rolled_values<T: Copy>(grid: Grid, values: &[T], delta: [usize; 2]) -> Vec<T> {
    if delta[..grid.dim()].iter().all(|d| *d == 0) {
        return values.to_vec();
    }
    let n = grid.n();
    (0..grid.len())
        .map(|flat| {
            let c = grid.coords(flat);
            let mut s = [0usize; 2];
            for d in 0..grid.dim() {
                s[d] = (c[d] + delta[d]) % n;
            }
            values[grid.flat(s)]
        })
        .collect()
}

pub fn assemble_bsharp_twoscale(
    spec_a: &PresetSpec,
    spec_b: &PresetSpec,
    mode: TwoScaleMode,
    factor: Rational64,
    dim: usize,
    n: usize,
    cfg: &SolverConfig,
) -> Result<HomogTensor> {
    if factor <= Rational64::new(0, 1) {
        return Err(Error::UnsupportedFactor(format!(
            "two-scale factor must be positive, got {factor}"
        )));
    }
    match mode {
        TwoScaleMode::TRatio => {
            let field_a = build_field(spec_a, dim, n)?;
            let chi = solve_corrector_set(&field_a, cfg)?;
            let n_b = if factor == Rational64::new(1, 1) {
                n
            } else {
                compatible_source_resolution(factor, n)?
            };
            let field_b = build_field(spec_b, dim, n_b)?;
            // The corrector factor is unit periodic, so the mean over the
            // common period reduces to averaging b over its translates.
            let shifts = translate_shifts(n_b, factor, dim)?;
            let mut avg: Vec<SymMat> = vec![SymMat::zero(dim); field_a.grid().len()];
            for delta in &shifts {
                let rolled = rolled_values(field_b.grid(), field_b.values(), *delta);
                let shifted = CoefficientField::from_values(field_b.grid(), rolled)?;
                let composed = resample_periodic(&shifted, factor, field_a.grid())?;
                for (acc, v) in avg.iter_mut().zip(composed.values()) {
                    *acc = acc.add(v);
                }
            }
            let w = 1.0 / shifts.len() as f64;
            for acc in avg.iter_mut() {
                *acc = acc.scale(w);
            }
            let composed = CoefficientField::from_values(field_a.grid(), avg)?;
            let mut out = assemble_bsharp_energy(&composed, &chi)?;
            out.provenance = Provenance::BsharpTwoscaleT;
            Ok(out)
        }
        TwoScaleMode::SRatio => {
            let n_a = if factor == Rational64::new(1, 1) {
                n
            } else {
                compatible_source_resolution(factor, n)?
            };
            let field_a = build_field(spec_a, dim, n_a)?;
            let chi = solve_corrector_set(&field_a, cfg)?;
            let field_b = build_field(spec_b, dim, n)?;
            let target = field_b.grid();
            // The gradient products enter the integrand nonlinearly, so the
            // common-period mean averages the assembled matrices of the
            // corrector translates, not the correctors.
            let shifts = translate_shifts(n_a, factor, dim)?;
            let mut matrix = SymMat::zero(dim);
            let mut asymmetry = 0.0f64;
            let mut out: Option<HomogTensor> = None;
            for delta in &shifts {
                let composed_fields: Vec<CorrectorField> = chi
                    .fields
                    .iter()
                    .map(|f| {
                        let scalar = rolled_values(chi.grid, &f.scalar, *delta);
                        let grad = rolled_values(chi.grid, &f.grad, *delta);
                        Ok(CorrectorField {
                            scalar: resample_values(chi.grid, &scalar, factor, target)?,
                            grad: resample_values(chi.grid, &grad, factor, target)?,
                            residual: f.residual,
                            iters: f.iters,
                        })
                    })
                    .collect::<Result<_>>()?;
                let composed = CorrectorSet {
                    grid: target,
                    scheme: chi.scheme,
                    tol: chi.tol,
                    fields: composed_fields,
                };
                let one = assemble_bsharp_energy(&field_b, &composed)?;
                matrix = matrix.add(&one.matrix);
                asymmetry = asymmetry.max(one.asymmetry);
                out = Some(one);
            }
            let mut out = out.expect("translate set is never empty");
            out.matrix = matrix.scale(1.0 / shifts.len() as f64);
            out.asymmetry = asymmetry;
            out.provenance = Provenance::BsharpTwoscaleS;
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundLink {
    pub name: String,
    pub min_eig: f64,
    pub pass: bool,
}

/// The six consecutive positive-semidefinite comparisons of the bound
/// chain, with the two averaged matrices they involve.
#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub b_under: Vec<Vec<f64>>,
    pub a_mean: Vec<Vec<f64>>,
    pub links: Vec<BoundLink>,
    pub pass: bool,
}

/// Check b1 I <= inv(mean(B^-1)) <= B* <= B# <= (b2/a1) A* <= (b2/a1)
/// mean(A) <= b2 (a2/a1) I in the positive-semidefinite order.
#[allow(clippy::too_many_arguments)]
pub fn check_bounds(
    field_a: &CoefficientField,
    field_b: &CoefficientField,
    astar: &HomogTensor,
    bstar: &HomogTensor,
    bsharp: &HomogTensor,
    a1: f64,
    a2: f64,
    b1: f64,
    b2: f64,
) -> Result<BoundsReport> {
    let dim = field_a.grid().dim();
    let ident = SymMat::identity(dim);
    let b_under = field_b.mean_of_inverses()?.inverse()?;
    let a_mean = field_a.mean();
    let factor = b2 / a1;
    let diffs: Vec<(String, SymMat)> = vec![
        (
            format!("b1 I <= inv(mean(B^-1)) with b1={b1}"),
            b_under.add(&ident.scale(-b1)),
        ),
        (
            "inv(mean(B^-1)) <= Bstar".into(),
            bstar.matrix.add(&b_under.scale(-1.0)),
        ),
        (
            "Bstar <= Bsharp".into(),
            bsharp.matrix.add(&bstar.matrix.scale(-1.0)),
        ),
        (
            format!("Bsharp <= (b2/a1) Astar with b2/a1={factor}"),
            astar.matrix.scale(factor).add(&bsharp.matrix.scale(-1.0)),
        ),
        (
            "(b2/a1) Astar <= (b2/a1) mean(A)".into(),
            a_mean.add(&astar.matrix.scale(-1.0)).scale(factor),
        ),
        (
            format!("(b2/a1) mean(A) <= b2 (a2/a1) I with a2={a2}"),
            ident.scale(b2 * a2 / a1).add(&a_mean.scale(-factor)),
        ),
    ];
    let links: Vec<BoundLink> = diffs
        .into_iter()
        .map(|(name, d)| {
            let min_eig = d.min_eig();
            BoundLink {
                name,
                min_eig,
                pass: min_eig >= -PSD_TOL,
            }
        })
        .collect();
    let pass = links.iter().all(|l| l.pass);
    Ok(BoundsReport {
        b_under: b_under.rows_vec(),
        a_mean: a_mean.rows_vec(),
        links,
        pass,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LagrangianValue {
    /// b(chi_l + l.y, chi_l + l.y) + a(chi_l + l.y, psi_l); equals the
    /// quadratic form of the interaction tensor at l.
    pub value: f64,
    /// a(chi_l + l.y, psi_l) alone; vanishes up to solver residual.
    pub cross_term: f64,
}

/// Evaluate the saddle functional at the corrector pair for direction
/// lambda.
pub fn lagrangian_value(
    field_a: &CoefficientField,
    field_b: &CoefficientField,
    lambda: [f64; 2],
    chi: &CorrectorSet,
    psi: &CorrectorSet,
) -> Result<LagrangianValue> {
    field_a.grid().same_as(&field_b.grid())?;
    check_same_grid(field_a, chi)?;
    check_same_grid(field_a, psi)?;
    let dim = field_a.grid().dim();
    let len = field_a.grid().len();
    let mut value = 0.0;
    let mut cross = 0.0;
    for node in 0..len {
        let mut gc = [lambda[0], lambda[1]];
        let mut gp = [0.0, 0.0];
        for k in 0..dim {
            for d in 0..dim {
                gc[d] += lambda[k] * chi.field(k + 1).grad[node][d];
                gp[d] += lambda[k] * psi.field(k + 1).grad[node][d];
            }
        }
        let fb = field_b.value(node).matvec(gc);
        let fa = field_a.value(node).matvec(gc);
        value += fb[0] * gc[0] + fb[1] * gc[1];
        cross += fa[0] * gp[0] + fa[1] * gp[1];
    }
    value /= len as f64;
    cross /= len as f64;
    Ok(LagrangianValue {
        value: value + cross,
        cross_term: cross,
    })
}
