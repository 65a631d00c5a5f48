//! Pipeline orchestration: builds fields and correctors once per run,
//! dispatches the selected verification suites in dependency order, and
//! assembles the report. Timing goes to stderr so reports stay reproducible.

use std::time::Instant;

use num_complex::Complex64;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bloch::{
    bloch_vs_fourier, first_band_dominance, gradient_at_zero, hessian_at_zero, nu1,
    sample_global, smallest_bloch_mode, BlochBasis,
};
use crate::cell_solver::{
    solve_corrector_set, solve_coupling_set, CorrectorSet, Scheme, SolverConfig,
};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{log_log_slope, norm, Grid, TWO_PI};
use crate::homogenize1d::{analytic_1d_limits, flux_convergence, Limits1d, Profile1d};
use crate::matrix::SymMat;
use crate::microstructure::{build_field, CoefficientField};
use crate::report::{
    BlochSection, BoundsSection, CheckEntry, ConvergeSection, DispersionRow, OracleComparison,
    RunReport, TensorEntry, TensorsSection, TransformRow, TransformSection, VariationalRow,
    VariationalSection,
};
use crate::tensors::{
    assemble_bsharp_energy, assemble_bsharp_flux, assemble_bsharp_perturbation,
    assemble_bsharp_twoscale, assemble_homogenized, check_bounds, entry_distance,
    lagrangian_value, HomogTensor, Provenance, PSD_TOL,
};

/// Bounds the verification checks are pinned to. They match the acceptance
/// gate and are part of the report contract, not user configuration.
const TRIPLE_TOL: f64 = 1e-8;
const COLLAPSE_TOL: f64 = 1e-12;
const PROPORTIONAL_TOL: f64 = 1e-10;
const HESSIAN_REL_TOL: f64 = 1e-3;
const GROUND_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-8;
const DERIV_RATIO_MIN: f64 = 1.5;
const DERIV_RATIO_MAX: f64 = 2.5;
const TRANSFORM_TOL: f64 = 1e-10;
const SLOPE_MIN: f64 = 0.9;
const ORACLE_TOL: f64 = 1e-10;
const VARIATIONAL_TOL: f64 = 1e-8;
const PLATEAU_MIN: f64 = 10.0;
const FLOOR_TOL: f64 = 1e-10;

/// Apply the BLOCH_HOMOG_THREADS cap to the global thread pool. Call once
/// at startup; later calls are ignored by the pool builder.
pub fn init_threads() {
    if let Ok(var) = std::env::var("BLOCH_HOMOG_THREADS") {
        match var.trim().parse::<usize>() {
            Ok(k) if k >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build_global();
            }
            _ => eprintln!(
                "warning: BLOCH_HOMOG_THREADS='{var}' is not a positive integer; ignored"
            ),
        }
    }
}

/// Shared per-run state for the pipelines that work on the (A, B) pair.
struct PairWork {
    field_a: CoefficientField,
    field_b: CoefficientField,
    chi: CorrectorSet,
    zeta: CorrectorSet,
    psi: CorrectorSet,
    astar: HomogTensor,
    bstar: HomogTensor,
    bsharp: HomogTensor,
}

fn build_pair(cfg: &RunConfig) -> Result<PairWork> {
    let t0 = Instant::now();
    let field_a = build_field(&cfg.a, cfg.dim, cfg.resolution)?;
    let field_b = build_field(&cfg.b, cfg.dim, cfg.resolution)?;
    field_a.grid().same_as(&field_b.grid())?;
    let chi = solve_corrector_set(&field_a, &cfg.solver)?;
    let zeta = solve_corrector_set(&field_b, &cfg.solver)?;
    let psi = solve_coupling_set(&field_a, &field_b, &chi, &cfg.solver)?;
    let astar = assemble_homogenized(&field_a, &chi, Provenance::Astar)?;
    let bstar = assemble_homogenized(&field_b, &zeta, Provenance::Bstar)?;
    let bsharp = assemble_bsharp_energy(&field_b, &chi)?;
    eprintln!("[time] correctors and tensors: {:.2?}", t0.elapsed());
    Ok(PairWork {
        field_a,
        field_b,
        chi,
        zeta,
        psi,
        astar,
        bstar,
        bsharp,
    })
}

fn max_abs_entry(m: &SymMat) -> f64 {
    let mut v = 0.0f64;
    for i in 0..m.dim() {
        for j in 0..m.dim() {
            v = v.max(m.get(i, j).abs());
        }
    }
    v
}

/// Least-squares proportionality constant c with B close to c A, plus the
/// largest pointwise entry deviation from that multiple.
fn proportionality(field_a: &CoefficientField, field_b: &CoefficientField) -> (f64, f64) {
    let len = field_a.grid().len();
    let dim = field_a.grid().dim();
    let mut tr_a = 0.0;
    let mut tr_b = 0.0;
    for j in 0..len {
        tr_a += field_a.value(j).trace();
        tr_b += field_b.value(j).trace();
    }
    let c = tr_b / tr_a;
    let mut dev = 0.0f64;
    for j in 0..len {
        let a = field_a.value(j);
        let b = field_b.value(j);
        for i in 0..dim {
            for k in 0..dim {
                dev = dev.max((b.get(i, k) - c * a.get(i, k)).abs());
            }
        }
    }
    (c, dev)
}

fn is_constant(field: &CoefficientField) -> bool {
    field.beta() - field.alpha() <= 1e-14 * field.beta().abs().max(1.0)
}

fn run_tensors(cfg: &RunConfig, work: &PairWork) -> Result<TensorsSection> {
    let flux = assemble_bsharp_flux(&work.field_a, &work.field_b, &work.chi, &work.psi)?;
    let pert = assemble_bsharp_perturbation(&work.field_b, &work.chi, &work.zeta, &work.bstar)?;

    let mut entries = vec![
        TensorEntry::from_tensor(&work.astar),
        TensorEntry::from_tensor(&work.bstar),
        TensorEntry::from_tensor(&work.bsharp),
        TensorEntry::from_tensor(&flux),
        TensorEntry::from_tensor(&pert),
    ];

    let mut checks = vec![
        CheckEntry::upper(
            "bsharp-flux-vs-energy",
            entry_distance(&flux.matrix, &work.bsharp.matrix),
            TRIPLE_TOL,
        ),
        CheckEntry::upper(
            "bsharp-perturbation-vs-energy",
            entry_distance(&pert.matrix, &work.bsharp.matrix),
            TRIPLE_TOL,
        ),
    ];

    if is_constant(&work.field_a) {
        let mut chi_norm = 0.0f64;
        for f in &work.chi.fields {
            for v in &f.scalar {
                chi_norm = chi_norm.max(v.abs());
            }
        }
        checks.push(CheckEntry::upper(
            "constant-a-corrector-norm",
            chi_norm,
            COLLAPSE_TOL,
        ));
        checks.push(CheckEntry::upper(
            "constant-a-bsharp-vs-mean-b",
            entry_distance(&work.bsharp.matrix, &work.field_b.mean()),
            COLLAPSE_TOL,
        ));
    }

    let (c, dev) = proportionality(&work.field_a, &work.field_b);
    if dev <= 1e-12 * work.field_b.beta().max(1.0) {
        checks.push(CheckEntry::upper(
            "proportional-bsharp-vs-scaled-astar",
            entry_distance(&work.bsharp.matrix, &work.astar.matrix.scale(c)),
            PROPORTIONAL_TOL,
        ));
        checks.push(CheckEntry::upper(
            "proportional-bstar-vs-scaled-astar",
            entry_distance(&work.bstar.matrix, &work.astar.matrix.scale(c)),
            PROPORTIONAL_TOL,
        ));
    }

    if let Some(ts) = &cfg.two_scale {
        let factor = cfg.factor()?;
        let t0 = Instant::now();
        let two = assemble_bsharp_twoscale(
            &cfg.a,
            &cfg.b,
            ts.mode,
            factor,
            cfg.dim,
            cfg.resolution,
            &cfg.solver,
        )?;
        eprintln!("[time] two-scale assembly: {:.2?}", t0.elapsed());
        if factor == Rational64::from_integer(1) {
            checks.push(CheckEntry::upper(
                "twoscale-unit-factor-vs-energy",
                entry_distance(&two.matrix, &work.bsharp.matrix),
                COLLAPSE_TOL,
            ));
        }
        entries.push(TensorEntry::from_tensor(&two));
    }

    let asym = entries.iter().map(|e| e.asymmetry).fold(0.0, f64::max);
    checks.push(CheckEntry::upper("tensor-asymmetry-max", asym, TRIPLE_TOL));

    Ok(TensorsSection { entries, checks })
}

fn run_bloch(cfg: &RunConfig, work: &PairWork) -> Result<BlochSection> {
    let dim = cfg.dim;
    let h = cfg.fd_step;
    let solver = &cfg.solver;
    let t0 = Instant::now();

    let lam = |eta: [f64; 2]| smallest_bloch_mode(&work.field_a, eta, solver).map(|m| m.eigenvalue);
    let mu = |eta: [f64; 2]| smallest_bloch_mode(&work.field_b, eta, solver).map(|m| m.eigenvalue);
    let nu_f = |eta: [f64; 2]| {
        smallest_bloch_mode(&work.field_a, eta, solver).and_then(|m| nu1(&work.field_b, &m))
    };

    let hess_lam = hessian_at_zero(dim, h, lam)?;
    let hess_mu = hessian_at_zero(dim, h, mu)?;
    let hess_nu = hessian_at_zero(dim, h, nu_f)?;
    eprintln!("[time] spectral Hessians: {:.2?}", t0.elapsed());

    let rel = |hess: &SymMat, target: &SymMat| entry_distance(hess, target) / max_abs_entry(target);
    let mut checks = vec![
        CheckEntry::upper(
            "hessian-lambda1-vs-astar",
            rel(&hess_lam, &work.astar.matrix),
            HESSIAN_REL_TOL,
        ),
        CheckEntry::upper(
            "hessian-mu1-vs-bstar",
            rel(&hess_mu, &work.bstar.matrix),
            HESSIAN_REL_TOL,
        ),
        CheckEntry::upper(
            "hessian-nu1-vs-bsharp",
            rel(&hess_nu, &work.bsharp.matrix),
            HESSIAN_REL_TOL,
        ),
    ];

    let mode0 = smallest_bloch_mode(&work.field_a, [0.0, 0.0], solver)?;
    let lambda0 = mode0.eigenvalue.abs();
    let nu0 = nu1(&work.field_b, &mode0)?.abs();
    let grad_l = gradient_at_zero(dim, h, lam)?;
    let grad_n = gradient_at_zero(dim, h, nu_f)?;
    let grad_l_max = grad_l.iter().take(dim).fold(0.0f64, |m, g| m.max(g.abs()));
    let grad_n_max = grad_n.iter().take(dim).fold(0.0f64, |m, g| m.max(g.abs()));
    checks.push(CheckEntry::upper("ground-lambda1-at-zero", lambda0, GROUND_TOL));
    checks.push(CheckEntry::upper("ground-nu1-at-zero", nu0, GROUND_TOL));
    checks.push(CheckEntry::upper("ground-grad-lambda1", grad_l_max, GRAD_TOL));
    checks.push(CheckEntry::upper("ground-grad-nu1", grad_n_max, GRAD_TOL));

    // Eigenvector derivative against the corrector: the remainder of the
    // first-order expansion shrinks by the step ratio when the derivative
    // matches i chi_k.
    for k in 0..dim {
        let err_at = |step: f64| -> Result<f64> {
            let mut eta = [0.0, 0.0];
            eta[k] = step;
            let mode = smallest_bloch_mode(&work.field_a, eta, solver)?;
            let chi_k = &work.chi.field(k + 1).scalar;
            let diff: Vec<Complex64> = mode
                .eigenvector
                .iter()
                .zip(chi_k)
                .map(|(v, &c)| (v - Complex64::new(1.0, 0.0)) / step - Complex64::new(0.0, c))
                .collect();
            Ok(norm(&diff))
        };
        let coarse = err_at(1e-2)?;
        let fine = err_at(5e-3)?;
        let name = format!("eigenvector-derivative-ratio-{}", k + 1);
        if fine <= 1e-13 {
            checks.push(CheckEntry::upper(
                format!("eigenvector-derivative-floor-{}", k + 1),
                coarse,
                1e-12,
            ));
        } else {
            checks.push(CheckEntry::between(
                name,
                coarse / fine,
                DERIV_RATIO_MIN,
                DERIV_RATIO_MAX,
            ));
        }
    }

    let t1 = Instant::now();
    let samples = cfg.bloch.eta_samples;
    let mut dispersion = Vec::with_capacity(samples);
    for i in 0..samples {
        let frac = i as f64 / (samples - 1) as f64;
        let e1 = -cfg.bloch.eta_max + 2.0 * cfg.bloch.eta_max * frac;
        let eta = [e1, 0.0];
        let mode_a = smallest_bloch_mode(&work.field_a, eta, solver)?;
        let nu = nu1(&work.field_b, &mode_a)?;
        let mode_b = smallest_bloch_mode(&work.field_b, eta, solver)?;
        if mode_a.near_degenerate || mode_b.near_degenerate {
            eprintln!(
                "warning: first band nearly degenerate at eta = ({:.4}, {:.4}); \
                 the dispersion row is a cluster representative",
                eta[0], eta[1]
            );
        }
        dispersion.push(DispersionRow {
            eta,
            lambda1: mode_a.eigenvalue,
            mu1: mode_b.eigenvalue,
            nu1: nu,
        });
    }
    eprintln!("[time] dispersion sweep: {:.2?}", t1.elapsed());

    let min_lambda = dispersion.iter().map(|r| r.lambda1).fold(f64::INFINITY, f64::min);
    checks.push(CheckEntry::lower("dispersion-lambda1-min", min_lambda, -1e-12));
    // nu1 = <B g, g> and lambda1 = <A g, g> share the eigenvector, so
    // nu1 >= (b1/a2) lambda1 holds sample by sample.
    let ratio_floor = work.field_b.alpha() / work.field_a.beta();
    let min_gap = dispersion
        .iter()
        .map(|r| r.nu1 - ratio_floor * r.lambda1)
        .fold(f64::INFINITY, f64::min);
    checks.push(CheckEntry::lower("dispersion-nu1-vs-lambda1", min_gap, -1e-12));

    let n = cfg.resolution;
    Ok(BlochSection {
        hessians: vec![
            TensorEntry::from_matrix("half-hessian-lambda1", n, &hess_lam),
            TensorEntry::from_matrix("half-hessian-mu1", n, &hess_mu),
            TensorEntry::from_matrix("half-hessian-nu1", n, &hess_nu),
        ],
        lambda1_at_zero: mode0.eigenvalue,
        nu1_at_zero: nu0,
        grad_lambda1_max: grad_l_max,
        grad_nu1_max: grad_n_max,
        dispersion,
        checks,
    })
}

fn run_bounds(_cfg: &RunConfig, work: &PairWork) -> Result<BoundsSection> {
    let report = check_bounds(
        &work.field_a,
        &work.field_b,
        &work.astar,
        &work.bstar,
        &work.bsharp,
        work.field_a.alpha(),
        work.field_a.beta(),
        work.field_b.alpha(),
        work.field_b.beta(),
    )?;
    let mut checks: Vec<CheckEntry> = report
        .links
        .iter()
        .map(|l| CheckEntry::lower(l.name.clone(), l.min_eig, -PSD_TOL))
        .collect();

    // The upper chain link is attained exactly when B is a constant
    // multiple of a constant A; record the equality case when it applies.
    let (_, dev) = proportionality(&work.field_a, &work.field_b);
    if dev <= 1e-12 * work.field_b.beta().max(1.0) && is_constant(&work.field_a) {
        let factor = work.field_b.beta() / work.field_a.alpha();
        let diff = work
            .astar
            .matrix
            .scale(factor)
            .add(&work.bsharp.matrix.scale(-1.0));
        checks.push(CheckEntry::upper(
            "tightness-bsharp-vs-upper-link",
            diff.min_eig().abs(),
            PSD_TOL,
        ));
    }
    Ok(BoundsSection { report, checks })
}

fn run_transform(cfg: &RunConfig) -> Result<TransformSection> {
    let t0 = Instant::now();
    let dim = cfg.dim;
    let n_t = cfg.transform_resolution();
    let field = build_field(&cfg.a, dim, n_t)?;
    let g = move |x: [f64; 2]| {
        let mut v = (TWO_PI * x[0]).sin();
        if dim == 2 {
            v += 0.4 * (TWO_PI * x[1]).cos();
        }
        v
    };

    let cells0 = cfg.bloch.cells[0];
    let basis = BlochBasis::new(&field, cells0)?;
    let samples = sample_global(field.grid(), cells0, g);
    let dec = basis.decompose(&samples)?;
    let parseval_residual = dec.parseval_residual();
    let back = basis.reconstruct(&dec)?;
    let roundtrip_error = samples
        .iter()
        .zip(&back)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);

    let mut checks = vec![
        CheckEntry::upper("parseval-residual", parseval_residual, TRANSFORM_TOL),
        CheckEntry::upper("roundtrip-max-error", roundtrip_error, TRANSFORM_TOL),
    ];

    let dom_rows = first_band_dominance(&field, g, &cfg.bloch.cells)?;
    let dominance: Vec<TransformRow> = dom_rows
        .iter()
        .map(|r| TransformRow {
            cells: r.cells,
            epsilon: r.epsilon,
            value: r.remainder_rel,
        })
        .collect();
    let max_rem = dominance.iter().map(|r| r.value).fold(0.0, f64::max);
    if max_rem < 1e-5 {
        // The remainder sits at the cancellation floor, so there is no
        // decay left to measure; the floor itself is the check.
        checks.push(CheckEntry::upper("dominance-floor", max_rem, 1e-5));
    } else {
        let pts: Vec<(f64, f64)> = dominance.iter().map(|r| (r.epsilon, r.value)).collect();
        checks.push(CheckEntry::lower(
            "dominance-slope",
            log_log_slope(&pts)?,
            SLOPE_MIN,
        ));
    }

    let f_cells: Vec<usize> = cfg.bloch.cells.iter().copied().filter(|&c| c >= 16).collect();
    let four_rows = bloch_vs_fourier(&field, g, &f_cells)?;
    let fourier: Vec<TransformRow> = four_rows
        .iter()
        .map(|r| TransformRow {
            cells: r.cells,
            epsilon: r.epsilon,
            value: r.max_error,
        })
        .collect();
    let max_err = fourier.iter().map(|r| r.value).fold(0.0, f64::max);
    if max_err < FLOOR_TOL {
        checks.push(CheckEntry::upper("first-coefficient-floor", max_err, FLOOR_TOL));
    } else {
        let pts: Vec<(f64, f64)> = fourier.iter().map(|r| (r.epsilon, r.value)).collect();
        checks.push(CheckEntry::lower(
            "first-coefficient-slope",
            log_log_slope(&pts)?,
            SLOPE_MIN,
        ));
    }
    eprintln!("[time] transform sweeps: {:.2?}", t0.elapsed());

    Ok(TransformSection {
        parseval_residual,
        roundtrip_error,
        dominance,
        fourier,
        checks,
    })
}

fn gcd64(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.abs()
}

fn lcm64(a: i64, b: i64) -> Result<i64> {
    let g = gcd64(a, b);
    (a / g)
        .checked_mul(b)
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::Config("profile denominators overflow the oracle grid".into()))
}

/// Solve the cell problems for the 1D profiles on a grid aligned with
/// every breakpoint, so the discrete assemblies reproduce the analytic
/// limits to solver accuracy.
fn oracle_comparison(
    a: &Profile1d,
    b: &Profile1d,
    t: Rational64,
    tol: f64,
) -> Result<(OracleComparison, Vec<CheckEntry>)> {
    let analytic = analytic_1d_limits(a, b, t)?;
    let p = *t.numer();
    let q = *t.denom();

    let mut align = 1i64;
    for br in a.breakpoints() {
        align = lcm64(align, *br.denom())?;
    }
    let mut b_den = 1i64;
    for br in b.breakpoints() {
        b_den = lcm64(b_den, *br.denom())?;
    }
    // Composed breakpoints of b(t y + p c / q) have denominators dividing
    // p times the b denominators.
    align = lcm64(align, p.checked_mul(b_den).ok_or_else(|| {
        Error::Config("two-scale factor and profile denominators overflow".into())
    })?)?;
    let target = 512i64;
    let r = align * ((target + align - 1) / align);
    if r > (1 << 20) {
        return Err(Error::Config(format!(
            "oracle grid of {r} cells exceeds the cap; simplify the profiles"
        )));
    }
    let r = r as usize;
    let grid = Grid::new(1, r)?;

    let sample = |profile: &Profile1d, i: usize| -> f64 {
        profile.value_at(Rational64::new(2 * i as i64 + 1, 2 * r as i64))
    };
    let a_vals: Vec<SymMat> = (0..r).map(|i| SymMat::scalar(1, sample(a, i))).collect();
    let b_vals: Vec<SymMat> = (0..r).map(|i| SymMat::scalar(1, sample(b, i))).collect();
    let composed: Vec<SymMat> = (0..r)
        .map(|i| {
            let y = Rational64::new(2 * i as i64 + 1, 2 * r as i64);
            let mut acc = 0.0;
            for c in 0..q {
                acc += b.value_at(t * y + Rational64::new(p * c, q));
            }
            SymMat::scalar(1, acc / q as f64)
        })
        .collect();

    let field_a = CoefficientField::from_values(grid, a_vals)?;
    let field_b = CoefficientField::from_values(grid, b_vals)?;
    let field_comp = CoefficientField::from_values(grid, composed)?;

    let solver = SolverConfig {
        tol: tol.min(1e-12),
        scheme: Scheme::FdHarmonic,
        ..SolverConfig::default()
    };
    let chi = solve_corrector_set(&field_a, &solver)?;
    let zeta = solve_corrector_set(&field_b, &solver)?;
    let astar = assemble_homogenized(&field_a, &chi, Provenance::Astar)?;
    let bstar = assemble_homogenized(&field_b, &zeta, Provenance::Bstar)?;
    let bsharp = assemble_bsharp_energy(&field_comp, &chi)?;

    let assembled = Limits1d {
        a_star: astar.matrix.get(0, 0),
        b_star: bstar.matrix.get(0, 0),
        b_sharp: bsharp.matrix.get(0, 0),
    };
    let checks = vec![
        CheckEntry::upper(
            "oracle-astar-agreement",
            (assembled.a_star - analytic.a_star).abs(),
            ORACLE_TOL,
        ),
        CheckEntry::upper(
            "oracle-bstar-agreement",
            (assembled.b_star - analytic.b_star).abs(),
            ORACLE_TOL,
        ),
        CheckEntry::upper(
            "oracle-bsharp-agreement",
            (assembled.b_sharp - analytic.b_sharp).abs(),
            ORACLE_TOL,
        ),
    ];
    Ok((
        OracleComparison {
            resolution: r,
            analytic,
            assembled,
        },
        checks,
    ))
}

fn run_converge(cfg: &RunConfig) -> Result<ConvergeSection> {
    let eps = cfg
        .epsilon
        .as_ref()
        .expect("validation guarantees the epsilon block");
    let a = eps.profile_a.to_profile()?;
    let b = eps.profile_b.to_profile()?;
    let t = cfg.factor()?;
    let src = eps.source;

    let t0 = Instant::now();
    let table = flux_convergence(&a, &b, t, |x| src.eval(x), &eps.periods, eps.per_cell)?;
    eprintln!("[time] epsilon sweep: {:.2?}", t0.elapsed());

    let (oracle, mut checks) = oracle_comparison(&a, &b, t, cfg.solver.tol)?;

    let slope_check = |name: &str, slope: Option<f64>, errs: &dyn Fn() -> f64| match slope {
        Some(s) => CheckEntry::lower(name.to_string(), s, SLOPE_MIN),
        None => CheckEntry::upper(format!("{name}-floor"), errs(), FLOOR_TOL),
    };
    let max_err = |get: fn(&crate::homogenize1d::ConvergenceRow) -> f64| {
        let table = &table;
        move || table.rows.iter().map(get).fold(0.0, f64::max)
    };
    checks.push(slope_check(
        "state-antiderivative-slope",
        table.slope_u,
        &max_err(|r| r.err_u),
    ));
    checks.push(slope_check(
        "flux-antiderivative-slope",
        table.slope_sigma,
        &max_err(|r| r.err_sigma),
    ));
    checks.push(slope_check(
        "adjoint-flux-antiderivative-slope",
        table.slope_z,
        &max_err(|r| r.err_z),
    ));

    let gap = (table.limits.b_sharp - table.limits.b_star).abs();
    if gap > 1e-12 {
        match table.control_plateau_ratio {
            Some(r) => checks.push(CheckEntry::lower("control-plateau-ratio", r, PLATEAU_MIN)),
            None => checks.push(CheckEntry::upper(
                "control-plateau-degenerate",
                max_err(|r| r.err_z_control)(),
                FLOOR_TOL,
            )),
        }
    } else {
        // With b# equal to b* the control flux coincides with the limit
        // flux and there is no plateau to measure.
        checks.push(CheckEntry::upper("control-gap-degenerate", gap, 1e-12));
    }

    Ok(ConvergeSection {
        table,
        oracle,
        checks,
    })
}

fn quad_form(m: &SymMat, lambda: [f64; 2], dim: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            acc += m.get(i, j) * lambda[i] * lambda[j];
        }
    }
    acc
}

fn run_variational(cfg: &RunConfig, work: &PairWork) -> Result<VariationalSection> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.variational.seed);
    let dim = cfg.dim;
    let mut rows = Vec::with_capacity(cfg.variational.count);
    let mut max_mismatch = 0.0f64;
    let mut max_cross = 0.0f64;
    for _ in 0..cfg.variational.count {
        let mut lambda = [0.0, 0.0];
        for l in lambda.iter_mut().take(dim) {
            *l = rng.random_range(-1.0..=1.0);
        }
        let lv = lagrangian_value(&work.field_a, &work.field_b, lambda, &work.chi, &work.psi)?;
        let quadratic = quad_form(&work.bsharp.matrix, lambda, dim);
        max_mismatch = max_mismatch.max((lv.value - quadratic).abs());
        max_cross = max_cross.max(lv.cross_term.abs());
        rows.push(VariationalRow {
            lambda,
            value: lv.value,
            quadratic,
            cross: lv.cross_term,
        });
    }
    let checks = vec![
        CheckEntry::upper("variational-max-mismatch", max_mismatch, VARIATIONAL_TOL),
        CheckEntry::upper("variational-max-cross", max_cross, VARIATIONAL_TOL),
    ];
    Ok(VariationalSection { rows, checks })
}

/// Execute the configured pipelines and assemble the report. The caller
/// decides whether and where to emit artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let mode = cfg
        .mode
        .ok_or_else(|| Error::Config("run configuration does not select a mode".into()))?;
    cfg.validate(mode)?;
    let wants = |part: Mode| mode == part || mode == Mode::All;

    let mut report = RunReport::new(mode, cfg.clone());
    let needs_pair = wants(Mode::Tensors)
        || wants(Mode::BlochVerify)
        || wants(Mode::Bounds)
        || wants(Mode::Variational);
    let work = if needs_pair {
        Some(build_pair(cfg)?)
    } else {
        None
    };
    let work_ref = || work.as_ref().expect("pair work built for this mode");

    if wants(Mode::Tensors) {
        report.tensors = Some(run_tensors(cfg, work_ref())?);
    }
    if wants(Mode::BlochVerify) {
        report.bloch = Some(run_bloch(cfg, work_ref())?);
    }
    if wants(Mode::Bounds) {
        report.bounds = Some(run_bounds(cfg, work_ref())?);
    }
    if wants(Mode::TransformCheck) {
        report.transform = Some(run_transform(cfg)?);
    }
    if wants(Mode::Converge1d) && cfg.epsilon.is_some() {
        report.converge_1d = Some(run_converge(cfg)?);
    }
    if wants(Mode::Variational) {
        report.variational = Some(run_variational(cfg, work_ref())?);
    }
    report.finalize();
    Ok(report)
}
