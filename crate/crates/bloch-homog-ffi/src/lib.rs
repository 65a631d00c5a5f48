//! C ABI for the workbench: opaque field handles, tensor assembly, and a
//! JSON-in JSON-out pipeline runner.
//!
//! Every entry point returns one of the `BH_*` status codes, which match
//! the CLI exit codes; any code other than `BH_OK` leaves a diagnostic
//! readable through `bh_last_error` on the same thread. Pointer arguments
//! are never retained past the call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bloch_homog::cell_solver::{solve_corrector_set, Scheme, SolverConfig};
use bloch_homog::config::{Mode, RunConfig};
use bloch_homog::microstructure::{build_field, CoefficientField, PresetSpec};
use bloch_homog::tensors::{assemble_bsharp_energy, assemble_homogenized, Provenance};
use bloch_homog::{runner, Error};

/// Success.
pub const BH_OK: i32 = 0;
/// A panic was caught at the language boundary; treat outputs as invalid.
pub const BH_ERR_PANIC: i32 = 1;
/// The run completed but at least one check failed.
pub const BH_ERR_CHECK_FAILED: i32 = 2;
/// Invalid input: null pointer, bad JSON, unknown mode, or a value that
/// fails validation.
pub const BH_ERR_CONFIG: i32 = 3;
/// An iterative solve stopped before reaching its tolerance.
pub const BH_ERR_NON_CONVERGENCE: i32 = 4;

/// Discretization selector for the solver entry points.
#[repr(C)]
#[derive(Clone, Copy)]
pub enum BhScheme {
    /// Fourier-Galerkin collocation, one- or two-dimensional grids.
    BhSchemeSpectral = 0,
    /// Face-harmonic finite differences, one-dimensional grids only.
    BhSchemeFdHarmonic = 1,
}

impl From<BhScheme> for Scheme {
    fn from(s: BhScheme) -> Scheme {
        match s {
            BhScheme::BhSchemeSpectral => Scheme::FourierGalerkin,
            BhScheme::BhSchemeFdHarmonic => Scheme::FdHarmonic,
        }
    }
}

/// Opaque sampled coefficient field on the unit torus.
pub struct BhField {
    inner: CoefficientField,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean: String = msg
        .chars()
        .map(|c| if c == '\0' { ' ' } else { c })
        .collect();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap());
}

fn fail(e: &Error) -> i32 {
    set_last_error(&e.to_string());
    e.exit_code()
}

fn fail_config(msg: &str) -> i32 {
    set_last_error(msg);
    BH_ERR_CONFIG
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_last_error("internal panic crossed the language boundary");
            BH_ERR_PANIC
        }
    }
}

fn solver_config(scheme: BhScheme, tol: f64) -> SolverConfig {
    SolverConfig {
        tol,
        scheme: scheme.into(),
        ..SolverConfig::default()
    }
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Diagnostic for the most recent failing call on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bh_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Build a coefficient field from a preset description in JSON, for
/// example `{"kind":"laminate","phases":[1.0,4.0],"fraction":0.5}`.
///
/// # Safety
/// `preset_json` must be a valid NUL-terminated string and `out_field` a
/// valid pointer. On `BH_OK` the caller owns the new handle and must
/// release it with `bh_field_free`.
#[no_mangle]
pub unsafe extern "C" fn bh_field_build_json(
    preset_json: *const c_char,
    dim: usize,
    resolution: usize,
    out_field: *mut *mut BhField,
) -> i32 {
    guard(|| {
        if preset_json.is_null() || out_field.is_null() {
            return fail_config("null pointer argument");
        }
        let text = match unsafe { CStr::from_ptr(preset_json) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail_config("preset JSON is not valid UTF-8"),
        };
        let spec: PresetSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail_config(&format!("preset JSON: {e}")),
        };
        match build_field(&spec, dim, resolution) {
            Ok(f) => {
                unsafe { *out_field = Box::into_raw(Box::new(BhField { inner: f })) };
                BH_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a field handle. A null handle is a no-op.
///
/// # Safety
/// `field` must be null or a handle from `bh_field_build_json` that has
/// not been freed already.
#[no_mangle]
pub unsafe extern "C" fn bh_field_free(field: *mut BhField) {
    if !field.is_null() {
        drop(unsafe { Box::from_raw(field) });
    }
}

/// Spatial dimension of a field handle, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bh_field_dim(field: *const BhField) -> usize {
    if field.is_null() {
        return 0;
    }
    unsafe { &*field }.inner.grid().dim()
}

fn write_matrix(
    out_entries: *mut f64,
    m: &bloch_homog::matrix::SymMat,
) {
    let dim = m.dim();
    for i in 0..dim {
        for j in 0..dim {
            unsafe { *out_entries.add(i * dim + j) = m.get(i, j) };
        }
    }
}

/// Homogenized tensor of one field: solves the cell correctors at `tol`
/// and writes the dim x dim entries row-major into `out_entries`.
///
/// # Safety
/// `field` must be a live handle and `out_entries` must point to at least
/// dim*dim writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bh_homogenized(
    field: *const BhField,
    scheme: BhScheme,
    tol: f64,
    out_entries: *mut f64,
) -> i32 {
    guard(|| {
        if field.is_null() || out_entries.is_null() {
            return fail_config("null pointer argument");
        }
        let f = &unsafe { &*field }.inner;
        let cfg = solver_config(scheme, tol);
        let chi = match solve_corrector_set(f, &cfg) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        match assemble_homogenized(f, &chi, Provenance::Astar) {
            Ok(t) => {
                write_matrix(out_entries, &t.matrix);
                BH_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Microstructure-interaction tensor of a pair on one grid: solves the
/// correctors of `field_a` at `tol` and evaluates the energy form of
/// `field_b` on them, writing dim x dim entries row-major.
///
/// # Safety
/// Both handles must be live and `out_entries` must point to at least
/// dim*dim writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bh_bsharp_energy(
    field_a: *const BhField,
    field_b: *const BhField,
    scheme: BhScheme,
    tol: f64,
    out_entries: *mut f64,
) -> i32 {
    guard(|| {
        if field_a.is_null() || field_b.is_null() || out_entries.is_null() {
            return fail_config("null pointer argument");
        }
        let fa = &unsafe { &*field_a }.inner;
        let fb = &unsafe { &*field_b }.inner;
        let cfg = solver_config(scheme, tol);
        let chi = match solve_corrector_set(fa, &cfg) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        match assemble_bsharp_energy(fb, &chi) {
            Ok(t) => {
                write_matrix(out_entries, &t.matrix);
                BH_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Run a full pipeline in memory. `config_json` is the same document the
/// CLI reads and `mode` the same mode word (tensors, bloch-verify, bounds,
/// transform-check, converge-1d, variational, all). On `BH_OK` or
/// `BH_ERR_CHECK_FAILED` the full report is stored as a JSON string in
/// `*out_report_json`; release it with `bh_string_free`. No files are
/// written.
///
/// # Safety
/// `config_json` and `mode` must be valid NUL-terminated strings and
/// `out_report_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bh_run_json(
    config_json: *const c_char,
    mode: *const c_char,
    out_report_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        if config_json.is_null() || mode.is_null() || out_report_json.is_null() {
            return fail_config("null pointer argument");
        }
        let cfg_text = match unsafe { CStr::from_ptr(config_json) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail_config("config JSON is not valid UTF-8"),
        };
        let mode_text = match unsafe { CStr::from_ptr(mode) }.to_str() {
            Ok(t) => t,
            Err(_) => return fail_config("mode is not valid UTF-8"),
        };
        let mode = match Mode::from_arg(mode_text) {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
        let mut cfg: RunConfig = match serde_json::from_str(cfg_text) {
            Ok(c) => c,
            Err(e) => return fail_config(&format!("config JSON: {e}")),
        };
        cfg.mode = Some(mode);
        if let Err(e) = cfg.validate(mode) {
            return fail(&e);
        }
        runner::init_threads();
        let report = match runner::run(&cfg) {
            Ok(r) => r,
            Err(e) => return fail(&e),
        };
        let text = match serde_json::to_string_pretty(&report) {
            Ok(t) => t,
            Err(e) => return fail_config(&format!("report serialization: {e}")),
        };
        let c = match CString::new(text) {
            Ok(c) => c,
            Err(_) => return fail_config("report contains an interior NUL byte"),
        };
        unsafe { *out_report_json = c.into_raw() };
        if report.pass {
            BH_OK
        } else {
            set_last_error("at least one check failed; see the report");
            BH_ERR_CHECK_FAILED
        }
    })
}

/// Release a string returned by `bh_run_json`. A null pointer is a no-op.
///
/// # Safety
/// `s` must be null or a string obtained from this library that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn bh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
