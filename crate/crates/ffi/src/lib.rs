//! C ABI for monoglue.
//!
//! Every function returns an [`MgStatus`]; results go through out-pointers.
//! Solutions are owned by opaque handles that the caller releases with the
//! matching `*_free`. The message of the last failure on the calling thread is
//! available from [`mg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use monoglue::cli::{self, CliError, ExperimentConfig, Mode, RunOptions};
use monoglue::dirac_global::{self, ChargeConfig, DiracSolution};
use monoglue::exact_fields::{eval_bps, BpsSpec};
use monoglue::geometry::{Grid, GridDomain, MetricField};

/// Status codes. Values from `MG_GATE_FAILED` on mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    MgOk = 0,
    MgIo = 1,
    MgInvalid = 2,
    MgGateFailed = 3,
    MgDiverged = 4,
    MgNullPointer = 10,
    MgPanic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn fail(status: MgStatus, msg: impl std::fmt::Display) -> MgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string().into_bytes());
    status
}

fn guard(f: impl FnOnce() -> MgStatus) -> MgStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(MgStatus::MgPanic, "panic inside monoglue"))
}

fn from_cli(e: CliError) -> MgStatus {
    let status = match e.exit_code() {
        cli::EXIT_IO => MgStatus::MgIo,
        cli::EXIT_GATE => MgStatus::MgGateFailed,
        cli::EXIT_DIVERGENCE => MgStatus::MgDiverged,
        _ => MgStatus::MgInvalid,
    };
    fail(status, e)
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, MgStatus> {
    if p.is_null() {
        return Err(fail(MgStatus::MgNullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MgStatus::MgInvalid, "string argument is not UTF-8"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn mg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Samples the BPS monopole of mass `lambda` centred at the origin at `x[3]`.
/// Writes the connection components `a[3][3]` (row `j` is `A_j ∈ su(2)`) and
/// the Higgs field `phi[3]`.
///
/// # Safety
/// `x` must point to 3 doubles, `a_out` to 9 and `phi_out` to 3.
#[no_mangle]
pub unsafe extern "C" fn mg_bps_eval(lambda: f64, x: *const f64, a_out: *mut f64, phi_out: *mut f64) -> MgStatus {
    guard(|| {
        if x.is_null() || a_out.is_null() || phi_out.is_null() {
            return fail(MgStatus::MgNullPointer, "null pointer argument");
        }
        if !(lambda > 0.0) {
            return fail(MgStatus::MgInvalid, format!("mass must be positive, got {lambda}"));
        }
        let x = [*x, *x.add(1), *x.add(2)];
        let p = eval_bps(&BpsSpec::new([0.0; 3], lambda), x);
        for j in 0..3 {
            for c in 0..3 {
                *a_out.add(3 * j + c) = p.a[j].0[c];
            }
            *phi_out.add(j) = p.phi.0[j];
        }
        MgStatus::MgOk
    })
}

/// Periodic Dirac monopole solution on a cubic torus.
pub struct MgDirac {
    grid: Grid,
    solution: DiracSolution,
    field: Vec<[f64; 3]>,
}

/// Solves for the abelian Higgs field of point charges on the torus
/// `[0, period)³` with `points` nodes per axis. `positions` holds `3·count`
/// coordinates and `charges` holds `count` integers summing to zero.
///
/// # Safety
/// The arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_dirac_solve(
    period: f64,
    points: usize,
    count: usize,
    positions: *const f64,
    charges: *const i32,
    mean: f64,
    out: *mut *mut MgDirac,
) -> MgStatus {
    guard(|| {
        if out.is_null() || (count > 0 && (positions.is_null() || charges.is_null())) {
            return fail(MgStatus::MgNullPointer, "null pointer argument");
        }
        *out = std::ptr::null_mut();
        let grid = match GridDomain::torus(period, points).build() {
            Ok(g) => g,
            Err(e) => return fail(MgStatus::MgInvalid, e),
        };
        let sites = (0..count).map(|i| {
            let p = positions.add(3 * i);
            ([*p, *p.add(1), *p.add(2)], *charges.add(i))
        });
        let cfg = ChargeConfig::new(sites.collect::<Vec<_>>());
        let solution = match dirac_global::solve_dirac_higgs(&grid, &cfg, mean) {
            Ok(s) => s,
            Err(e) => return fail(MgStatus::MgInvalid, e),
        };
        let field = dirac_global::field_strength(&grid, &solution.phi, &MetricField::flat());
        *out = Box::into_raw(Box::new(MgDirac { grid, solution, field }));
        MgStatus::MgOk
    })
}

/// Number of grid nodes of a solution.
///
/// # Safety
/// `h` must be a live handle from [`mg_dirac_solve`] or null.
#[no_mangle]
pub unsafe extern "C" fn mg_dirac_len(h: *const MgDirac) -> usize {
    h.as_ref().map_or(0, |d| d.grid.len())
}

/// Copies the Higgs field (x fastest) into `buf`, which must hold `len` values.
///
/// # Safety
/// `h` must be a live handle; `buf` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mg_dirac_higgs(h: *const MgDirac, buf: *mut f64, len: usize) -> MgStatus {
    guard(|| {
        let Some(d) = h.as_ref() else { return fail(MgStatus::MgNullPointer, "null handle") };
        if buf.is_null() {
            return fail(MgStatus::MgNullPointer, "null buffer");
        }
        if len < d.solution.phi.len() {
            return fail(MgStatus::MgInvalid, format!("buffer holds {len} values, need {}", d.solution.phi.len()));
        }
        std::ptr::copy_nonoverlapping(d.solution.phi.as_ptr(), buf, d.solution.phi.len());
        MgStatus::MgOk
    })
}

/// Flux of `∗dφ` through the lattice sphere of `radius` around `site`,
/// divided by 2π.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mg_dirac_site_flux(h: *const MgDirac, site: usize, radius: f64, out: *mut f64) -> MgStatus {
    guard(|| {
        let Some(d) = h.as_ref() else { return fail(MgStatus::MgNullPointer, "null handle") };
        if out.is_null() {
            return fail(MgStatus::MgNullPointer, "null output");
        }
        if site >= d.solution.sites.len() {
            return fail(MgStatus::MgInvalid, format!("site {site} out of range"));
        }
        *out = dirac_global::site_flux(&d.grid, &d.solution, &d.field, site, radius).flux_over_2pi;
        MgStatus::MgOk
    })
}

/// Releases a solution handle. Null is ignored.
///
/// # Safety
/// `h` must come from [`mg_dirac_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg_dirac_free(h: *mut MgDirac) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs one command-line mode from a TOML configuration string, writing
/// artifacts into `out_dir`. `mode` uses the command-line spelling, e.g.
/// `"bps-residual"`.
///
/// # Safety
/// All arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mg_run(config_toml: *const c_char, mode: *const c_char, out_dir: *const c_char) -> MgStatus {
    guard(|| {
        let (text, mode, out) = match (str_arg(config_toml), str_arg(mode), str_arg(out_dir)) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let mode = match <Mode as clap::ValueEnum>::from_str(mode, false) {
            Ok(m) => m,
            Err(e) => return fail(MgStatus::MgInvalid, e),
        };
        let config = match ExperimentConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return from_cli(e),
        };
        let opts = RunOptions { mode, out: PathBuf::from(out), seed: None, threads: 1, export_vtk: false };
        match cli::run(&config, &opts) {
            Ok(_) => MgStatus::MgOk,
            Err(e) => from_cli(e),
        }
    })
}
