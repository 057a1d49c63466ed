//! C ABI over the solver, simulator and detection measures.
//!
//! Every fallible call returns an [`RsStatus`]; on failure the message is
//! available from [`rs_last_error_message`] until the next failing call on
//! the same thread. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use robust_sovereign::artifact::{load_solution, save_solution};
use robust_sovereign::economy::{EconomyConfig, Theta};
use robust_sovereign::measures::conditional_default_probs;
use robust_sovereign::simulate::{simulate_panel, subsample_stats, Measure, SimOptions, WindowOptions};
use robust_sovereign::solver::{solve_equilibrium, EquilibriumSolution};
use robust_sovereign::uncertainty::{dep_curve, DEFAULT_BURN_IN};
use robust_sovereign::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NotConverged = 4,
    Breakdown = 5,
    Numerical = 6,
    TooFewWindows = 7,
    Io = 8,
    Serialization = 9,
    VersionMismatch = 10,
    Panic = 11,
}

/// Probability measure that generates simulated output.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsMeasure {
    Approximating = 0,
    Distorted = 1,
}

/// Opaque economy configuration.
pub struct RsConfig(EconomyConfig);

/// Opaque solved equilibrium.
pub struct RsSolution(EquilibriumSolution);

/// Headline simulated moments; unavailable statistics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RsPanelStats {
    pub mean_spread: f64,
    pub std_spread: f64,
    pub mean_debt_output: f64,
    pub std_c_over_std_y: f64,
    pub std_tb_y: f64,
    pub corr_y_c: f64,
    pub corr_y_spread: f64,
    pub corr_y_tb_y: f64,
    pub default_frequency: f64,
    pub n_windows: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> RsStatus {
    match e {
        Error::InvalidParameter { .. } | Error::OffGrid(_) => RsStatus::InvalidArgument,
        Error::Config(_) => RsStatus::Config,
        Error::NotConverged { .. } | Error::StationaryNotConverged { .. } => RsStatus::NotConverged,
        Error::Breakdown { .. } => RsStatus::Breakdown,
        Error::NonPositiveConsumption(_)
        | Error::NonPositivePrice(_)
        | Error::NotNormalized(_)
        | Error::DegenerateVariance(_)
        | Error::NoDefaults => RsStatus::Numerical,
        Error::TooFewWindows { .. } => RsStatus::TooFewWindows,
        Error::Io { .. } => RsStatus::Io,
        Error::Serialization(_) | Error::Csv(_) => RsStatus::Serialization,
        Error::VersionMismatch { .. } => RsStatus::VersionMismatch,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RsStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            RsStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Benchmark calibration on the full grids.
#[no_mangle]
pub extern "C" fn rs_config_default() -> *mut RsConfig {
    Box::into_raw(Box::new(RsConfig(EconomyConfig::default())))
}

/// Parses a TOML config; unspecified keys take benchmark values.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rs_config_from_toml(toml: *const c_char, out: *mut *mut RsConfig) -> RsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = EconomyConfig::from_toml_str(text(toml, "toml")?)?;
        *out = Box::into_raw(Box::new(RsConfig(cfg)));
        Ok(())
    })
}

/// Sets the robustness penalty; pass `INFINITY` for rational expectations.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rs_config_set_theta(config: *mut RsConfig, theta: f64) -> RsStatus {
    guard(|| {
        let cfg = deref_mut(config, "config")?;
        let mut next = cfg.0.clone();
        next.theta = Theta::from_f64(theta);
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Sets the output, debt and shock grid sizes.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rs_config_set_grid(config: *mut RsConfig, n_y: usize, n_b: usize, n_x: usize) -> RsStatus {
    guard(|| {
        let cfg = deref_mut(config, "config")?;
        let mut next = cfg.0.clone();
        next.numerics.n_y = n_y;
        next.numerics.n_b = n_b;
        next.numerics.n_x = n_x;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rs_config_free(config: *mut RsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Solves the equilibrium.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rs_solve(config: *const RsConfig, out: *mut *mut RsSolution) -> RsStatus {
    guard(|| {
        let cfg = deref(config, "config")?;
        let out = deref_mut(out, "out")?;
        let sol = solve_equilibrium(&cfg.0)?;
        *out = Box::into_raw(Box::new(RsSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_load(path: *const c_char, out: *mut *mut RsSolution) -> RsStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let sol = load_solution(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(RsSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_save(solution: *const RsSolution, path: *const c_char) -> RsStatus {
    guard(|| {
        let sol = deref(solution, "solution")?;
        save_solution(Path::new(text(path, "path")?), &sol.0)?;
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_free(solution: *mut RsSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Grid sizes and solver iteration count.
///
/// # Safety
/// `solution` must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_dims(
    solution: *const RsSolution,
    n_y: *mut usize,
    n_b: *mut usize,
    iterations: *mut usize,
) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        *deref_mut(n_y, "n_y")? = sol.grids.chain.len();
        *deref_mut(n_b, "n_b")? = sol.grids.bonds.len();
        *deref_mut(iterations, "iterations")? = sol.diagnostics.iterations;
        Ok(())
    })
}

fn check_index(sol: &EquilibriumSolution, y: usize, b: usize) -> Result<(), Failure> {
    let (n_y, n_b) = (sol.grids.chain.len(), sol.grids.bonds.len());
    if y >= n_y || b >= n_b {
        return Err(Failure::Invalid(format!("state ({y}, {b}) outside {n_y} x {n_b} grid")));
    }
    Ok(())
}

/// Output level and debt level at grid indices.
///
/// # Safety
/// `solution` must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_levels(
    solution: *const RsSolution,
    y: usize,
    b: usize,
    y_level: *mut f64,
    b_level: *mut f64,
) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        check_index(sol, y, b)?;
        *deref_mut(y_level, "y_level")? = sol.grids.chain.levels[y];
        *deref_mut(b_level, "b_level")? = sol.grids.bonds[b];
        Ok(())
    })
}

/// Bond price `q(y, B')`.
///
/// # Safety
/// `solution` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_price(solution: *const RsSolution, y: usize, b_next: usize, out: *mut f64) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        check_index(sol, y, b_next)?;
        *deref_mut(out, "out")? = sol.prices.get(y, b_next);
        Ok(())
    })
}

/// Next-period default probability under the approximating and distorted
/// models after issuing `B'` in state `y`.
///
/// # Safety
/// `solution` must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_solution_default_probs(
    solution: *const RsSolution,
    y: usize,
    b_next: usize,
    p_approx: *mut f64,
    p_distorted: *mut f64,
) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        check_index(sol, y, b_next)?;
        let (pa, pd) = conditional_default_probs(sol, y, b_next)?;
        *deref_mut(p_approx, "p_approx")? = pa;
        *deref_mut(p_distorted, "p_distorted")? = pd;
        Ok(())
    })
}

/// Simulates a panel and computes the subsample statistics.
///
/// # Safety
/// `solution` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_simulate_stats(
    solution: *const RsSolution,
    n_paths: usize,
    n_periods: usize,
    burn_in: usize,
    seed: u64,
    measure: RsMeasure,
    min_windows: usize,
    out: *mut RsPanelStats,
) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        let out = deref_mut(out, "out")?;
        let opts = SimOptions {
            n_paths,
            n_periods,
            burn_in,
            seed,
            measure: match measure {
                RsMeasure::Approximating => Measure::Approximating,
                RsMeasure::Distorted => Measure::Distorted,
            },
        };
        let panel = simulate_panel(sol, &opts)?;
        let w = WindowOptions {
            n_subsamples: min_windows,
            ..WindowOptions::default()
        };
        let s = subsample_stats(sol, &panel, &w)?;
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = RsPanelStats {
            mean_spread: v(s.mean_spread.mean),
            std_spread: v(s.std_spread.mean),
            mean_debt_output: v(s.mean_debt_output.mean),
            std_c_over_std_y: v(s.std_c_over_std_y.mean),
            std_tb_y: v(s.std_tb_y.mean),
            corr_y_c: v(s.corr_y_c.mean),
            corr_y_spread: v(s.corr_y_spread.mean),
            corr_y_tb_y: v(s.corr_y_tb_y.mean),
            default_frequency: s.default_frequency,
            n_windows: s.n_windows,
        };
        Ok(())
    })
}

/// Detection-error probability at sample length `t`.
///
/// # Safety
/// `solution` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rs_detection_error(
    solution: *const RsSolution,
    t: usize,
    n_reps: usize,
    seed: u64,
    out: *mut f64,
) -> RsStatus {
    guard(|| {
        let sol = &deref(solution, "solution")?.0;
        let out = deref_mut(out, "out")?;
        if t == 0 || n_reps == 0 {
            return Err(Failure::Invalid("t and n_reps must be positive".into()));
        }
        *out = dep_curve(sol, &[t], n_reps, seed, DEFAULT_BURN_IN, &[])?.dep[0];
        Ok(())
    })
}
