//! C ABI over `kyle_ot`.
//!
//! Every function returns a [`KotStatus`]; results come back through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`kot_last_error`]. Handles are opaque and must be released with their
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kyle_ot::cli::suite_config;
use kyle_ot::config::{Equilibrium, ScenarioConfig};
use kyle_ot::filtering::closed_form_law;
use kyle_ot::simulate::{SimConfig, Simulator};
use kyle_ot::transport::oracle::transport_simplex;
use kyle_ot::verify::{run_suite, EquilibriumReport};
use kyle_ot::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    DegenerateSignal = 4,
    Numerical = 5,
    Horizon = 6,
    FilterDegeneracy = 7,
    Io = 8,
    Panic = 99,
}

impl From<&Error> for KotStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::FamilyMismatch { .. } | Error::Precondition(_) => {
                KotStatus::InvalidArgument
            }
            Error::OracleSize { .. } => KotStatus::InvalidArgument,
            Error::DegenerateSignal => KotStatus::DegenerateSignal,
            Error::SingularMap(_)
            | Error::Domain(_)
            | Error::GrowthViolation { .. }
            | Error::SimulationBlowup { .. } => KotStatus::Numerical,
            Error::Horizon { .. } => KotStatus::Horizon,
            Error::FilterDegeneracy { .. } => KotStatus::FilterDegeneracy,
            Error::Config(_) | Error::Json(_) => KotStatus::Config,
            Error::Io(_) => KotStatus::Io,
        }
    }
}

/// A parsed scenario file.
pub struct KotScenario {
    config: ScenarioConfig,
}

/// A solved equilibrium: transport, pricing rule and strategy.
pub struct KotEquilibrium {
    eq: Equilibrium,
}

/// Gaussian law of `(ztilde, s)`; coordinates without a density have zero
/// variance.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KotGaussian {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Headline numbers of a simulation run. `terminal_coupling_rms` is NaN when
/// the strategy has no terminal target.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KotSimSummary {
    pub n_paths: usize,
    pub n_steps: usize,
    pub mean_wealth: f64,
    pub mean_wealth_se: f64,
    pub expected_gamma_c: f64,
    pub expected_gamma_c_se: f64,
    pub ot_value: f64,
    pub terminal_ks_pvalue: f64,
    pub terminal_coupling_rms: f64,
    pub max_abs_autocorrelation: f64,
    pub qv_ratio: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(KotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(KotStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(KotStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KotStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KotStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KotStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------- scenarios

fn boxed_scenario(config: ScenarioConfig, out_ptr: *mut *mut KotScenario) -> Result<(), Failure> {
    let slot = unsafe { out(out_ptr, "out")? };
    *slot = Box::into_raw(Box::new(KotScenario { config }));
    Ok(())
}

/// The unit static Kyle market.
#[no_mangle]
pub extern "C" fn kot_scenario_static_kyle(out: *mut *mut KotScenario) -> KotStatus {
    guard(|| boxed_scenario(ScenarioConfig::static_kyle(), out))
}

/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_scenario_from_toml(toml: *const c_char, out: *mut *mut KotScenario) -> KotStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        boxed_scenario(ScenarioConfig::from_toml(text)?, out)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_scenario_from_file(path: *const c_char, out: *mut *mut KotScenario) -> KotStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        boxed_scenario(ScenarioConfig::load(Path::new(path))?, out)
    })
}

/// Overrides the simulation settings of a scenario.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kot_scenario_set_sampling(
    scenario: *mut KotScenario,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    projected: bool,
) -> KotStatus {
    guard(|| {
        let s = out(scenario, "scenario")?;
        s.config.n_paths = n_paths;
        s.config.n_steps = n_steps;
        s.config.seed = seed;
        s.config.projected = projected;
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from a `kot_scenario_*` constructor, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn kot_scenario_free(scenario: *mut KotScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

// ----------------------------------------------------------- equilibrium

/// Solves the transport problem and assembles pricing rule and strategy.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_solve(scenario: *const KotScenario, out_eq: *mut *mut KotEquilibrium) -> KotStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let slot = out(out_eq, "out")?;
        let eq = Equilibrium::from_config(&s.config)?;
        *slot = Box::into_raw(Box::new(KotEquilibrium { eq }));
        Ok(())
    })
}

/// # Safety
/// `eq` must come from [`kot_solve`], or be NULL.
#[no_mangle]
pub unsafe extern "C" fn kot_equilibrium_free(eq: *mut KotEquilibrium) {
    if !eq.is_null() {
        drop(Box::from_raw(eq));
    }
}

unsafe fn scalar(
    eq: *const KotEquilibrium,
    result: *mut f64,
    f: impl FnOnce(&Equilibrium) -> kyle_ot::Result<f64>,
) -> KotStatus {
    guard(|| {
        let e = handle(eq, "eq")?;
        let slot = out(result, "out")?;
        *slot = f(&e.eq)?;
        Ok(())
    })
}

/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_lambda(eq: *const KotEquilibrium, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| Ok(e.transport.lambda()))
}

/// Optimal transport value `E[Gamma^c] + E[Gamma]`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_ot_value(eq: *const KotEquilibrium, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| Ok(e.transport.ot_value()))
}

/// Terminal order flow `I(ztilde, s)`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_map(eq: *const KotEquilibrium, ztilde: f64, s: f64, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| Ok(e.transport.map(ztilde, s)))
}

/// Order-flow potential `Gamma(y)`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_potential(eq: *const KotEquilibrium, y: f64, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| Ok(e.transport.gamma(y)))
}

/// Dual potential `Gamma^c(ztilde, s)`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_dual_potential(
    eq: *const KotEquilibrium,
    ztilde: f64,
    s: f64,
    out: *mut f64,
) -> KotStatus {
    scalar(eq, out, |e| Ok(e.transport.gamma_c(ztilde, s)))
}

/// Price `H(t, y)`, `0 <= t <= T`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_price(eq: *const KotEquilibrium, t: f64, y: f64, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| e.pricing.price(t, y))
}

/// Value function `Gamma(t, y)`, `0 <= t <= T`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_value(eq: *const KotEquilibrium, t: f64, y: f64, out: *mut f64) -> KotStatus {
    scalar(eq, out, |e| e.pricing.value(t, y))
}

/// Insider trading rate, `0 <= t < T`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_rate(
    eq: *const KotEquilibrium,
    t: f64,
    y: f64,
    ztilde: f64,
    s: f64,
    out: *mut f64,
) -> KotStatus {
    scalar(eq, out, |e| e.strategy.rate(t, y, ztilde, s))
}

/// Market maker's conditional law of `(ztilde, s)` given `Y_t = y`, `t < T`.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_filter_law(
    eq: *const KotEquilibrium,
    t: f64,
    y: f64,
    out_law: *mut KotGaussian,
) -> KotStatus {
    guard(|| {
        let e = handle(eq, "eq")?;
        let slot = out(out_law, "out")?;
        let law = closed_form_law(&e.eq.transport, t, y)?;
        *slot = KotGaussian {
            mean: law.mean(),
            cov: law.cov(),
        };
        Ok(())
    })
}

/// Simulates equilibrium paths and summarizes them.
///
/// # Safety
/// `eq` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_simulate(
    eq: *const KotEquilibrium,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    projected: bool,
    out_summary: *mut KotSimSummary,
) -> KotStatus {
    guard(|| {
        let e = &handle(eq, "eq")?.eq;
        let slot = out(out_summary, "out")?;
        let cfg = SimConfig {
            n_paths,
            n_steps,
            seed,
            projected,
        };
        let paths = Simulator::new(&e.strategy, Some(&e.pricing), cfg).run()?;
        let r = EquilibriumReport::new(e, cfg, &paths, Vec::new());
        *slot = KotSimSummary {
            n_paths,
            n_steps,
            mean_wealth: r.mean_wealth.mean,
            mean_wealth_se: r.mean_wealth.se,
            expected_gamma_c: r.mc_expected_gamma_c.mean,
            expected_gamma_c_se: r.mc_expected_gamma_c.se,
            ot_value: r.ot_value,
            terminal_ks_pvalue: r.terminal_ks_pvalue,
            terminal_coupling_rms: r.terminal_coupling_rms.unwrap_or(f64::NAN),
            max_abs_autocorrelation: r.max_abs_autocorrelation,
            qv_ratio: r.qv_ratio,
        };
        Ok(())
    })
}

/// Runs the verification suite for a scenario. On success `*json` holds the
/// report (release it with [`kot_string_free`]) and `*all_passed` whether
/// every check passed.
///
/// # Safety
/// `scenario` must be a live handle; `json` and `all_passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kot_verify(
    scenario: *const KotScenario,
    json: *mut *mut c_char,
    all_passed: *mut bool,
) -> KotStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let json_slot = out(json, "json")?;
        let pass_slot = out(all_passed, "all_passed")?;
        let eq = Equilibrium::from_config(&s.config)?;
        let results = run_suite(&eq, &suite_config(&s.config))?;
        let text = serde_json::to_string(&results).map_err(Error::from)?;
        *json_slot = CString::new(text).expect("JSON has no NULs").into_raw();
        *pass_slot = results.iter().all(|r| r.passed);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be NULL.
#[no_mangle]
pub unsafe extern "C" fn kot_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------- discrete OT

/// Exact discrete optimal transport maximizing `sum plan * surplus`.
/// `surplus` and `plan` are row-major `rows x cols`; `mu` has `rows`
/// entries and `nu` `cols`, both summing to one.
///
/// # Safety
/// All pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn kot_discrete_ot(
    surplus: *const f64,
    rows: usize,
    cols: usize,
    mu: *const f64,
    nu: *const f64,
    plan: *mut f64,
    value: *mut f64,
) -> KotStatus {
    guard(|| {
        if surplus.is_null() || mu.is_null() || nu.is_null() || plan.is_null() {
            return Err(null("array argument"));
        }
        let value = out(value, "value")?;
        if rows == 0 || cols == 0 {
            return Err(Failure(KotStatus::InvalidArgument, "empty marginal".into()));
        }
        let flat = std::slice::from_raw_parts(surplus, rows * cols);
        let matrix: Vec<Vec<f64>> = flat.chunks(cols).map(<[f64]>::to_vec).collect();
        let mu = std::slice::from_raw_parts(mu, rows);
        let nu = std::slice::from_raw_parts(nu, cols);
        let coupling = transport_simplex(&matrix, mu, nu)?;
        let dst = std::slice::from_raw_parts_mut(plan, rows * cols);
        for (chunk, row) in dst.chunks_mut(cols).zip(&coupling.plan) {
            chunk.copy_from_slice(row);
        }
        *value = coupling.value;
        Ok(())
    })
}
