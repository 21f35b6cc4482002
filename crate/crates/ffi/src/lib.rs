//! C ABI over the screenlab solver.
//!
//! Every fallible entry point returns a [`ScreenlabStatus`] and writes its
//! result through an out-pointer. On failure the message is kept per thread
//! and read with [`screenlab_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use screenlab::dist::{make_scaled_beta, make_truncated_normal, make_uniform, CostDistribution};
use screenlab::error::Error;
use screenlab::mechanism::Environment;
use screenlab::solver::{find_alpha_hat, solve, Regime, SolveReport};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Refused = 3,
    SizeLimit = 4,
    NonConvergence = 5,
    Inapplicable = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenlabRegime {
    ConsecutiveMenu = 0,
    AlwaysWorking = 1,
}

/// Opaque cost distribution.
pub struct ScreenlabDist {
    inner: CostDistribution,
}

/// Opaque solve result.
pub struct ScreenlabReport {
    inner: SolveReport,
    hi: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScreenlabStatus {
    match e {
        Error::Refused(_) => ScreenlabStatus::Refused,
        Error::Size { .. } => ScreenlabStatus::SizeLimit,
        Error::NonConvergence { .. } | Error::Bracket { .. } => ScreenlabStatus::NonConvergence,
        Error::Inapplicable(_) | Error::Degenerate(_) => ScreenlabStatus::Inapplicable,
        Error::InvalidSupport { .. }
        | Error::InvalidParameter(_)
        | Error::Argument(_)
        | Error::Range { .. }
        | Error::Config(_) => ScreenlabStatus::InvalidArgument,
        _ => ScreenlabStatus::Internal,
    }
}

fn guard<F: FnOnce() -> Result<(), (ScreenlabStatus, String)>>(f: F) -> ScreenlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScreenlabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            ScreenlabStatus::Panic
        }
    }
}

fn lift(e: Error) -> (ScreenlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ScreenlabStatus, String) {
    (ScreenlabStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or valid for reads of `T`.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (ScreenlabStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` must be null or valid for a write of `T`.
unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (ScreenlabStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn screenlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn screenlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn new_dist(
    out: *mut *mut ScreenlabDist,
    make: impl FnOnce() -> screenlab::error::Result<CostDistribution>,
) -> ScreenlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let d = make().map_err(lift)?;
        // SAFETY: checked non-null above
        unsafe { out.write(Box::into_raw(Box::new(ScreenlabDist { inner: d }))) };
        Ok(())
    })
}

/// Uniform costs on `[lo, hi]`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_uniform(lo: f64, hi: f64, out: *mut *mut ScreenlabDist) -> ScreenlabStatus {
    new_dist(out, || make_uniform(lo, hi))
}

/// Normal(mu, sigma) truncated to `[lo, hi]`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_truncnorm(
    mu: f64,
    sigma: f64,
    lo: f64,
    hi: f64,
    out: *mut *mut ScreenlabDist,
) -> ScreenlabStatus {
    new_dist(out, || make_truncated_normal(mu, sigma, lo, hi))
}

/// Beta(a, b) rescaled to `[lo, hi]`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_scaled_beta(
    a: f64,
    b: f64,
    lo: f64,
    hi: f64,
    out: *mut *mut ScreenlabDist,
) -> ScreenlabStatus {
    new_dist(out, || make_scaled_beta(a, b, lo, hi))
}

/// # Safety
/// `d` must be NULL or a pointer from a `screenlab_dist_*` constructor that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_free(d: *mut ScreenlabDist) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScreenlabDistFn {
    Pdf = 0,
    Cdf = 1,
    /// `∫_lo^x F`
    CdfIntegral = 2,
    /// `x + F(x)/f(x)`
    VirtualCost = 3,
    Quantile = 4,
}

/// Evaluate a distribution function at `x`.
///
/// # Safety
/// `d` must be a live distribution handle; `which` a declared
/// `ScreenlabDistFn` value; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_eval(
    d: *const ScreenlabDist,
    which: ScreenlabDistFn,
    x: f64,
    out: *mut f64,
) -> ScreenlabStatus {
    guard(|| {
        let d = &deref(d, "distribution")?.inner;
        let v = match which {
            ScreenlabDistFn::Pdf => d.pdf(x),
            ScreenlabDistFn::Cdf => d.cdf(x),
            ScreenlabDistFn::CdfIntegral => d.cdf_integral(x),
            ScreenlabDistFn::VirtualCost => d.virtual_cost(x),
            ScreenlabDistFn::Quantile => d.quantile(x),
        };
        write_out(out, v)
    })
}

/// Mean cost.
///
/// # Safety
/// `d` must be a live distribution handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_dist_mean(d: *const ScreenlabDist, out: *mut f64) -> ScreenlabStatus {
    guard(|| {
        let d = &deref(d, "distribution")?.inner;
        write_out(out, d.mean())
    })
}

/// Solve for the optimal mechanism with horizon `n` and value `alpha`.
///
/// # Safety
/// `d` must be a live distribution handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_solve(
    d: *const ScreenlabDist,
    n: usize,
    alpha: f64,
    out: *mut *mut ScreenlabReport,
) -> ScreenlabStatus {
    guard(|| {
        let d = &deref(d, "distribution")?.inner;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let env = Environment::new(d.clone(), n, alpha).map_err(lift)?;
        let report = solve(&env).map_err(lift)?;
        out.write(Box::into_raw(Box::new(ScreenlabReport { inner: report, hi: d.hi() })));
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a report from `screenlab_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn screenlab_report_free(r: *mut ScreenlabReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Regime, optimal value and rent of a solved report.
///
/// # Safety
/// `r` must be a live report handle; each out-pointer NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn screenlab_report_summary(
    r: *const ScreenlabReport,
    regime: *mut ScreenlabRegime,
    v_star: *mut f64,
    u1_star: *mut f64,
) -> ScreenlabStatus {
    guard(|| {
        let r = &deref(r, "report")?.inner;
        if !regime.is_null() {
            regime.write(match r.regime {
                Regime::ConsecutiveMenu => ScreenlabRegime::ConsecutiveMenu,
                Regime::AlwaysWorking => ScreenlabRegime::AlwaysWorking,
            });
        }
        if !v_star.is_null() {
            v_star.write(r.v_star);
        }
        if !u1_star.is_null() {
            u1_star.write(r.u1_star);
        }
        Ok(())
    })
}

/// Copy the start cutoffs `c_1..c_N` into `buf` (capacity `len`). Under
/// always-working every cutoff is the top cost. `written` receives `N`.
///
/// # Safety
/// `r` must be a live report handle; `buf` valid for `len` writes;
/// `written` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_report_cutoffs(
    r: *const ScreenlabReport,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> ScreenlabStatus {
    guard(|| {
        let handle = deref(r, "report")?;
        let rep = &handle.inner;
        let n = rep.n;
        write_out(written, n)?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < n {
            return Err((ScreenlabStatus::InvalidArgument, format!("buffer holds {len} values, need {n}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, n);
        match (rep.regime, &rep.menu) {
            (Regime::ConsecutiveMenu, Some(c)) => out.copy_from_slice(c),
            _ => out.fill(handle.hi),
        }
        Ok(())
    })
}

/// Full report as a JSON string; release with `screenlab_string_free`.
///
/// # Safety
/// `r` must be a live report handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_report_to_json(r: *const ScreenlabReport, out: *mut *mut c_char) -> ScreenlabStatus {
    guard(|| {
        let r = &deref(r, "report")?.inner;
        let s = serde_json::to_string(r).map_err(|e| (ScreenlabStatus::Internal, e.to_string()))?;
        let c = CString::new(s).map_err(|e| (ScreenlabStatus::Internal, e.to_string()))?;
        write_out(out, c.into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn screenlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// α at which the optimal regime switches to always-working.
///
/// # Safety
/// `d` must be a live distribution handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_alpha_hat(d: *const ScreenlabDist, n: usize, out: *mut f64) -> ScreenlabStatus {
    guard(|| {
        let d = &deref(d, "distribution")?.inner;
        let ah = find_alpha_hat(d, n).map_err(lift)?;
        write_out(out, ah.alpha_hat)
    })
}

/// Run a CLI command (`"solve"`, `"sweep"`, ...) on a TOML config file,
/// writing artifacts to `out_dir`. The CLI exit code goes to `exit_code`.
///
/// # Safety
/// `command`, `config_path` and `out_dir` must be NUL-terminated strings;
/// `exit_code` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn screenlab_run_command(
    command: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
    exit_code: *mut i32,
) -> ScreenlabStatus {
    guard(|| {
        if command.is_null() || config_path.is_null() || out_dir.is_null() {
            return Err(null("string argument"));
        }
        let text = |p: *const c_char| {
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_owned)
                .map_err(|e| (ScreenlabStatus::InvalidArgument, e.to_string()))
        };
        let args = ["screenlab".to_owned(), text(command)?, "--config".into(), text(config_path)?, "--out".into(), text(out_dir)?];
        write_out(exit_code, screenlab::cli::run(args))
    })
}
