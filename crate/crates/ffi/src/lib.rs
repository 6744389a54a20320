//! C interface to the agehazard library.
//!
//! Every fallible call returns an [`AhStatus`]; on failure the message is
//! available from [`ah_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use agehazard::baselines::{fisher_exact_one_sided, TwoByTwo};
use agehazard::cli::{cmd_analyze, AnalysisOutcome, RunConfig};
use agehazard::flowdata::{discretize, parse_date, parse_flow_file, AggregatedPanel, GridSpec, ObservationWindow};
use agehazard::sampler::log_likelihood;
use agehazard::tps::{elicit_scale, roughness_variance, SplineBasis};
use agehazard::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    Numerical = 5,
    Io = 6,
    Config = 7,
    Panic = 99,
}

/// Time x age grid layout; mirrors the library's grid settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AhGrid {
    pub time_bin_days: u32,
    pub age_bin_years: u32,
    pub age_min_years: u32,
    pub age_max_years: u32,
}

/// Aggregated at-risk and event counts.
pub struct AhPanel(AggregatedPanel);

/// Spline basis for one anisotropy value.
pub struct AhBasis(SplineBasis);

/// Posterior summaries of a completed analysis run.
pub struct AhAnalysis(AnalysisOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> AhStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) => AhStatus::Parse,
        Error::Validation(_) => AhStatus::Validation,
        Error::Domain(_) => AhStatus::InvalidArgument,
        Error::Numerical(_) => AhStatus::Numerical,
        Error::Config(_) | Error::Usage(_) => AhStatus::Config,
        Error::Io { .. } => AhStatus::Io,
        Error::AtIteration { source, .. } => status_of(source),
    }
}

struct Fail(AhStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AhStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording its error and turning panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AhStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            set_error(&format!("internal panic: {msg}"));
            AhStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(AhStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(AhStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    let s = reference(p, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Copies `src` into a caller buffer of `len` elements, which must match.
unsafe fn fill<T: Copy>(dst: *mut T, len: usize, src: &[T], what: &str) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(Fail(AhStatus::NullPointer, format!("{what} is null")));
    }
    if len != src.len() {
        return Err(invalid(format!("{what} holds {len} values, expected {}", src.len())));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ah_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ah_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Prior variance of the mixed second difference on a grid with spacings
/// `d_t` and `d_a`.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn ah_roughness_variance(rho: f64, d_t: f64, d_a: f64, out: *mut f64) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = roughness_variance(rho, d_t, d_a)?;
        Ok(())
    })
}

/// Gamma rate giving `P(|D| > bound) = alpha` for a difference of variance `v`.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn ah_elicit_scale(v: f64, bound: f64, alpha: f64, shape: f64, out: *mut f64) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = elicit_scale(v, bound, alpha, shape)?;
        Ok(())
    })
}

/// One-sided Fisher exact p-value for `x1` of `n1` against `x2` of `n2`.
///
/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn ah_fisher_exact_one_sided(x1: u64, n1: u64, x2: u64, n2: u64, out: *mut f64) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = fisher_exact_one_sided(&TwoByTwo::new(x1, n1, x2, n2)?);
        Ok(())
    })
}

/// Parses flow records and aggregates them over `[window_start, window_end)`.
/// Dates are `M/D/YYYY` or ISO. On success `*out` owns a new panel.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `grid` must be null or
/// valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_panel_from_flow_text(
    flow_text: *const c_char,
    window_start: *const c_char,
    window_end: *const c_char,
    grid: *const AhGrid,
    out: *mut *mut AhPanel,
) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let records = parse_flow_file(text(flow_text, "flow_text")?)?;
        let date = |p, what| -> Result<_, Fail> {
            parse_date(text(p, what)?).map_err(|m| Fail(AhStatus::Parse, format!("{what}: {m}")))
        };
        let window = ObservationWindow::new(date(window_start, "window_start")?, date(window_end, "window_end")?)?;
        let g = reference(grid, "grid")?;
        let spec = GridSpec {
            time_bin_days: g.time_bin_days,
            age_bin_years: g.age_bin_years,
            age_min_years: g.age_min_years,
            age_max_years: g.age_max_years,
        };
        let panel = discretize(&records, &window, &spec)?;
        *out = Box::into_raw(Box::new(AhPanel(panel)));
        Ok(())
    })
}

/// Number of time bins and age bins.
///
/// # Safety
/// `panel` must be null or a live panel; `p` and `r` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_panel_dims(panel: *const AhPanel, p: *mut usize, r: *mut usize) -> AhStatus {
    guard(|| {
        let panel = &reference(panel, "panel")?.0;
        *out_ref(p, "p")? = panel.p();
        *out_ref(r, "r")? = panel.r();
        Ok(())
    })
}

/// Copies the row-major at-risk and event counts; both buffers hold `len = p * r`.
///
/// # Safety
/// `panel` must be null or live; `n` and `x` null or writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ah_panel_counts(panel: *const AhPanel, n: *mut u32, x: *mut u32, len: usize) -> AhStatus {
    guard(|| {
        let panel = &reference(panel, "panel")?.0;
        fill(n, len, panel.n(), "n")?;
        fill(x, len, panel.x(), "x")
    })
}

/// Binomial log-likelihood of the logits `beta` (row-major, `len = p * r`).
///
/// # Safety
/// `panel` must be null or live; `beta` null or readable for `len` values;
/// `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_log_likelihood(panel: *const AhPanel, beta: *const f64, len: usize, out: *mut f64) -> AhStatus {
    guard(|| {
        let panel = &reference(panel, "panel")?.0;
        reference(beta, "beta")?;
        let out = out_ref(out, "out")?;
        if len != panel.cells() {
            return Err(invalid(format!("beta has {len} values but the panel has {} cells", panel.cells())));
        }
        let beta = std::slice::from_raw_parts(beta, len);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("beta must be finite"));
        }
        *out = log_likelihood(beta, panel);
        Ok(())
    })
}

/// Releases a panel; null is ignored.
///
/// # Safety
/// `panel` must be null or a panel not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ah_panel_free(panel: *mut AhPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Truncated spline basis on the panel's grid for anisotropy `rho`.
///
/// # Safety
/// `panel` must be null or live; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_build(
    panel: *const AhPanel,
    rho: f64,
    trace_fraction: f64,
    out: *mut *mut AhBasis,
) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let panel = &reference(panel, "panel")?.0;
        let basis = SplineBasis::for_grid(panel.t(), panel.a(), rho, trace_fraction)?;
        *out = Box::into_raw(Box::new(AhBasis(basis)));
        Ok(())
    })
}

/// Cells and retained columns of the basis.
///
/// # Safety
/// `basis` must be null or live; `cells` and `q` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_dims(basis: *const AhBasis, cells: *mut usize, q: *mut usize) -> AhStatus {
    guard(|| {
        let basis = &reference(basis, "basis")?.0;
        *out_ref(cells, "cells")? = basis.cells();
        *out_ref(q, "q")? = basis.q();
        Ok(())
    })
}

/// Share of the trace of `P K P` kept by the truncation.
///
/// # Safety
/// `basis` must be null or live; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_captured_fraction(basis: *const AhBasis, out: *mut f64) -> AhStatus {
    guard(|| {
        *out_ref(out, "out")? = reference(basis, "basis")?.0.captured_fraction();
        Ok(())
    })
}

/// Copies the basis row-major (`cells` rows, `q` columns) into `out`.
///
/// # Safety
/// `basis` must be null or live; `out` null or writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_matrix(basis: *const AhBasis, out: *mut f64, len: usize) -> AhStatus {
    guard(|| {
        let b = &reference(basis, "basis")?.0.b;
        let rows: Vec<f64> = b.transpose().iter().copied().collect();
        fill(out, len, &rows, "out")
    })
}

/// Retained eigenvalues, descending; `len` must equal `q`.
///
/// # Safety
/// `basis` must be null or live; `out` null or writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_eigenvalues(basis: *const AhBasis, out: *mut f64, len: usize) -> AhStatus {
    guard(|| fill(out, len, &reference(basis, "basis")?.0.eigenvalues, "out"))
}

/// Releases a basis; null is ignored.
///
/// # Safety
/// `basis` must be null or a basis not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ah_basis_free(basis: *mut AhBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Runs a full analysis from a JSON configuration. Relative paths in the
/// configuration resolve against `base_dir` (the current directory if null).
/// Output files are written as configured.
///
/// # Safety
/// `config_json` and `base_dir` must be null or NUL-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_run(
    config_json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut AhAnalysis,
) -> AhStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let json = text(config_json, "config_json")?;
        let base = if base_dir.is_null() { "." } else { text(base_dir, "base_dir")? };
        let cfg = RunConfig::from_json(json, Path::new(base))?;
        cfg.validate()?;
        let outcome = cmd_analyze(&cfg)?;
        *out = Box::into_raw(Box::new(AhAnalysis(outcome)));
        Ok(())
    })
}

/// Surface dimensions: time bins and age bins.
///
/// # Safety
/// `analysis` must be null or live; `p` and `r` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_dims(analysis: *const AhAnalysis, p: *mut usize, r: *mut usize) -> AhStatus {
    guard(|| {
        let s = &reference(analysis, "analysis")?.0.surface;
        *out_ref(p, "p")? = s.p;
        *out_ref(r, "r")? = s.r;
        Ok(())
    })
}

/// Copies the row-major posterior median log-odds ratios and `P(OR > 1)`;
/// cells without a reference group hold NaN.
///
/// # Safety
/// `analysis` must be null or live; buffers null or writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_surface(
    analysis: *const AhAnalysis,
    median_lor: *mut f64,
    prob_or_gt_1: *mut f64,
    len: usize,
) -> AhStatus {
    guard(|| {
        let s = &reference(analysis, "analysis")?.0.surface;
        fill(median_lor, len, &s.median_lor, "median_lor")?;
        fill(prob_or_gt_1, len, &s.prob_or_gt_1, "prob_or_gt_1")
    })
}

/// Number of anisotropy values in the posterior table.
///
/// # Safety
/// `analysis` must be null or live; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_rho_count(analysis: *const AhAnalysis, out: *mut usize) -> AhStatus {
    guard(|| {
        *out_ref(out, "out")? = reference(analysis, "analysis")?.0.rho.rows.len();
        Ok(())
    })
}

/// One row of the anisotropy table: grid value, posterior frequency and
/// marginal-likelihood ratio.
///
/// # Safety
/// `analysis` must be null or live; outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_rho_row(
    analysis: *const AhAnalysis,
    index: usize,
    rho: *mut f64,
    posterior: *mut f64,
    marginal_likelihood: *mut f64,
) -> AhStatus {
    guard(|| {
        let rows = &reference(analysis, "analysis")?.0.rho.rows;
        let row = rows
            .get(index)
            .ok_or_else(|| invalid(format!("row {index} out of range ({} rows)", rows.len())))?;
        *out_ref(rho, "rho")? = row.rho;
        *out_ref(posterior, "posterior")? = row.frequency;
        *out_ref(marginal_likelihood, "marginal_likelihood")? = row.marginal;
        Ok(())
    })
}

/// Releases an analysis; null is ignored.
///
/// # Safety
/// `analysis` must be null or an analysis not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ah_analysis_free(analysis: *mut AhAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}
