//! C ABI over `sutse-core`.
//!
//! Every fallible call returns a [`SutseStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and
//! can be read with [`sutse_last_error_message`]. Handles are opaque and
//! must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use nalgebra::DMatrix;
use sutse_core::filter::{kalman_filter_with, log_likelihood, FilterOptions, FilterOutput, Storage};
use sutse_core::forecast::exact::{one_step_forecast, same_step_forecast, SameStepRequest};
use sutse_core::forecast::fast::{
    fast_one_step, fast_same_step, run_univariate_filters_with, sample_error_cov, ErrorCovEstimate,
    FastFilterOutput,
};
use sutse_core::io::load_spec;
use sutse_core::simulate::simulate;
use sutse_core::sutse::simulation_model_with_rho;
use sutse_core::{compose, ObservationSeries, StateSpaceModel, SutseError, SutseSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SutseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Divergence = 3,
    Singular = 4,
    NoConvergence = 5,
    Numerical = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

impl From<&SutseError> for SutseStatus {
    fn from(e: &SutseError) -> Self {
        match e {
            SutseError::Input(_) | SutseError::Config(_) => SutseStatus::InvalidInput,
            SutseError::Divergence { .. } => SutseStatus::Divergence,
            SutseError::Singular(_) => SutseStatus::Singular,
            SutseError::NoConvergence { .. } => SutseStatus::NoConvergence,
            SutseError::Numerical(_) => SutseStatus::Numerical,
            SutseError::Parse { .. } => SutseStatus::Parse,
            SutseError::Io(_) => SutseStatus::Io,
        }
    }
}

/// A SUTSE model specification.
pub struct SutseSpecHandle {
    spec: SutseSpec,
}

/// An n × d observation panel; NaN marks a missing cell.
pub struct SutseSeriesHandle {
    series: ObservationSeries,
}

/// A completed multivariate filter run.
pub struct SutseFilterHandle {
    model: StateSpaceModel,
    out: FilterOutput,
}

/// Per-series filters plus the estimated forecast-error covariance.
pub struct SutseFastHandle {
    spec: SutseSpec,
    out: FastFilterOutput,
    cov: ErrorCovEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Run `f`, mapping errors and panics to a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (SutseStatus, String)>) -> SutseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SutseStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SutseStatus::Panic
        }
    }
}

fn core<T>(r: sutse_core::Result<T>) -> Result<T, (SutseStatus, String)> {
    r.map_err(|e| (SutseStatus::from(&e), e.to_string()))
}

fn null(what: &str) -> (SutseStatus, String) {
    (SutseStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (SutseStatus, String) {
    (SutseStatus::InvalidInput, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SutseStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `sutse_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sutse_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sutse_spec_load(path: *const c_char, out: *mut *mut SutseSpecHandle) -> SutseStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let (spec, _) = core(load_spec(Path::new(path)))?;
        put(out, SutseSpecHandle { spec });
        Ok(())
    })
}

/// The d-dimensional benchmark model with equicorrelation `rho`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sutse_spec_simulation(d: usize, rho: f64, out: *mut *mut SutseSpecHandle) -> SutseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (spec, _) = core(simulation_model_with_rho(d, rho))?;
        put(out, SutseSpecHandle { spec });
        Ok(())
    })
}

/// Number of series, or 0 for a null handle.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sutse_spec_dim(spec: *const SutseSpecHandle) -> usize {
    spec.as_ref().map_or(0, |s| s.spec.dim())
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sutse_spec_free(spec: *mut SutseSpecHandle) {
    free(spec)
}

/// Copy an n × d row-major panel. NaN entries are missing.
///
/// # Safety
/// `values` must point to `n * d` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_new(
    values: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut SutseSeriesHandle,
) -> SutseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if d == 0 {
            return Err(invalid("series needs at least one column"));
        }
        let len = n.checked_mul(d).ok_or_else(|| invalid("n * d overflows"))?;
        if values.is_null() && len > 0 {
            return Err(null("values"));
        }
        let data = if len == 0 { &[][..] } else { slice::from_raw_parts(values, len) };
        if data.iter().any(|x| x.is_infinite()) {
            return Err(invalid("values must be finite or NaN"));
        }
        let series = ObservationSeries::from_matrix(DMatrix::from_row_slice(n, d, data));
        put(out, SutseSeriesHandle { series });
        Ok(())
    })
}

/// Draw n rows from the composed model of `spec`.
///
/// # Safety
/// `spec` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_simulate(
    spec: *const SutseSpecHandle,
    n: usize,
    seed: u64,
    out: *mut *mut SutseSeriesHandle,
) -> SutseStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = core(compose(&spec.spec))?;
        let series = core(simulate(&model, n, seed))?;
        put(out, SutseSeriesHandle { series });
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_len(series: *const SutseSeriesHandle) -> usize {
    series.as_ref().map_or(0, |s| s.series.len())
}

/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_dim(series: *const SutseSeriesHandle) -> usize {
    series.as_ref().map_or(0, |s| s.series.dim())
}

/// Copy the panel out row-major, NaN where missing.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_copy(
    series: *const SutseSeriesHandle,
    buf: *mut f64,
    len: usize,
) -> SutseStatus {
    guard(|| {
        let s = &deref(series, "series")?.series;
        let (n, d) = (s.len(), s.dim());
        if len != n * d {
            return Err(invalid(format!("buffer holds {len} values, series has {}", n * d)));
        }
        if buf.is_null() && len > 0 {
            return Err(null("buf"));
        }
        for t in 0..n {
            for j in 0..d {
                *buf.add(t * d + j) = s.get(t, j).unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sutse_series_free(series: *mut SutseSeriesHandle) {
    free(series)
}

/// Gaussian log-likelihood without the 2π constant.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sutse_loglik(
    spec: *const SutseSpecHandle,
    series: *const SutseSeriesHandle,
    out: *mut f64,
) -> SutseStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let series = deref(series, "series")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = core(compose(&spec.spec))?;
        *out = core(log_likelihood(&model, &series.series))?;
        Ok(())
    })
}

/// Run the multivariate filter over the whole series.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sutse_filter_run(
    spec: *const SutseSpecHandle,
    series: *const SutseSeriesHandle,
    out: *mut *mut SutseFilterHandle,
) -> SutseStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let series = deref(series, "series")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = core(compose(&spec.spec))?;
        let opts = FilterOptions::default().with_storage(Storage::Forecast);
        let filtered = core(kalman_filter_with(&model, &series.series, &opts))?;
        put(out, SutseFilterHandle { model, out: filtered });
        Ok(())
    })
}

/// # Safety
/// `filter` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sutse_filter_loglik(filter: *const SutseFilterHandle, out: *mut f64) -> SutseStatus {
    guard(|| {
        let f = deref(filter, "filter")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.out.loglik;
        Ok(())
    })
}

unsafe fn write_vector(v: &[f64], buf: *mut f64, len: usize) -> Result<(), (SutseStatus, String)> {
    if len != v.len() {
        return Err(invalid(format!("buffer holds {len} values, expected {}", v.len())));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(v.as_ptr(), buf, len);
    Ok(())
}

unsafe fn request(
    idx: *const usize,
    vals: *const f64,
    m: usize,
    target: usize,
) -> Result<SameStepRequest, (SutseStatus, String)> {
    if m > 0 && (idx.is_null() || vals.is_null()) {
        return Err(null("observed arrays"));
    }
    let (idx, vals) = if m == 0 {
        (&[][..], &[][..])
    } else {
        (slice::from_raw_parts(idx, m), slice::from_raw_parts(vals, m))
    };
    Ok(SameStepRequest {
        observed_idx: idx.to_vec(),
        observed_vals: vals.to_vec(),
        target,
    })
}

/// One-step forecast of all d series for time n+1.
///
/// # Safety
/// `buf` must hold `len == d` doubles.
#[no_mangle]
pub unsafe extern "C" fn sutse_filter_one_step(
    filter: *const SutseFilterHandle,
    buf: *mut f64,
    len: usize,
) -> SutseStatus {
    guard(|| {
        let f = deref(filter, "filter")?;
        write_vector(one_step_forecast(&f.model, &f.out).as_slice(), buf, len)
    })
}

/// Forecast series `target` at n+1 given the values of `observed_idx` at n+1.
///
/// # Safety
/// `observed_idx` and `observed_vals` must hold `m` entries each.
#[no_mangle]
pub unsafe extern "C" fn sutse_filter_same_step(
    filter: *const SutseFilterHandle,
    observed_idx: *const usize,
    observed_vals: *const f64,
    m: usize,
    target: usize,
    out: *mut f64,
) -> SutseStatus {
    guard(|| {
        let f = deref(filter, "filter")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let req = request(observed_idx, observed_vals, m, target)?;
        *out = core(same_step_forecast(&f.model, &f.out, &req))?;
        Ok(())
    })
}

/// # Safety
/// `filter` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sutse_filter_free(filter: *mut SutseFilterHandle) {
    free(filter)
}

/// Per-series filters and the sample forecast-error covariance from row `n0` (1-based).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sutse_fast_run(
    spec: *const SutseSpecHandle,
    series: *const SutseSeriesHandle,
    n0: usize,
    out: *mut *mut SutseFastHandle,
) -> SutseStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let series = deref(series, "series")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = FilterOptions::default().with_storage(Storage::Forecast);
        let fast = core(run_univariate_filters_with(&spec.spec, &series.series, &opts))?;
        let cov = core(sample_error_cov(&fast, n0))?;
        put(
            out,
            SutseFastHandle {
                spec: spec.spec.clone(),
                out: fast,
                cov,
            },
        );
        Ok(())
    })
}

/// # Safety
/// `buf` must hold `len == d` doubles.
#[no_mangle]
pub unsafe extern "C" fn sutse_fast_one_step(fast: *const SutseFastHandle, buf: *mut f64, len: usize) -> SutseStatus {
    guard(|| {
        let f = deref(fast, "fast")?;
        write_vector(fast_one_step(&f.out, &f.spec).as_slice(), buf, len)
    })
}

/// Copy the d × d error covariance estimate out row-major.
///
/// # Safety
/// `buf` must hold `len == d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn sutse_fast_error_cov(fast: *const SutseFastHandle, buf: *mut f64, len: usize) -> SutseStatus {
    guard(|| {
        let f = deref(fast, "fast")?;
        let v = f.cov.v.transpose();
        write_vector(v.as_slice(), buf, len)
    })
}

/// # Safety
/// `observed_idx` and `observed_vals` must hold `m` entries each.
#[no_mangle]
pub unsafe extern "C" fn sutse_fast_same_step(
    fast: *const SutseFastHandle,
    observed_idx: *const usize,
    observed_vals: *const f64,
    m: usize,
    target: usize,
    out: *mut f64,
) -> SutseStatus {
    guard(|| {
        let f = deref(fast, "fast")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let req = request(observed_idx, observed_vals, m, target)?;
        *out = core(fast_same_step(&f.out, &f.cov, &req))?;
        Ok(())
    })
}

/// # Safety
/// `fast` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sutse_fast_free(fast: *mut SutseFastHandle) {
    free(fast)
}
