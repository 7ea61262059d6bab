//! C ABI over `qmc-amis`.
//!
//! Every fallible call returns a [`QmcStatus`]; on failure the message is
//! kept per thread and read back with [`qmc_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qmc_amis::harness::{run_experiment, write_csv, ExperimentConfig, ExperimentKind, ExperimentResult};
use qmc_amis::pointgen::{generate, generate_sobol, SamplerKind, UniformPointSet};
use qmc_amis::theory::{smoothed_projection, ProjectionRadius};
use qmc_amis::transforms::{inv_norm_cdf, norm_cdf};
use qmc_amis::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcStatus {
    Ok = 0,
    InvalidArgument = 1,
    Unsupported = 2,
    Io = 3,
    Numerical = 4,
    NullPointer = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcSampler {
    Mc = 0,
    Rqmc = 1,
}

impl From<QmcSampler> for SamplerKind {
    fn from(s: QmcSampler) -> Self {
        match s {
            QmcSampler::Mc => SamplerKind::Mc,
            QmcSampler::Rqmc => SamplerKind::Rqmc,
        }
    }
}

/// A set of points in the unit cube, row-major.
pub struct QmcPointSet {
    inner: UniformPointSet,
}

/// A parsed experiment configuration.
pub struct QmcConfig {
    inner: ExperimentConfig,
}

/// The outcome of an experiment run.
pub struct QmcResult {
    inner: ExperimentResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QmcStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::Config { .. }
        | Error::Unknown { .. } => QmcStatus::InvalidArgument,
        Error::UnsupportedDimension { .. } | Error::UnnormalizedTarget(_) => QmcStatus::Unsupported,
        Error::Io { .. } | Error::Ingest { .. } => QmcStatus::Io,
        _ => QmcStatus::Numerical,
    }
}

struct Failure(QmcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QmcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            QmcStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(QmcStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QmcStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `out` must be null or valid for a write.
unsafe fn store<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// # Safety
/// `h` must be null or a live handle of type `T`.
unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn qmc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standard normal CDF.
#[no_mangle]
pub extern "C" fn qmc_norm_cdf(z: f64) -> f64 {
    norm_cdf(z)
}

/// Standard normal quantile of `u` in (0, 1).
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_inv_norm_cdf(u: f64, out: *mut f64) -> QmcStatus {
    guard(|| store(out, inv_norm_cdf(u)?, "out"))
}

/// Smoothed projection of `x` with radius `r > 1`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_smoothed_projection(x: f64, r: f64, out: *mut f64) -> QmcStatus {
    guard(|| store(out, smoothed_projection(x, ProjectionRadius::new(r)?), "out"))
}

/// Scrambled Sobol' set with `2^m` points in `d` dimensions.
///
/// # Safety
/// `out` must be valid for a write; the handle it receives must be released
/// with [`qmc_point_set_free`].
#[no_mangle]
pub unsafe extern "C" fn qmc_sobol_generate(m: u32, d: usize, seed: u64, out: *mut *mut QmcPointSet) -> QmcStatus {
    guard(|| {
        let ps = generate_sobol(m, d, seed)?;
        store(out, Box::into_raw(Box::new(QmcPointSet { inner: ps })), "out")
    })
}

/// `n` points from either sampler; RQMC needs a power of two.
///
/// # Safety
/// As for [`qmc_sobol_generate`].
#[no_mangle]
pub unsafe extern "C" fn qmc_points_generate(
    sampler: QmcSampler,
    n: usize,
    d: usize,
    seed: u64,
    out: *mut *mut QmcPointSet,
) -> QmcStatus {
    guard(|| {
        let ps = generate(sampler.into(), n, d, seed)?;
        store(out, Box::into_raw(Box::new(QmcPointSet { inner: ps })), "out")
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `ps` must be null or a live point-set handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_point_set_len(ps: *const QmcPointSet) -> usize {
    ps.as_ref().map_or(0, |p| p.inner.n())
}

/// Dimension, or 0 for a null handle.
///
/// # Safety
/// `ps` must be null or a live point-set handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_point_set_dim(ps: *const QmcPointSet) -> usize {
    ps.as_ref().map_or(0, |p| p.inner.d())
}

/// Row-major `len * dim` coordinates, owned by the handle.
///
/// # Safety
/// `ps` must be null or a live point-set handle. The pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn qmc_point_set_values(ps: *const QmcPointSet) -> *const f64 {
    ps.as_ref().map_or(ptr::null(), |p| p.inner.values().as_slice().as_ptr())
}

/// # Safety
/// `ps` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmc_point_set_free(ps: *mut QmcPointSet) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

/// Desk-scale defaults for the named experiment.
///
/// # Safety
/// `experiment` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_config_default(experiment: *const c_char, out: *mut *mut QmcConfig) -> QmcStatus {
    guard(|| {
        let kind = ExperimentKind::parse(read_str(experiment, "experiment")?)?;
        let cfg = ExperimentConfig::new(kind);
        store(out, Box::into_raw(Box::new(QmcConfig { inner: cfg })), "out")
    })
}

/// Parses `key = value` config text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_config_parse(text: *const c_char, out: *mut *mut QmcConfig) -> QmcStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(read_str(text, "text")?)?;
        store(out, Box::into_raw(Box::new(QmcConfig { inner: cfg })), "out")
    })
}

/// Reads and parses a config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_config_load(path: *const c_char, out: *mut *mut QmcConfig) -> QmcStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(read_str(path, "path")?)?;
        store(out, Box::into_raw(Box::new(QmcConfig { inner: cfg })), "out")
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmc_config_free(cfg: *mut QmcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured experiment.
///
/// # Safety
/// `cfg` must be a live config handle and `out` valid for a write; release
/// the result with [`qmc_result_free`].
#[no_mangle]
pub unsafe extern "C" fn qmc_experiment_run(cfg: *const QmcConfig, out: *mut *mut QmcResult) -> QmcStatus {
    guard(|| {
        let cfg = handle(cfg, "cfg")?;
        let result = run_experiment(&cfg.inner)?;
        store(out, Box::into_raw(Box::new(QmcResult { inner: result })), "out")
    })
}

/// Number of `(method, sampler, budget)` series, or 0 for a null handle.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_series_count(res: *const QmcResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.series.len())
}

/// Budget and RMSE of series `index`. A series that failed reports
/// `QMC_STATUS_NUMERICAL` with its failure message.
///
/// # Safety
/// `res` must be a live result handle; `budget` and `rmse` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_series(
    res: *const QmcResult,
    index: usize,
    budget: *mut usize,
    rmse: *mut f64,
) -> QmcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        let s = r.inner.series.get(index).ok_or_else(|| {
            Failure(
                QmcStatus::InvalidArgument,
                format!("series index {index} out of range ({})", r.inner.series.len()),
            )
        })?;
        store(budget, s.budget, "budget")?;
        match (s.rmse, &s.failure) {
            (Some(v), _) => store(rmse, v, "rmse"),
            (None, Some(msg)) => Err(Failure(QmcStatus::Numerical, msg.clone())),
            (None, None) => Err(Failure(QmcStatus::Numerical, "series has no rmse".into())),
        }
    })
}

/// Fitted log-log slope for `method` under `sampler`.
///
/// # Safety
/// `res` must be a live result handle, `method` a NUL-terminated string and
/// `slope` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_slope(
    res: *const QmcResult,
    method: *const c_char,
    sampler: QmcSampler,
    slope: *mut f64,
) -> QmcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        let m = read_str(method, "method")?;
        let v = r
            .inner
            .slope(m, sampler.into())
            .ok_or_else(|| Failure(QmcStatus::InvalidArgument, format!("no slope for `{m}`")))?;
        store(slope, v, "slope")
    })
}

/// Length of the truth vector, or 0 for a null handle.
///
/// # Safety
/// `res` must be null or a live result handle.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_truth_len(res: *const QmcResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.truth.len())
}

/// Copies up to `len` truth components into `out`; returns how many were written.
///
/// # Safety
/// `res` must be null or a live result handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_truth(res: *const QmcResult, out: *mut f64, len: usize) -> usize {
    let Some(r) = res.as_ref() else { return 0 };
    if out.is_null() {
        return 0;
    }
    let k = len.min(r.inner.truth.len());
    ptr::copy_nonoverlapping(r.inner.truth.as_ptr(), out, k);
    k
}

/// Writes the result CSV to `path`, creating parent directories.
///
/// # Safety
/// `res` must be a live result handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_write_csv(res: *const QmcResult, path: *const c_char) -> QmcStatus {
    guard(|| {
        let r = handle(res, "res")?;
        write_csv(&r.inner, Path::new(read_str(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qmc_result_free(res: *mut QmcResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_codes() {
        assert_eq!(status_of(&Error::Fit("x".into())), QmcStatus::Numerical);
        assert_eq!(
            status_of(&Error::UnsupportedDimension { requested: 9, max: 2 }),
            QmcStatus::Unsupported
        );
        assert_eq!(
            status_of(&Error::Config {
                line: 1,
                message: "m".into()
            }),
            QmcStatus::InvalidArgument
        );
    }

    #[test]
    fn panics_become_a_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, QmcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(qmc_last_error()) }.to_str().unwrap().to_string();
        assert_eq!(msg, "panic: boom");
        assert_eq!(guard(|| Ok(())), QmcStatus::Ok);
        assert!(qmc_last_error().is_null());
    }
}
