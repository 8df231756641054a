//! C ABI over the `twophase` toolkit.
//!
//! Every function returns a [`TpStatus`]. On failure the message is kept per
//! thread and can be read with [`tp_last_error`]. Datasets and estimates are
//! opaque handles owned by the caller and released with their `_free`
//! functions. Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::{DMatrix, DVector};
use twophase::calib::{self, CalibrationProblem, Distance};
use twophase::datamodel::{self, CsvOptions};
use twophase::pipeline::{self, EstimateOptions, EstimatorOutput, PredictorSpec};
use twophase::wlogit::{self, FitOptions, ModelSpec};
use twophase::TwoPhaseDataset;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    InvalidData = 4,
    FitFailed = 5,
    CalibrationFailed = 6,
    EstimationFailed = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpDistance {
    ChiSquare = 0,
    Exponential = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpMethod {
    DirectS2 = 0,
    Imputation = 1,
    CalibInfluence = 2,
}

/// A validated two-phase dataset.
pub struct TpDataset {
    inner: TwoPhaseDataset,
}

/// Coefficients and their design covariance from one estimator run.
pub struct TpEstimate {
    inner: EstimatorOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(TpStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: TpStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> FfiResult) -> TpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TpStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(TpStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(TpStatus::NullPointer, format!("`{name}` is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(TpStatus::NullPointer, format!("`{name}` is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(TpStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn optional_string<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        string(p, name).map(Some)
    }
}

fn split_list(s: Option<&str>) -> Vec<&str> {
    s.map(|s| s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()).unwrap_or_default()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Weighted logistic fit of `y` on the `n × k` matrix `x`, whose first column
/// must be the intercept.
///
/// Writes `k` coefficients to `beta_out` and, when `influence_out` is not
/// NULL, the `n × k` influence matrix (row `i` is `∂β̂/∂w_i`).
///
/// # Safety
/// `x` must hold `n*k` doubles, `y` and `w` `n` each, `beta_out` room for `k`
/// and `influence_out` (if given) room for `n*k`.
#[no_mangle]
pub unsafe extern "C" fn tp_logistic_fit(
    x: *const f64,
    n: usize,
    k: usize,
    y: *const f64,
    w: *const f64,
    n_scale: f64,
    beta_out: *mut f64,
    influence_out: *mut f64,
) -> TpStatus {
    guard(|| {
        if n == 0 || k == 0 {
            return fail(TpStatus::InvalidArgument, "empty design matrix");
        }
        if !(n_scale > 0.0 && n_scale.is_finite()) {
            return fail(TpStatus::InvalidArgument, "n_scale must be positive");
        }
        let xs = input(x, n * k, "x")?;
        let y = input(y, n, "y")?;
        let w = input(w, n, "w")?;
        let beta_out = output(beta_out, k, "beta_out")?;
        let xm = DMatrix::from_row_slice(n, k, xs);
        let fit = wlogit::fit(&xm, y, w, n_scale, &FitOptions::default())
            .or_else(|e| fail(TpStatus::FitFailed, e.to_string()))?;
        beta_out.copy_from_slice(fit.beta.as_slice());
        if !influence_out.is_null() {
            let out = output(influence_out, n * k, "influence_out")?;
            for i in 0..n {
                for j in 0..k {
                    out[i * k + j] = fit.influence[(i, j)];
                }
            }
        }
        Ok(())
    })
}

/// Calibrate weights `w` of `n2` units with auxiliaries `v` (`n2 × k`) to the
/// totals `target` (`k`). Writes the adjustment factors to `factors_out`; the
/// calibrated weights are `w[i] * factors_out[i]`.
///
/// # Safety
/// `v` must hold `n2*k` doubles, `w` and `factors_out` `n2`, `target` `k`.
#[no_mangle]
pub unsafe extern "C" fn tp_calibrate(
    v: *const f64,
    n2: usize,
    k: usize,
    w: *const f64,
    target: *const f64,
    distance: TpDistance,
    n_scale: f64,
    factors_out: *mut f64,
) -> TpStatus {
    guard(|| {
        if !(n_scale > 0.0 && n_scale.is_finite()) {
            return fail(TpStatus::InvalidArgument, "n_scale must be positive");
        }
        let vs = input(v, n2 * k, "v")?;
        let w = input(w, n2, "w")?;
        let t = input(target, k, "target")?;
        let out = output(factors_out, n2, "factors_out")?;
        let distance = match distance {
            TpDistance::ChiSquare => Distance::ChiSquare,
            TpDistance::Exponential => Distance::Exponential,
        };
        let p = CalibrationProblem::with_totals(
            DMatrix::from_row_slice(n2, k, vs),
            w,
            DVector::from_column_slice(t),
            distance,
            n_scale,
        );
        let r = calib::solve(&p).or_else(|e| fail(TpStatus::CalibrationFailed, e.to_string()))?;
        out.copy_from_slice(&r.factors);
        Ok(())
    })
}

/// Read a dataset from a CSV file with the default column names and reject
/// it unless it validates.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tp_dataset_read_csv(path: *const c_char, out: *mut *mut TpDataset) -> TpStatus {
    guard(|| {
        let path = string(path, "path")?;
        if out.is_null() {
            return fail(TpStatus::NullPointer, "`out` is null");
        }
        *out = ptr::null_mut();
        let file = File::open(path).or_else(|e| fail(TpStatus::Io, format!("{path}: {e}")))?;
        let ds = datamodel::read_dataset(file, &CsvOptions::default())
            .or_else(|e| fail(TpStatus::InvalidData, format!("{path}: {e}")))?;
        let report = datamodel::validate(&ds);
        if let Some(v) = report.violations.first() {
            let at = v.row.map_or(String::new(), |r| format!("row {r}: "));
            return fail(
                TpStatus::InvalidData,
                format!("{path}: {at}{} ({} violations)", v.message, report.violations.len()),
            );
        }
        *out = Box::into_raw(Box::new(TpDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from [`tp_dataset_read_csv`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tp_dataset_free(ds: *mut TpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// First-phase size, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tp_dataset_n1(ds: *const TpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n1())
}

/// Second-phase size, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tp_dataset_n2(ds: *const TpDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.s2_indices().len())
}

/// Fit the outcome model with one estimator.
///
/// `covariates` and `interactions` are comma-separated column lists
/// (`interactions` may be NULL, entries look like `x2:x1_2`). `predictor` names
/// the ancillary column holding the prediction of `x2`; it is required for
/// imputation and calibration and ignored for `DirectS2`.
///
/// # Safety
/// `ds` must be a live dataset handle, strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tp_estimate(
    ds: *const TpDataset,
    method: TpMethod,
    covariates: *const c_char,
    interactions: *const c_char,
    predictor: *const c_char,
    distance: TpDistance,
    out: *mut *mut TpEstimate,
) -> TpStatus {
    guard(|| {
        let Some(ds) = ds.as_ref() else { return fail(TpStatus::NullPointer, "`ds` is null") };
        if out.is_null() {
            return fail(TpStatus::NullPointer, "`out` is null");
        }
        *out = ptr::null_mut();
        let covariates = split_list(Some(string(covariates, "covariates")?));
        let interactions = split_list(optional_string(interactions, "interactions")?);
        let predictor = optional_string(predictor, "predictor")?;
        let ds = &ds.inner;
        let model = ModelSpec::parse(ds, &covariates, &interactions)
            .or_else(|e| fail(TpStatus::InvalidArgument, e.to_string()))?;
        let opts = EstimateOptions::default();
        let spec = || match predictor {
            Some(p) => Ok(PredictorSpec::PassthroughColumn(p.to_string())),
            None => fail(TpStatus::InvalidArgument, "this method needs a predictor column"),
        };
        let distance = match distance {
            TpDistance::ChiSquare => Distance::ChiSquare,
            TpDistance::Exponential => Distance::Exponential,
        };
        let res = match method {
            TpMethod::DirectS2 => pipeline::estimate_direct_s2(ds, &model, &opts),
            TpMethod::Imputation => pipeline::estimate_imputation(ds, &model, &spec()?, &opts),
            TpMethod::CalibInfluence => pipeline::estimate_calib_influence(ds, &model, &spec()?, distance, &opts),
        };
        let inner = res.or_else(|e| fail(TpStatus::EstimationFailed, e.to_string()))?;
        *out = Box::into_raw(Box::new(TpEstimate { inner }));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`tp_estimate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tp_estimate_free(est: *mut TpEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of coefficients, or 0 for NULL.
///
/// # Safety
/// `est` must be NULL or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn tp_estimate_dim(est: *const TpEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.beta.len())
}

/// Copy the coefficients into `beta_out` (room for `len`).
///
/// # Safety
/// `est` must be a live handle and `beta_out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tp_estimate_beta(est: *const TpEstimate, beta_out: *mut f64, len: usize) -> TpStatus {
    guard(|| {
        let Some(est) = est.as_ref() else { return fail(TpStatus::NullPointer, "`est` is null") };
        let k = est.inner.beta.len();
        if len < k {
            return fail(TpStatus::BufferTooSmall, format!("need {k} doubles, got {len}"));
        }
        output(beta_out, k, "beta_out")?.copy_from_slice(&est.inner.beta);
        Ok(())
    })
}

/// Copy the `k × k` covariance (row-major) into `cov_out` (room for `len`)
/// and the design degrees of freedom into `df_out` (may be NULL).
///
/// # Safety
/// `est` must be a live handle, `cov_out` hold `len` doubles and `df_out` be
/// NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn tp_estimate_covariance(
    est: *const TpEstimate,
    cov_out: *mut f64,
    len: usize,
    df_out: *mut i64,
) -> TpStatus {
    guard(|| {
        let Some(est) = est.as_ref() else { return fail(TpStatus::NullPointer, "`est` is null") };
        let Some(v) = est.inner.variance.as_ref() else {
            return fail(TpStatus::EstimationFailed, "no variance was estimated");
        };
        let k = est.inner.beta.len();
        if len < k * k {
            return fail(TpStatus::BufferTooSmall, format!("need {} doubles, got {len}", k * k));
        }
        let out = output(cov_out, k * k, "cov_out")?;
        for i in 0..k {
            for j in 0..k {
                out[i * k + j] = v.covariance[(i, j)];
            }
        }
        if let Some(df) = df_out.as_mut() {
            *df = v.df;
        }
        Ok(())
    })
}
