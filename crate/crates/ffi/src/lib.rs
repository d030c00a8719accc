//! C ABI over `gpcm`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every entry point returns a
//! [`GpcmStatus`]; on failure, `gpcm_last_error_message` describes the most
//! recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use gpcm::mcmc::{fit_mcmc, HmcConfig, PriorSpec};
use gpcm::mmle::{eap_abilities, fit_mmle, EmConfig};
use gpcm::{GpcmError, ItemBank, ItemParams, ResponseMatrix, ThetaVector};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    DataError = 4,
    Nonconvergence = 5,
    NumericalFailure = 6,
    BufferTooSmall = 7,
    Panic = 99,
}

impl From<&GpcmError> for GpcmStatus {
    fn from(e: &GpcmError) -> Self {
        match e {
            GpcmError::InvalidInput(_) | GpcmError::Config(_) | GpcmError::Infeasible { .. } => GpcmStatus::InvalidInput,
            GpcmError::DimensionMismatch { .. } => GpcmStatus::DimensionMismatch,
            GpcmError::ResponseOutOfRange { .. } | GpcmError::ItemDegenerate { .. } | GpcmError::Parse { .. } => {
                GpcmStatus::DataError
            }
            GpcmError::Nonconvergence { .. } => GpcmStatus::Nonconvergence,
            GpcmError::SingularHessian { .. } | GpcmError::Diagnostic(_) => GpcmStatus::NumericalFailure,
            GpcmError::Io(_) | GpcmError::Csv(_) | GpcmError::Json(_) => GpcmStatus::DataError,
        }
    }
}

/// Response matrix handle.
pub struct GpcmResponses {
    inner: ResponseMatrix,
}

/// Fitted item parameters and abilities, from either estimator.
pub struct GpcmFit {
    bank: ItemBank,
    thetas: ThetaVector,
    converged: bool,
    max_psrf: f64,
    n_retries: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(GpcmStatus, String);

impl From<GpcmError> for Failure {
    fn from(e: GpcmError) -> Self {
        Failure(GpcmStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GpcmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            GpcmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            GpcmStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn need(have: usize, want: usize, what: &str) -> Result<(), Failure> {
    if have < want {
        return Err(Failure(
            GpcmStatus::BufferTooSmall,
            format!("{what} holds {have} values, need {want}"),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into the library on this
/// thread.
#[no_mangle]
pub extern "C" fn gpcm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Category probabilities of one item at `theta`.
///
/// `steps` holds the `n_steps` step parameters; `out_probs` receives
/// `n_steps + 1` probabilities and must have room for them.
///
/// # Safety
/// `steps` must be valid for `n_steps` reads and `out_probs` for `out_len`
/// writes.
#[no_mangle]
pub unsafe extern "C" fn gpcm_category_probs(
    theta: f64,
    a: f64,
    steps: *const f64,
    n_steps: usize,
    out_probs: *mut f64,
    out_len: usize,
) -> GpcmStatus {
    guard(|| {
        let steps = input(steps, n_steps, "steps")?;
        let out = output(out_probs, out_len, "out_probs")?;
        need(out.len(), n_steps + 1, "out_probs")?;
        let item = ItemParams::new(a, steps.to_vec())?;
        let p = gpcm::gpcm_category_probs(theta, &item)?;
        out[..p.len()].copy_from_slice(&p);
        Ok(())
    })
}

/// Builds a response matrix from `n_persons * n_items` row-major
/// categories. `n_categories[j]` is the number of categories of item `j`.
///
/// # Safety
/// `data` must be valid for `n_persons * n_items` reads, `n_categories` for
/// `n_items` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn gpcm_responses_new(
    data: *const u16,
    n_persons: usize,
    n_items: usize,
    n_categories: *const usize,
    out: *mut *mut GpcmResponses,
) -> GpcmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cells = n_persons
            .checked_mul(n_items)
            .ok_or_else(|| Failure(GpcmStatus::InvalidInput, "matrix size overflows".into()))?;
        let data = input(data, cells, "data")?;
        let m = input(n_categories, n_items, "n_categories")?;
        let inner = ResponseMatrix::new(n_persons, m.to_vec(), data.to_vec())?;
        *out = Box::into_raw(Box::new(GpcmResponses { inner }));
        Ok(())
    })
}

/// # Safety
/// `responses` must be null or a handle from `gpcm_responses_new` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn gpcm_responses_free(responses: *mut GpcmResponses) {
    if !responses.is_null() {
        drop(Box::from_raw(responses));
    }
}

/// # Safety
/// `responses` must be a live handle and `out` valid for one write.
unsafe fn fit_with(
    responses: *const GpcmResponses,
    out: *mut *mut GpcmFit,
    f: impl FnOnce(&ResponseMatrix) -> Result<GpcmFit, Failure>,
) -> GpcmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = responses.as_ref().ok_or_else(|| null("responses"))?;
        let fit = f(&r.inner)?;
        *out = Box::into_raw(Box::new(fit));
        Ok(())
    })
}

/// Marginal maximum likelihood fit by EM with default settings; abilities
/// are EAP scores.
///
/// # Safety
/// `responses` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_mmle(responses: *const GpcmResponses, out: *mut *mut GpcmFit) -> GpcmStatus {
    fit_with(responses, out, |data| {
        let cfg = EmConfig::default();
        let fit = fit_mmle(data, data.n_categories(), &cfg)?;
        let eap = eap_abilities(data, &fit.bank_hat, &cfg.grid)?;
        Ok(GpcmFit {
            bank: fit.bank_hat,
            thetas: eap.theta,
            converged: fit.converged,
            max_psrf: f64::NAN,
            n_retries: 0,
        })
    })
}

/// Bayesian fit by HMC with default settings and the given seed; estimates
/// are posterior means. Returns `GPCM_STATUS_NONCONVERGENCE` when the PSRF
/// check fails after all retries.
///
/// # Safety
/// `responses` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_mcmc(
    responses: *const GpcmResponses,
    seed: u64,
    out: *mut *mut GpcmFit,
) -> GpcmStatus {
    fit_with(responses, out, |data| {
        let cfg = HmcConfig {
            seed,
            ..HmcConfig::default()
        };
        let fit = fit_mcmc(data, data.n_categories(), &PriorSpec::default(), &cfg)?;
        let max_psrf = fit.worst_psrf().1;
        Ok(GpcmFit {
            bank: fit.bank_hat,
            thetas: fit.theta_hat,
            converged: true,
            max_psrf,
            n_retries: fit.n_retries,
        })
    })
}

/// Number of items in a fit, 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_n_items(fit: *const GpcmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.bank.len())
}

/// Number of persons in a fit, 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_n_persons(fit: *const GpcmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.thetas.len())
}

/// Copies item `item` (0-based): discrimination into `a`, steps into
/// `steps`, and the number of steps into `n_steps`.
///
/// # Safety
/// `fit` must be a live handle, `a` and `n_steps` valid for one write and
/// `steps` for `steps_len` writes.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_item(
    fit: *const GpcmFit,
    item: usize,
    a: *mut f64,
    steps: *mut f64,
    steps_len: usize,
    n_steps: *mut usize,
) -> GpcmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if a.is_null() {
            return Err(null("a"));
        }
        if n_steps.is_null() {
            return Err(null("n_steps"));
        }
        let it = f.bank.get(item).ok_or_else(|| {
            Failure(
                GpcmStatus::InvalidInput,
                format!("item {item} out of range for {} items", f.bank.len()),
            )
        })?;
        *n_steps = it.steps().len();
        let buf = output(steps, steps_len, "steps")?;
        need(buf.len(), it.steps().len(), "steps")?;
        buf[..it.steps().len()].copy_from_slice(it.steps());
        *a = it.discrimination();
        Ok(())
    })
}

/// Copies the ability estimates into `out`, which needs room for
/// `gpcm_fit_n_persons(fit)` values.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_abilities(fit: *const GpcmFit, out: *mut f64, len: usize) -> GpcmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        let buf = output(out, len, "out")?;
        need(buf.len(), f.thetas.len(), "out")?;
        buf[..f.thetas.len()].copy_from_slice(f.thetas.values());
        Ok(())
    })
}

/// Convergence details: EM convergence flag (always 1 for MCMC), largest
/// PSRF (NaN for MMLE) and the number of MCMC retries. Any output pointer
/// may be null.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_diagnostics(
    fit: *const GpcmFit,
    converged: *mut i32,
    max_psrf: *mut f64,
    n_retries: *mut usize,
) -> GpcmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| null("fit"))?;
        if let Some(c) = converged.as_mut() {
            *c = f.converged as i32;
        }
        if let Some(p) = max_psrf.as_mut() {
            *p = f.max_psrf;
        }
        if let Some(n) = n_retries.as_mut() {
            *n = f.n_retries;
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from a fit function that has not been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn gpcm_fit_free(fit: *mut GpcmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Reads the thread's last error message into an owned Rust string.
pub fn last_error() -> String {
    // SAFETY: the pointer comes from the thread-local CString.
    unsafe { CStr::from_ptr(gpcm_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}
