//! C interface to pvsignal.
//!
//! Functions return a [`PvStatus`]; on failure the message is available from
//! [`pv_last_error_message`] on the same thread. Handles are created by
//! `pv_*_new`/`pv_*_fit` and must be released with the matching `*_free`.
//! Matrices are row-major, drugs by AEs.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pvsignal::contingency::{expected_counts, ContingencyTable, ExpectedCounts, OntologyMap};
use pvsignal::error::{Error, ErrorKind};
use pvsignal::gps::{fit_gps, gps_posterior, nb_logpmf, GpsHyper};
use pvsignal::thinning::{split, SplitMethod};
use pvsignal::zgps::{eb_lambda, fit_all_groups, zinb_logpmf, ZgpsFit, ZinbOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvSplitMethod {
    Thinning = 0,
    Stratified = 1,
    Random = 2,
}

/// Gamma mixture prior `(alpha1, beta1, alpha2, beta2, omega)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvGpsHyper {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub omega: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvGpsCell {
    pub ebgm: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvZinbGroup {
    /// Nonzero when the group could not be fitted; the other fields are NaN.
    pub failed: u8,
    pub converged: u8,
    pub poisson_like: u8,
    pub r_hat: f64,
    pub loglik: f64,
}

/// A count table with its expected counts.
pub struct PvTable {
    table: ContingencyTable,
    expected: ExpectedCounts,
}

pub struct PvGpsFit {
    theta: GpsHyper,
    loglik: f64,
    converged: bool,
    iterations: usize,
}

pub struct PvZgpsFit {
    fit: ZgpsFit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PvStatus {
    match e.kind() {
        ErrorKind::Config => PvStatus::InvalidArgument,
        ErrorKind::Data => PvStatus::DataError,
        ErrorKind::Numerical => PvStatus::NumericalError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PvStatus, String)>) -> PvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PvStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PvStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (PvStatus, String)>;
}

impl<T> OrStatus<T> for pvsignal::error::Result<T> {
    fn or_status(self) -> Result<T, (PvStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (PvStatus, String) {
    (PvStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (PvStatus, String) {
    (PvStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (PvStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (PvStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (PvStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), (PvStatus, String)> {
    if got == want {
        Ok(())
    } else {
        Err(invalid(format!("{what} has length {got}, expected {want}")))
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a table from `n_drugs * n_aes` counts. Drugs are named `D1..`,
/// AEs `A1..`. Expected counts come from the margins.
///
/// # Safety
/// `counts` must point to `n_drugs * n_aes` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_table_new(
    n_drugs: usize,
    n_aes: usize,
    counts: *const u64,
    out: *mut *mut PvTable,
) -> PvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let len = n_drugs.checked_mul(n_aes).ok_or_else(|| invalid("table too large"))?;
        let counts = slice(counts, len, "counts")?.to_vec();
        let drugs = (1..=n_drugs).map(|i| format!("D{i}")).collect();
        let aes = (1..=n_aes).map(|j| format!("A{j}")).collect();
        let table = ContingencyTable::from_counts(drugs, aes, counts).or_status()?;
        let expected = expected_counts(&table).or_status()?;
        *out = Box::into_raw(Box::new(PvTable { table, expected }));
        Ok(())
    })
}

/// # Safety
/// `table` must come from [`pv_table_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pv_table_free(table: *mut PvTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Copies the expected counts into `out` (`len` must equal drugs × AEs).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pv_table_expected(table: *const PvTable, out: *mut f64, len: usize) -> PvStatus {
    guard(|| {
        let t = handle(table, "table")?;
        check_len(len, t.expected.values().len(), "out")?;
        slice_mut(out, len, "out")?.copy_from_slice(t.expected.values());
        Ok(())
    })
}

/// Log-pmf of the negative binomial with the given shape and success
/// probability `q`, as used in the GPS marginal.
#[no_mangle]
pub extern "C" fn pv_nb_logpmf(n: u64, shape: f64, q: f64) -> f64 {
    nb_logpmf(n, shape, q)
}

/// Log-pmf of the zero-inflated negative binomial count with exposure `e`,
/// dispersion `r`, zero probability `p` and rate mean `mu`.
#[no_mangle]
pub extern "C" fn pv_zinb_logpmf(n: u64, e: f64, r: f64, p: f64, mu: f64) -> f64 {
    zinb_logpmf(n, e, r, p, mu)
}

/// Default starting values of the GPS fit.
#[no_mangle]
pub extern "C" fn pv_gps_default_hyper() -> PvGpsHyper {
    to_c(GpsHyper::default())
}

fn to_c(h: GpsHyper) -> PvGpsHyper {
    PvGpsHyper {
        alpha1: h.alpha1,
        beta1: h.beta1,
        alpha2: h.alpha2,
        beta2: h.beta2,
        omega: h.omega,
    }
}

fn from_c(h: &PvGpsHyper) -> Result<GpsHyper, (PvStatus, String)> {
    GpsHyper::new(h.alpha1, h.beta1, h.alpha2, h.beta2, h.omega).or_status()
}

/// Fits the GPS prior. `init` may be null for the defaults.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_gps_fit(
    table: *const PvTable,
    init: *const PvGpsHyper,
    tol: f64,
    max_iter: usize,
    out: *mut *mut PvGpsFit,
) -> PvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let t = handle(table, "table")?;
        let init = match init.as_ref() {
            Some(h) => from_c(h)?,
            None => GpsHyper::default(),
        };
        let fit = fit_gps(&t.table, &t.expected, &init, tol, max_iter).or_status()?;
        *out = Box::into_raw(Box::new(PvGpsFit {
            theta: fit.theta,
            loglik: fit.loglik,
            converged: fit.converged,
            iterations: fit.iterations,
        }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`pv_gps_fit`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pv_gps_fit_free(fit: *mut PvGpsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Fitted hyperparameters, log-likelihood, convergence flag and iteration count.
/// Any output pointer may be null.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pv_gps_fit_result(
    fit: *const PvGpsFit,
    theta: *mut PvGpsHyper,
    loglik: *mut f64,
    converged: *mut u8,
    iterations: *mut usize,
) -> PvStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if let Some(t) = theta.as_mut() {
            *t = to_c(f.theta);
        }
        if let Some(l) = loglik.as_mut() {
            *l = f.loglik;
        }
        if let Some(c) = converged.as_mut() {
            *c = f.converged as u8;
        }
        if let Some(i) = iterations.as_mut() {
            *i = f.iterations;
        }
        Ok(())
    })
}

/// Posterior summary of one cell: EBGM, mean and the `lower_prob` and
/// `upper_prob` quantiles.
///
/// # Safety
/// `theta` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pv_gps_posterior(
    n: u64,
    e: f64,
    theta: *const PvGpsHyper,
    lower_prob: f64,
    upper_prob: f64,
    out: *mut PvGpsCell,
) -> PvStatus {
    guard(|| {
        let theta = from_c(handle(theta, "theta")?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(e.is_finite() && e > 0.0) {
            return Err(invalid("expected count must be positive"));
        }
        let post = gps_posterior(n, e, &theta);
        *out = PvGpsCell {
            ebgm: post.ebgm,
            mean: post.mean(),
            lower: post.quantile(lower_prob).or_status()?,
            upper: post.quantile(upper_prob).or_status()?,
        };
        Ok(())
    })
}

/// Posterior mean of λ and zero-mass probability for one cell.
///
/// # Safety
/// Output pointers must be writable; `pi_hat` may be null.
#[no_mangle]
pub unsafe extern "C" fn pv_eb_lambda(
    n: u64,
    e: f64,
    p: f64,
    mu: f64,
    r: f64,
    lambda_hat: *mut f64,
    pi_hat: *mut f64,
) -> PvStatus {
    guard(|| {
        let l = lambda_hat.as_mut().ok_or_else(|| null("lambda_hat"))?;
        if !(e > 0.0 && mu > 0.0 && r > 0.0 && (0.0..1.0).contains(&p)) {
            return Err(invalid("need e, mu, r > 0 and p in [0, 1)"));
        }
        let est = eb_lambda(n, e, p, mu, r);
        *l = est.lambda_hat;
        if let Some(pi) = pi_hat.as_mut() {
            *pi = est.pi_hat;
        }
        Ok(())
    })
}

/// Fits the zero-inflated model per AE group. `ae_group[j]` is the group
/// index of AE column `j`.
///
/// # Safety
/// `ae_group` must hold one entry per AE; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_fit(
    table: *const PvTable,
    ae_group: *const u32,
    n_aes: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut PvZgpsFit,
) -> PvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let t = handle(table, "table")?;
        check_len(n_aes, t.table.n_aes(), "ae_group")?;
        let groups = slice(ae_group, n_aes, "ae_group")?;
        let onto = OntologyMap::new(
            t.table
                .ae_ids()
                .iter()
                .zip(groups)
                .map(|(a, g)| (a.clone(), format!("G{g:010}"))),
        )
        .or_status()?;
        let opts = ZinbOptions {
            tol,
            max_iter,
            ..ZinbOptions::default()
        };
        let fit = fit_all_groups(&t.table, &t.expected, &onto, &opts).or_status()?;
        *out = Box::into_raw(Box::new(PvZgpsFit { fit }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from [`pv_zgps_fit`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_fit_free(fit: *mut PvZgpsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of groups. Group `k` of the fit is the `k`-th smallest index in
/// `ae_group`.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_n_groups(fit: *const PvZgpsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.fit.group_ids.len())
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_group(fit: *const PvZgpsFit, group: usize, out: *mut PvZinbGroup) -> PvStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let g = f
            .fit
            .groups
            .get(group)
            .ok_or_else(|| invalid(format!("group {group} out of range")))?;
        *out = match g {
            Ok(g) => PvZinbGroup {
                failed: 0,
                converged: g.converged as u8,
                poisson_like: g.poisson_like as u8,
                r_hat: g.r_hat,
                loglik: g.loglik,
            },
            Err(_) => PvZinbGroup {
                failed: 1,
                converged: 0,
                poisson_like: 0,
                r_hat: f64::NAN,
                loglik: f64::NAN,
            },
        };
        Ok(())
    })
}

/// Group-level rates as a drugs × groups matrix; NaN for failed groups.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_s_hat(fit: *const PvZgpsFit, out: *mut f64, len: usize) -> PvStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let s = f.fit.s_matrix();
        check_len(len, s.len(), "out")?;
        for (o, v) in slice_mut(out, len, "out")?.iter_mut().zip(s) {
            *o = v.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// AE-level posterior means as a drugs × AEs matrix; NaN where unavailable.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pv_zgps_lambda_hat(fit: *const PvZgpsFit, out: *mut f64, len: usize) -> PvStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        check_len(len, f.fit.estimates.len(), "out")?;
        for (o, v) in slice_mut(out, len, "out")?.iter_mut().zip(&f.fit.estimates) {
            *o = v.map_or(f64::NAN, |e| e.lambda_hat);
        }
        Ok(())
    })
}

/// Splits the counts into train and validation tables. For random splits,
/// `train_present[k]` is 0 where cell `k` was held out (and `valid_present`
/// is its complement); other methods set both to 1. Presence pointers may be
/// null.
///
/// # Safety
/// Every non-null output must point to drugs × AEs writable elements.
#[no_mangle]
pub unsafe extern "C" fn pv_split(
    table: *const PvTable,
    method: PvSplitMethod,
    epsilon: f64,
    seed: u64,
    train: *mut u64,
    valid: *mut u64,
    train_present: *mut u8,
    valid_present: *mut u8,
    len: usize,
) -> PvStatus {
    guard(|| {
        let t = handle(table, "table")?;
        check_len(len, t.table.counts().len(), "outputs")?;
        let m = match method {
            PvSplitMethod::Thinning => SplitMethod::Thinning,
            PvSplitMethod::Stratified => SplitMethod::Stratified,
            PvSplitMethod::Random => SplitMethod::Random,
        };
        let pair = split(m, &t.table, &t.expected, epsilon, seed).or_status()?;
        slice_mut(train, len, "train")?.copy_from_slice(pair.train.counts());
        slice_mut(valid, len, "valid")?.copy_from_slice(pair.valid.counts());
        for (ptr, flags) in [(train_present, &pair.train_present), (valid_present, &pair.valid_present)] {
            if !ptr.is_null() {
                for (o, &b) in slice_mut(ptr, len, "present")?.iter_mut().zip(flags) {
                    *o = b as u8;
                }
            }
        }
        Ok(())
    })
}
