//! C ABI for the `rrdph` library.
//!
//! Every fallible function returns an [`RrdphStatus`]; on failure a message is
//! available from [`rrdph_last_error`] on the calling thread. Models and fit
//! results are opaque handles released with their `_free` function. Panics
//! never cross the boundary: they are reported as [`RrdphStatus::Panic`].
//!
//! Matrices are passed row-major. Joint pmf tables are indexed
//! `[y2 * (y1_max + 1) + y1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rrdph::em::{em_fit, EmConfig, FitResult, IemFamily, IemRewards};
use rrdph::iem::{iem_model, IemSpec};
use rrdph::simulate::{simulate_expanded, SimConfig};
use rrdph::{expand, joint_pmf, joint_pmf_table, DphModel, Error, ExpandedModel, JointObservation, RewardKind, RewardProbs};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrdphStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A parameter, dimension or buffer length is invalid.
    InvalidArgument = 2,
    /// A numerical failure: singular system, zero likelihood, non-convergence.
    Numerical = 3,
    /// A size or step budget was exceeded.
    Budget = 4,
    /// An internal invariant was violated.
    Internal = 5,
    /// A panic was caught.
    Panic = 6,
}

/// Distribution of the per-visit rewards.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RrdphRewardKind {
    Bernoulli = 0,
    Geometric = 1,
}

impl From<RrdphRewardKind> for RewardKind {
    fn from(k: RrdphRewardKind) -> Self {
        match k {
            RrdphRewardKind::Bernoulli => RewardKind::Bernoulli,
            RrdphRewardKind::Geometric => RewardKind::Geometric,
        }
    }
}

/// Opaque random-reward model.
pub struct RrdphModel {
    inner: ExpandedModel,
}

/// Opaque EM fit result.
pub struct RrdphFit {
    inner: FitResult,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> RrdphStatus {
    match e {
        Error::SingularResolvent
        | Error::ZeroLikelihoodObservation { .. }
        | Error::DegenerateCounts(_)
        | Error::IrlsNonConvergence { .. }
        | Error::RankDeficientDesign
        | Error::DivergentSeries { .. }
        | Error::OutsideRadius => RrdphStatus::Numerical,
        Error::StepCapExceeded { .. } | Error::LatticeTooLarge { .. } | Error::BudgetExceeded { .. } => {
            RrdphStatus::Budget
        }
        Error::NonMonotoneLikelihood { .. } => RrdphStatus::Internal,
        _ => RrdphStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RrdphStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RrdphStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            RrdphStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(message))) => {
            set_error(message);
            RrdphStatus::InvalidArgument
        }
        Ok(Err(Failure::Model(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            RrdphStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable values.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` writable values.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn model_ref<'a>(model: *const RrdphModel) -> Result<&'a ExpandedModel, Failure> {
    if model.is_null() {
        return Err(Failure::Null("model"));
    }
    // SAFETY: non-null handles come from `rrdph_model_new` or `rrdph_iem_new`.
    Ok(unsafe { &(*model).inner })
}

unsafe fn fit_ref<'a>(fit: *const RrdphFit) -> Result<&'a RrdphFit, Failure> {
    if fit.is_null() {
        return Err(Failure::Null("fit"));
    }
    // SAFETY: non-null handles come from `rrdph_fit_iem`.
    Ok(unsafe { &*fit })
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `out` is valid for writes.
    unsafe { out.write(value) };
    Ok(())
}

fn to_usize(v: u64, what: &str) -> Result<usize, Failure> {
    usize::try_from(v).map_err(|_| Failure::Invalid(format!("{what} = {v} does not fit in memory")))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn rrdph_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a random-reward model from `pi` (length `d`), `t` (`d * d`,
/// row-major) and per-state reward probabilities `rewards` (length `d`).
///
/// # Safety
/// The arrays must hold the stated number of values and `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_model_new(
    kind: RrdphRewardKind,
    d: usize,
    pi: *const f64,
    t: *const f64,
    rewards: *const f64,
    out: *mut *mut RrdphModel,
) -> RrdphStatus {
    guard(|| unsafe {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        out.write(ptr::null_mut());
        let size = d.checked_mul(d).ok_or_else(|| Failure::Invalid(format!("d = {d} is too large")))?;
        let pi = slice(pi, d, "pi")?;
        let t = slice(t, size, "t")?;
        let rewards = slice(rewards, d, "rewards")?;
        let rows: Vec<Vec<f64>> = t.chunks(d.max(1)).map(|r| r.to_vec()).collect();
        let base = DphModel::from_rows(pi, &rows)?;
        let inner = expand(&base, kind.into(), &RewardProbs(rewards.to_vec()))?;
        out.write(Box::into_raw(Box::new(RrdphModel { inner })));
        Ok(())
    })
}

/// Builds an inertia-escalation model with `d` levels, inertia `nu`,
/// escalation `eta` and geometric reward probabilities `q` (length `d`).
///
/// # Safety
/// `q` must hold `d` values and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_iem_new(
    d: usize,
    nu: f64,
    eta: f64,
    q: *const f64,
    out: *mut *mut RrdphModel,
) -> RrdphStatus {
    guard(|| unsafe {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        out.write(ptr::null_mut());
        let q = slice(q, d, "q")?;
        let inner = iem_model(&IemSpec::new(d, nu, eta, RewardProbs(q.to_vec())))?;
        out.write(Box::into_raw(Box::new(RrdphModel { inner })));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrdph_model_free(model: *mut RrdphModel) {
    if !model.is_null() {
        // SAFETY: the handle was created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of states of the underlying chain.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_model_dim(model: *const RrdphModel, out: *mut usize) -> RrdphStatus {
    guard(|| unsafe { write(out, model_ref(model)?.base_dim(), "out") })
}

/// `P(Y1 = y1, Y2 = y2)`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_joint_pmf(model: *const RrdphModel, y1: u64, y2: u64, out: *mut f64) -> RrdphStatus {
    guard(|| unsafe {
        let m = model_ref(model)?;
        let y = JointObservation::new(to_usize(y1, "y1")?, to_usize(y2, "y2")?);
        write(out, joint_pmf(m, y)?, "out")
    })
}

/// Fills `out` (length `len`, at least `(y1_max + 1) * (y2_max + 1)`) with
/// the joint pmf, indexed `[y2 * (y1_max + 1) + y1]`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_joint_pmf_table(
    model: *const RrdphModel,
    y1_max: usize,
    y2_max: usize,
    out: *mut f64,
    len: usize,
) -> RrdphStatus {
    guard(|| unsafe {
        let m = model_ref(model)?;
        let need = y1_max
            .checked_add(1)
            .and_then(|a| y2_max.checked_add(1).and_then(|b| a.checked_mul(b)))
            .ok_or_else(|| Failure::Invalid("table bounds are too large".into()))?;
        if len < need {
            return Err(Failure::Invalid(format!("buffer holds {len} values, {need} needed")));
        }
        let table = joint_pmf_table(m, y1_max, y2_max)?;
        let dst = slice_mut(out, need, "out")?;
        for (dst_row, row) in dst.chunks_mut(y1_max + 1).zip(&table) {
            dst_row.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Joint generating function `E[theta1^Y1 theta2^Y2]`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_pgf(model: *const RrdphModel, theta1: f64, theta2: f64, out: *mut f64) -> RrdphStatus {
    guard(|| unsafe { write(out, model_ref(model)?.pgf(theta1, theta2)?, "out") })
}

/// `E[Y1]` and `E[Y2]`.
///
/// # Safety
/// `model` must be a live handle and both outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_expected_rewards(
    model: *const RrdphModel,
    out_y1: *mut f64,
    out_y2: *mut f64,
) -> RrdphStatus {
    guard(|| unsafe {
        let (a, b) = model_ref(model)?.expected_rewards()?;
        write(out_y1, a, "out_y1")?;
        write(out_y2, b, "out_y2")
    })
}

/// Draws `n` observations with generator `seed` into `y1` and `y2`.
///
/// # Safety
/// `model` must be a live handle and `y1`, `y2` valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_simulate(
    model: *const RrdphModel,
    n: usize,
    seed: u64,
    y1: *mut u64,
    y2: *mut u64,
) -> RrdphStatus {
    guard(|| unsafe {
        let m = model_ref(model)?;
        let a = slice_mut(y1, n, "y1")?;
        let b = slice_mut(y2, n, "y2")?;
        let draws = simulate_expanded(m, &SimConfig::new(seed, n))?;
        for ((a, b), y) in a.iter_mut().zip(b.iter_mut()).zip(&draws) {
            *a = y.y1 as u64;
            *b = y.y2 as u64;
        }
        Ok(())
    })
}

/// Fits a homogeneous inertia-escalation model with `d` levels to `n`
/// observations by EM. With `linear_rewards` nonzero the reward probabilities
/// follow `logit(q_j) = b0 + b1 j`; otherwise each is free. `max_iter` and
/// `min_var` of zero select the defaults (500 and 1e-6).
///
/// # Safety
/// `y1` and `y2` must hold `n` values and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_iem(
    d: usize,
    linear_rewards: i32,
    y1: *const u64,
    y2: *const u64,
    n: usize,
    max_iter: usize,
    min_var: f64,
    out: *mut *mut RrdphFit,
) -> RrdphStatus {
    guard(|| unsafe {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        out.write(ptr::null_mut());
        let a = slice(y1, n, "y1")?;
        let b = slice(y2, n, "y2")?;
        let observations = a
            .iter()
            .zip(b)
            .map(|(&a, &b)| Ok(JointObservation::new(to_usize(a, "y1")?, to_usize(b, "y2")?)))
            .collect::<Result<Vec<_>, Failure>>()?;
        let rewards = if linear_rewards != 0 {
            IemRewards::Linear
        } else {
            IemRewards::Free
        };
        let family = IemFamily::homogeneous(d, rewards)?;
        let defaults = EmConfig::default();
        let config = EmConfig {
            max_iter: if max_iter == 0 { defaults.max_iter } else { max_iter },
            min_var: if min_var == 0.0 { defaults.min_var } else { min_var },
            ..defaults
        };
        let inner = em_fit(&family, &observations, &config)?;
        let names = inner
            .names
            .iter()
            .map(|s| CString::new(s.as_str()).unwrap_or_default())
            .collect();
        out.write(Box::into_raw(Box::new(RrdphFit { inner, names })));
        Ok(())
    })
}

/// Releases a fit result. Null is ignored.
///
/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_free(fit: *mut RrdphFit) {
    if !fit.is_null() {
        // SAFETY: the handle was created by `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(fit) });
    }
}

/// Number of estimated parameters.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_param_count(fit: *const RrdphFit, out: *mut usize) -> RrdphStatus {
    guard(|| unsafe { write(out, fit_ref(fit)?.inner.params.len(), "out") })
}

/// Name of parameter `index`; the string lives as long as the fit.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_param_name(fit: *const RrdphFit, index: usize, out: *mut *const c_char) -> RrdphStatus {
    guard(|| unsafe {
        let f = fit_ref(fit)?;
        let name = f
            .names
            .get(index)
            .ok_or_else(|| Failure::Invalid(format!("parameter index {index} out of range")))?;
        write(out, name.as_ptr(), "out")
    })
}

/// Estimate of parameter `index`.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_param_value(fit: *const RrdphFit, index: usize, out: *mut f64) -> RrdphStatus {
    guard(|| unsafe {
        let f = fit_ref(fit)?;
        let v = *f
            .inner
            .params
            .get(index)
            .ok_or_else(|| Failure::Invalid(format!("parameter index {index} out of range")))?;
        write(out, v, "out")
    })
}

/// Final log-likelihood, iteration count and convergence flag (1 or 0).
///
/// # Safety
/// `fit` must be a live handle and the outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn rrdph_fit_summary(
    fit: *const RrdphFit,
    loglik: *mut f64,
    iterations: *mut usize,
    converged: *mut i32,
) -> RrdphStatus {
    guard(|| unsafe {
        let f = &fit_ref(fit)?.inner;
        write(loglik, f.loglik(), "loglik")?;
        write(iterations, f.iterations, "iterations")?;
        write(converged, f.converged as i32, "converged")
    })
}
