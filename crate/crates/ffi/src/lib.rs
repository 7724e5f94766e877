//! C ABI over `stadion`.
//!
//! Every fallible function returns a [`StadionStatus`]; on anything other than
//! `STADION_STATUS_OK` a message is available from [`stadion_last_error`] on the same
//! thread. Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stadion::data::Dataset;
use stadion::discrepancy::{skds_empirical, skds_grad, Estimator, LossOptions};
use stadion::error::Error;
use stadion::kernels::{KernelFamily, KernelSpec};
use stadion::metrics::{wasserstein_with, wilcoxon_margin_test, Direction, WassersteinOptions};
use stadion::models::{DiffusionKind, Intervention, SdeModel};
use stadion::simulator::{euler_maruyama_sample, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StadionStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    InsufficientData = 4,
    UnsupportedKernel = 5,
    Diverged = 6,
    NotStable = 7,
    NearSingular = 8,
    NoConvergence = 9,
    NonFiniteLoss = 10,
    NonPositiveValue = 11,
    Io = 12,
    Json = 13,
    BufferTooSmall = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StadionKernel {
    Rbf = 0,
    TiltedRbf = 1,
    ImqPlus = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StadionEstimator {
    LinearPairs = 0,
    UStatistic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StadionDiffusion {
    DiagExp = 0,
    BasisCone = 1,
}

/// Opaque model handle.
pub struct StadionModel(SdeModel);

/// Opaque row-major sample matrix.
pub struct StadionDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> StadionStatus {
    match e {
        Error::InvalidInput(_) => StadionStatus::InvalidInput,
        Error::InsufficientData(_) => StadionStatus::InsufficientData,
        Error::UnsupportedKernel(_) => StadionStatus::UnsupportedKernel,
        Error::Diverged { .. } => StadionStatus::Diverged,
        Error::NotStable(_) => StadionStatus::NotStable,
        Error::NearSingular { .. } => StadionStatus::NearSingular,
        Error::NoConvergence { .. } => StadionStatus::NoConvergence,
        Error::NonFiniteLoss { .. } => StadionStatus::NonFiniteLoss,
        Error::NonPositiveValue { .. } => StadionStatus::NonPositiveValue,
        Error::Io(_) => StadionStatus::Io,
        Error::Json(_) => StadionStatus::Json,
        Error::Csv(_) => StadionStatus::Io,
    }
}

struct Fail(StadionStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(StadionStatus::Json, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> StadionStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StadionStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            StadionStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(StadionStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(StadionStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// A null pointer means no intervention.
unsafe fn intervention_arg(json: *const c_char) -> Result<Intervention, Fail> {
    if json.is_null() {
        return Ok(Intervention::identity());
    }
    Ok(serde_json::from_str(str_arg(json, "intervention")?)?)
}

fn family(k: StadionKernel) -> KernelFamily {
    match k {
        StadionKernel::Rbf => KernelFamily::Rbf,
        StadionKernel::TiltedRbf => KernelFamily::TiltedRbf,
        StadionKernel::ImqPlus => KernelFamily::ImqPlus,
    }
}

fn estimator(e: StadionEstimator) -> Estimator {
    match e {
        StadionEstimator::LinearPairs => Estimator::LinearPairs,
        StadionEstimator::UStatistic => Estimator::UStatistic,
    }
}

/// Message of the most recent failure on this thread, or null. Valid until the
/// next failing call on this thread.
#[no_mangle]
pub extern "C" fn stadion_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static version string.
#[no_mangle]
pub extern "C" fn stadion_version() -> *const c_char {
    static V: &CStr =
        match CStr::from_bytes_with_nul(concat!("v", env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(c) => c,
            Err(_) => panic!(),
        };
    V.as_ptr()
}

/// Parses a model from its JSON representation.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_from_json(
    json: *const c_char,
    out: *mut *mut StadionModel,
) -> StadionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model: SdeModel = serde_json::from_str(str_arg(json, "json")?)?;
        model.validate()?;
        *out = Box::into_raw(Box::new(StadionModel(model)));
        Ok(())
    })
}

/// Linear drift model with the default initialization.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_linear(
    d: usize,
    diffusion: StadionDiffusion,
    out: *mut *mut StadionModel,
) -> StadionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if d == 0 {
            return Err(Fail(
                StadionStatus::InvalidInput,
                "d must be positive".into(),
            ));
        }
        let kind = match diffusion {
            StadionDiffusion::DiagExp => DiffusionKind::DiagExp,
            StadionDiffusion::BasisCone => DiffusionKind::BasisCone,
        };
        *out = Box::into_raw(Box::new(StadionModel(SdeModel::linear(d, kind))));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_free(model: *mut StadionModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_dim(model: *const StadionModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.d)
}

/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_num_params(model: *const StadionModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_params())
}

/// Copies the parameter vector into `buf`, which must hold `num_params` values.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_get_params(
    model: *const StadionModel,
    buf: *mut f64,
    len: usize,
) -> StadionStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let p = m.0.params();
        if len < p.len() {
            return Err(Fail(
                StadionStatus::BufferTooSmall,
                format!("need {} values", p.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, p.len()).copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `params` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn stadion_model_set_params(
    model: *mut StadionModel,
    params: *const f64,
    len: usize,
) -> StadionStatus {
    guard(|| {
        let m = out_arg(model, "model")?;
        let p = slice_arg(params, len, "params")?;
        m.0.set_params(p)?;
        Ok(())
    })
}

/// Copies `n * d` row-major values into a new dataset.
///
/// # Safety
/// `values` must point to `n * d` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn stadion_dataset_new(
    values: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut StadionDataset,
) -> StadionStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Fail(StadionStatus::InvalidInput, "n * d overflows".into()))?;
        let v = slice_arg(values, len, "values")?.to_vec();
        *out = Box::into_raw(Box::new(StadionDataset(Dataset::new(n, d, v)?)));
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stadion_dataset_free(data: *mut StadionDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// # Safety
/// `data` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn stadion_dataset_rows(data: *const StadionDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `data` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn stadion_dataset_cols(data: *const StadionDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.d())
}

/// Borrowed row-major values, valid while the handle lives.
///
/// # Safety
/// `data` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn stadion_dataset_values(data: *const StadionDataset) -> *const f64 {
    data.as_ref().map_or(ptr::null(), |d| d.0.values().as_ptr())
}

/// Empirical SKDS of `model` under the intervention (JSON, or null for none).
/// When `grad_theta` is non-null it receives `num_params` values.
///
/// # Safety
/// Pointers must be valid; `grad_theta` must hold `grad_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stadion_skds(
    model: *const StadionModel,
    intervention_json: *const c_char,
    data: *const StadionDataset,
    kernel: StadionKernel,
    bandwidth: f64,
    est: StadionEstimator,
    loss_out: *mut f64,
    grad_theta: *mut f64,
    grad_len: usize,
) -> StadionStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let ds = &ref_arg(data, "data")?.0;
        let loss_out = out_arg(loss_out, "loss_out")?;
        let phi = intervention_arg(intervention_json)?;
        let k = KernelSpec::new(family(kernel), bandwidth, m.d)?;
        let opts = LossOptions::from(estimator(est));
        if grad_theta.is_null() {
            *loss_out = skds_empirical(m, &phi, &k, ds, opts)?;
        } else {
            let g = skds_grad(m, &phi, &k, ds, opts)?;
            if grad_len < g.grad.theta.len() {
                return Err(Fail(
                    StadionStatus::BufferTooSmall,
                    format!("need {} values", g.grad.theta.len()),
                ));
            }
            std::slice::from_raw_parts_mut(grad_theta, g.grad.theta.len())
                .copy_from_slice(&g.grad.theta);
            *loss_out = g.loss;
        }
        Ok(())
    })
}

/// Euler-Maruyama samples of the stationary law, started at zero.
///
/// # Safety
/// Pointers must be valid; `intervention_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn stadion_simulate(
    model: *const StadionModel,
    intervention_json: *const c_char,
    n_samples: usize,
    dt: f64,
    burn_in_steps: u64,
    thinning: u64,
    seed: u64,
    out: *mut *mut StadionDataset,
) -> StadionStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.0;
        let out = out_arg(out, "out")?;
        let phi = intervention_arg(intervention_json)?;
        let cfg = SimConfig {
            n_samples,
            dt,
            burn_in_steps,
            thinning,
            seed,
            ..SimConfig::default()
        };
        *out = Box::into_raw(Box::new(StadionDataset(euler_maruyama_sample(
            m, &phi, &cfg,
        )?)));
        Ok(())
    })
}

/// Empirical Wasserstein distance between two sample sets.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn stadion_wasserstein(
    a: *const StadionDataset,
    b: *const StadionDataset,
    seed: u64,
    out: *mut f64,
) -> StadionStatus {
    guard(|| {
        let a = &ref_arg(a, "a")?.0;
        let b = &ref_arg(b, "b")?.0;
        let out = out_arg(out, "out")?;
        let opts = WassersteinOptions {
            seed,
            ..Default::default()
        };
        *out = wasserstein_with(a, b, &opts)?.0;
        Ok(())
    })
}

/// One-sided paired Wilcoxon test with a relative margin; `ours_better`
/// selects the direction of the alternative.
///
/// # Safety
/// `ours` and `baseline` must each point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn stadion_wilcoxon(
    ours: *const f64,
    baseline: *const f64,
    n: usize,
    margin: f64,
    ours_better: bool,
    p_value: *mut f64,
) -> StadionStatus {
    guard(|| {
        let a = slice_arg(ours, n, "ours")?;
        let b = slice_arg(baseline, n, "baseline")?;
        let p = out_arg(p_value, "p_value")?;
        let dir = if ours_better {
            Direction::OursBetter
        } else {
            Direction::BaselineBetter
        };
        *p = wilcoxon_margin_test(a, b, margin, dir)?.p_value;
        Ok(())
    })
}
