//! C interface to `rbm-calib`.
//!
//! Models, sample sets and beta sets cross the boundary as opaque handles
//! created and destroyed by this library. Every fallible call returns an
//! [`RbmStatus`]; on failure `rbm_last_error` describes the problem for the
//! calling thread. Outputs are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rbm_calib::calibration::{compensate, BetaEstimator, BetaSet, BetaVariant, ModelPhase, UpdateRule};
use rbm_calib::evaluation::{kl_joint, EmpiricalDistribution};
use rbm_calib::rbm::{energy, exact_distribution, log_partition, Configuration, Multipliers, RbmParams};
use rbm_calib::sampling::{exact_sample, gibbs_sample, noisy_annealer_sample, Fidelity, GibbsSchedule, NoiseModel, SampleSet};
use rbm_calib::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EnumerationCap = 4,
    EmptySampleSet = 5,
    Parse = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RbmVariant {
    OneParameter = 0,
    ThreeParameter = 1,
    OneAndAllBias = 2,
}

impl From<RbmVariant> for BetaVariant {
    fn from(v: RbmVariant) -> Self {
        match v {
            RbmVariant::OneParameter => BetaVariant::OneParameter,
            RbmVariant::ThreeParameter => BetaVariant::ThreeParameter,
            RbmVariant::OneAndAllBias => BetaVariant::OneAndAllBias,
        }
    }
}

/// Opaque model handle.
pub struct RbmModel(RbmParams);

/// Opaque sample set handle.
pub struct RbmSamples(SampleSet);

/// Opaque calibration handle.
pub struct RbmBeta(BetaSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RbmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => RbmStatus::DimensionMismatch,
            Error::EnumerationCap { .. } => RbmStatus::EnumerationCap,
            Error::InvalidParameter(_) | Error::Config(_) => RbmStatus::InvalidArgument,
            Error::EmptySampleSet => RbmStatus::EmptySampleSet,
            Error::Parse { .. } | Error::Json(_) => RbmStatus::Parse,
            Error::Io(_) => RbmStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: RbmStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RbmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RbmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RbmStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(RbmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RbmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ptr<T>(p: *mut T, what: &str) -> Result<&mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(RbmStatus::NullPointer, format!("{what} is null")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

fn bits(xs: &[u8]) -> Result<Vec<u8>, Failure> {
    if xs.iter().any(|&x| x > 1) {
        return Err(fail(RbmStatus::InvalidArgument, "units must be 0 or 1"));
    }
    Ok(xs.to_vec())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rbm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a model from row-major `w` (`n_visible * n_hidden`), `b` and `c`.
///
/// # Safety
/// The arrays must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_model_new(
    n_visible: usize,
    n_hidden: usize,
    w: *const f64,
    b: *const f64,
    c: *const f64,
    out: *mut *mut RbmModel,
) -> RbmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let w = slice(w, n_visible * n_hidden, "w")?.to_vec();
        let b = slice(b, n_visible, "b")?.to_vec();
        let c = slice(c, n_hidden, "c")?.to_vec();
        let params = RbmParams::new(n_visible, n_hidden, w, b, c)?;
        *out = boxed(RbmModel(params));
        Ok(())
    })
}

/// Parses a model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_model_from_json(json: *const c_char, out: *mut *mut RbmModel) -> RbmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = CStr::from_ptr(borrow(json, "json")?)
            .to_str()
            .map_err(|e| fail(RbmStatus::Parse, e.to_string()))?;
        let params: RbmParams = serde_json::from_str(text).map_err(|e| fail(RbmStatus::Parse, e.to_string()))?;
        *out = boxed(RbmModel(params));
        Ok(())
    })
}

/// Writes the model's JSON form to `*out`; release it with
/// [`rbm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_model_to_json(model: *const RbmModel, out: *mut *mut c_char) -> RbmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let model = borrow(model, "model")?;
        let text = serde_json::to_string(&model.0).map_err(|e| fail(RbmStatus::Parse, e.to_string()))?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rbm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `model` must come from this library and not have been freed; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn rbm_model_free(model: *mut RbmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_model_dims(model: *const RbmModel, n_visible: *mut usize, n_hidden: *mut usize) -> RbmStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let n = out_ptr(n_visible, "n_visible")?;
        let m = out_ptr(n_hidden, "n_hidden")?;
        *n = model.0.n_visible();
        *m = model.0.n_hidden();
        Ok(())
    })
}

/// Energy of one joint configuration.
///
/// # Safety
/// `v` and `h` must hold `n_visible` and `n_hidden` bytes.
#[no_mangle]
pub unsafe extern "C" fn rbm_energy(model: *const RbmModel, v: *const u8, h: *const u8, out: *mut f64) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let out = out_ptr(out, "out")?;
        let v = bits(slice(v, model.n_visible(), "v")?)?;
        let h = bits(slice(h, model.n_hidden(), "h")?)?;
        *out = energy(model, &Configuration::new(v, h));
        Ok(())
    })
}

/// `log Z` by exact enumeration.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_log_partition(model: *const RbmModel, out: *mut f64) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let out = out_ptr(out, "out")?;
        *out = log_partition(model)?;
        Ok(())
    })
}

/// Exact samples from the enumerated distribution.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_sample_exact(
    model: *const RbmModel,
    n_samples: usize,
    seed: u64,
    out: *mut *mut RbmSamples,
) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let out = out_ptr(out, "out")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = exact_sample(&exact_distribution(model)?, n_samples, &mut rng)?;
        *out = boxed(RbmSamples(set));
        Ok(())
    })
}

/// Block Gibbs samples.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_sample_gibbs(
    model: *const RbmModel,
    n_samples: usize,
    burn_in: usize,
    thinning: usize,
    chains: usize,
    seed: u64,
    out: *mut *mut RbmSamples,
) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let out = out_ptr(out, "out")?;
        let schedule = GibbsSchedule {
            burn_in,
            thinning,
            chains,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        *out = boxed(RbmSamples(gibbs_sample(model, n_samples, &schedule, &mut rng)?));
        Ok(())
    })
}

/// Samples from a simulated annealer that multiplies each parameter by the
/// given positive factors (same shapes as the model's `w`, `b`, `c`).
///
/// # Safety
/// The factor arrays must match the model's shapes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_sample_noisy_annealer(
    model: *const RbmModel,
    w_factors: *const f64,
    b_factors: *const f64,
    c_factors: *const f64,
    n_samples: usize,
    seed: u64,
    out: *mut *mut RbmSamples,
) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let out = out_ptr(out, "out")?;
        let (n, m) = (model.n_visible(), model.n_hidden());
        let noise = NoiseModel::new(Multipliers {
            n_visible: n,
            n_hidden: m,
            w: slice(w_factors, n * m, "w_factors")?.to_vec(),
            b: slice(b_factors, n, "b_factors")?.to_vec(),
            c: slice(c_factors, m, "c_factors")?.to_vec(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        *out = boxed(RbmSamples(noisy_annealer_sample(model, &noise, n_samples, &mut rng, Fidelity::Exact)?));
        Ok(())
    })
}

/// # Safety
/// `samples` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_samples_len(samples: *const RbmSamples, out: *mut usize) -> RbmStatus {
    guard(|| {
        let samples = &borrow(samples, "samples")?.0;
        *out_ptr(out, "out")? = samples.len();
        Ok(())
    })
}

/// Copies row `k` into `v` and `h`.
///
/// # Safety
/// `v` and `h` must have room for `n_visible` and `n_hidden` bytes.
#[no_mangle]
pub unsafe extern "C" fn rbm_samples_row(samples: *const RbmSamples, k: usize, v: *mut u8, h: *mut u8) -> RbmStatus {
    guard(|| {
        let samples = &borrow(samples, "samples")?.0;
        if k >= samples.len() {
            return Err(fail(RbmStatus::InvalidArgument, format!("row {k} out of range")));
        }
        if v.is_null() || h.is_null() {
            return Err(fail(RbmStatus::NullPointer, "row buffer is null"));
        }
        let (rv, rh) = samples.row(k);
        std::slice::from_raw_parts_mut(v, rv.len()).copy_from_slice(rv);
        std::slice::from_raw_parts_mut(h, rh.len()).copy_from_slice(rh);
        Ok(())
    })
}

/// # Safety
/// `samples` must come from this library and not have been freed; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn rbm_samples_free(samples: *mut RbmSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

/// `D(Q || P)` of the samples' empirical distribution to the model.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_kl_joint(model: *const RbmModel, samples: *const RbmSamples, out: *mut f64) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let samples = &borrow(samples, "samples")?.0;
        let out = out_ptr(out, "out")?;
        let q = EmpiricalDistribution::from_samples(samples)?;
        *out = kl_joint(&q, &exact_distribution(model)?)?;
        Ok(())
    })
}

/// A beta set with the given components: 1, 3 or `1 + n_visible + n_hidden`
/// values depending on the variant. A null `components` gives all ones.
///
/// # Safety
/// `components` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_beta_new(
    variant: RbmVariant,
    n_visible: usize,
    n_hidden: usize,
    components: *const f64,
    len: usize,
    out: *mut *mut RbmBeta,
) -> RbmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let identity = BetaSet::identity(variant.into(), n_visible, n_hidden);
        let beta = if components.is_null() {
            identity
        } else {
            identity.with_components(slice(components, len, "components")?)?
        };
        beta.validate()?;
        *out = boxed(RbmBeta(beta));
        Ok(())
    })
}

/// Copies the components into `out` (capacity `len`) and their count into
/// `written`. Fails without writing when `len` is too small.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbm_beta_components(
    beta: *const RbmBeta,
    out: *mut f64,
    len: usize,
    written: *mut usize,
) -> RbmStatus {
    guard(|| {
        let comps = borrow(beta, "beta")?.0.components();
        let written = out_ptr(written, "written")?;
        if len < comps.len() {
            *written = comps.len();
            return Err(fail(
                RbmStatus::InvalidArgument,
                format!("need room for {} components, have {len}", comps.len()),
            ));
        }
        if out.is_null() {
            return Err(fail(RbmStatus::NullPointer, "out is null"));
        }
        std::slice::from_raw_parts_mut(out, comps.len()).copy_from_slice(&comps);
        *written = comps.len();
        Ok(())
    })
}

/// # Safety
/// `beta` must come from this library and not have been freed; null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn rbm_beta_free(beta: *mut RbmBeta) {
    if !beta.is_null() {
        drop(Box::from_raw(beta));
    }
}

/// The parameters to program so a sampler with factors `beta` realizes the
/// model: `params / expand(beta)`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_compensate(model: *const RbmModel, beta: *const RbmBeta, out: *mut *mut RbmModel) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let beta = &borrow(beta, "beta")?.0;
        let out = out_ptr(out, "out")?;
        *out = boxed(RbmModel(compensate(model, beta)?));
        Ok(())
    })
}

/// One estimation step from `samples`, drawn by the sampler programmed with
/// `compensate(model, beta_old)`. `layer_updates` > 0 evolves the samples
/// that many layer updates for the model phase; 0 uses exact enumeration.
/// A non-zero `collapsed` applies the single-factor update to every
/// component.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rbm_beta_estimate_step(
    model: *const RbmModel,
    samples: *const RbmSamples,
    beta_old: *const RbmBeta,
    eta: f64,
    inner_iters: usize,
    layer_updates: usize,
    collapsed: i32,
    seed: u64,
    out: *mut *mut RbmBeta,
) -> RbmStatus {
    guard(|| {
        let model = &borrow(model, "model")?.0;
        let samples = &borrow(samples, "samples")?.0;
        let beta_old = &borrow(beta_old, "beta_old")?.0;
        let out = out_ptr(out, "out")?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(fail(RbmStatus::InvalidArgument, "eta must be positive"));
        }
        let estimator = BetaEstimator {
            eta,
            inner_iters,
            model_phase: if layer_updates == 0 {
                ModelPhase::Exact
            } else {
                ModelPhase::Cd { layer_updates }
            },
            ..BetaEstimator::default()
        };
        let rule = if collapsed != 0 {
            UpdateRule::Collapsed
        } else {
            UpdateRule::PerComponent
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        *out = boxed(RbmBeta(estimator.step(model, samples, beta_old, rule, &mut rng)?));
        Ok(())
    })
}
