//! C ABI over `scdl-core`.
//!
//! Every fallible call returns an [`ScdlStatus`]; on failure the message is
//! available from [`scdl_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_parse`/`*_load` and released with the
//! matching `*_free`. Variable-length outputs use a two-call pattern: pass a
//! buffer and its capacity, and the required length is always written to
//! `out_len`; `ScdlStatus::BufferTooSmall` is returned when it does not fit.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use scdl_core::loss::{self, CompositeLossConfig};
use scdl_core::network::MlpModel;
use scdl_core::sampler::{sample_opposite_rt, sample_opposite_sd};
use scdl_core::theory::{self, DiscreteInstance, TransitionMatrix};
use scdl_core::{ClassId, Error, ProbVector, SeededRng, SemanticPrior};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Validation = 4,
    DimensionMismatch = 5,
    Format = 6,
    Io = 7,
    Divergence = 8,
    EnumerationTooLarge = 9,
    DegenerateMargin = 10,
    BufferTooSmall = 11,
    InvalidUtf8 = 12,
    Panic = 255,
}

/// Opposite-label sampling rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScdlOppositeMode {
    /// Outside the true label's colony.
    Sd = 0,
    /// Any class other than the true label.
    Rt = 1,
}

pub struct ScdlPrior(SemanticPrior);
pub struct ScdlRng(SeededRng);
pub struct ScdlTransition(TransitionMatrix);
pub struct ScdlModel(MlpModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ScdlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => ScdlStatus::Parse,
            Error::Validation(_) => ScdlStatus::Validation,
            Error::Format { .. } => ScdlStatus::Format,
            Error::DimensionMismatch { .. } => ScdlStatus::DimensionMismatch,
            Error::InvalidArgument(_) => ScdlStatus::InvalidArgument,
            Error::Divergence { .. } => ScdlStatus::Divergence,
            Error::EnumerationTooLarge { .. } => ScdlStatus::EnumerationTooLarge,
            Error::DegenerateMargin { .. } => ScdlStatus::DegenerateMargin,
            Error::ReadFile { .. } | Error::Io(_) | Error::Csv(_) => ScdlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ScdlStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(ScdlStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, converting errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScdlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(msg);
            ScdlStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn as_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn as_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(ScdlStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    write_out(out_len, src.len(), "out_len")?;
    if src.len() > cap {
        return Err(Failure(
            ScdlStatus::BufferTooSmall,
            format!("need {} elements, buffer holds {cap}", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn scdl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// Priors ----------------------------------------------------------------------

/// Parses taxonomy text.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_parse(text: *const c_char, out: *mut *mut ScdlPrior) -> ScdlStatus {
    guard(|| {
        let prior = SemanticPrior::parse(as_str(text, "text")?)?;
        write_out(out, boxed(ScdlPrior(prior)), "out")
    })
}

/// Loads a builtin prior: `fashion-mnist`, `cifar10`, `cifar100-sd-v1` or `cifar100-sd-v2`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_builtin(name: *const c_char, out: *mut *mut ScdlPrior) -> ScdlStatus {
    guard(|| {
        let name = as_str(name, "name")?;
        let prior = SemanticPrior::builtin(name).ok_or_else(|| invalid(format!("no builtin prior \"{name}\"")))?;
        write_out(out, boxed(ScdlPrior(prior)), "out")
    })
}

/// # Safety
/// `prior` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_free(prior: *mut ScdlPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_class_count(prior: *const ScdlPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.class_count())
}

/// Number of colonies, or 0 for a null handle.
///
/// # Safety
/// `prior` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_colony_count(prior: *const ScdlPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.colonies().len())
}

/// Index of the colony holding `class`.
///
/// # Safety
/// `prior` must be a live handle and `out_colony` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_colony_of(
    prior: *const ScdlPrior,
    class: usize,
    out_colony: *mut usize,
) -> ScdlStatus {
    guard(|| {
        let p = &as_ref(prior, "prior")?.0;
        let y = p.class_id(class)?;
        write_out(out_colony, p.colony_index_of(y), "out_colony")
    })
}

/// Classes outside the colony of `class`, ascending.
///
/// # Safety
/// `buf` must hold `cap` elements (or be null with `cap == 0`); `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_prior_opposite_pool(
    prior: *const ScdlPrior,
    class: usize,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> ScdlStatus {
    guard(|| {
        let p = &as_ref(prior, "prior")?.0;
        let pool: Vec<usize> = p.opposite_pool(p.class_id(class)?).iter().map(|c| c.0).collect();
        copy_out(&pool, buf, cap, out_len)
    })
}

// Sampling --------------------------------------------------------------------

#[no_mangle]
pub extern "C" fn scdl_rng_new(seed: u64) -> *mut ScdlRng {
    boxed(ScdlRng(SeededRng::new(seed)))
}

/// # Safety
/// `rng` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scdl_rng_free(rng: *mut ScdlRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Draws one opposite label for `class`.
///
/// # Safety
/// `prior` and `rng` must be live handles and `out_label` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_sample_opposite(
    prior: *const ScdlPrior,
    rng: *mut ScdlRng,
    class: usize,
    mode: ScdlOppositeMode,
    out_label: *mut usize,
) -> ScdlStatus {
    guard(|| {
        let p = &as_ref(prior, "prior")?.0;
        let r = &mut as_mut(rng, "rng")?.0;
        let y = p.class_id(class)?;
        let label = match mode {
            ScdlOppositeMode::Sd => sample_opposite_sd(p, y, r),
            ScdlOppositeMode::Rt => sample_opposite_rt(p.class_count(), y, r),
        };
        write_out(out_label, label.value.0, "out_label")
    })
}

// Loss ------------------------------------------------------------------------

/// Composite loss of one sample from its logits, and optionally its logit gradient.
///
/// `opposite` < 0 means no opposite label. `out_grad` may be null; otherwise it
/// must hold `class_count` values.
///
/// # Safety
/// `logits` must hold `class_count` values and `out_loss` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn scdl_composite_loss(
    logits: *const f64,
    class_count: usize,
    label: usize,
    opposite: i64,
    alpha1: f64,
    alpha2: f64,
    prob_clamp: f64,
    out_loss: *mut f64,
    out_grad: *mut f64,
) -> ScdlStatus {
    guard(|| {
        let z = as_slice(logits, class_count, "logits")?;
        let cfg = CompositeLossConfig::new(alpha1, alpha2)?.with_clamp(prob_clamp);
        cfg.validate()?;
        if label >= class_count {
            return Err(invalid(format!("label {label} outside [0, {class_count})")));
        }
        let y_bar = match opposite {
            o if o < 0 => None,
            o if (o as usize) < class_count && o as usize != label => Some(ClassId(o as usize)),
            o => return Err(invalid(format!("opposite label {o} invalid for label {label}"))),
        };
        let mut grad = vec![0.0; class_count];
        let l = loss::composite_loss_and_grad(z, ClassId(label), y_bar, &cfg, &mut grad);
        write_out(out_loss, l.composite, "out_loss")?;
        if !out_grad.is_null() {
            ptr::copy_nonoverlapping(grad.as_ptr(), out_grad, class_count);
        }
        Ok(())
    })
}

// Transition operator ---------------------------------------------------------

/// # Safety
/// `prior` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_transition_new(prior: *const ScdlPrior, out: *mut *mut ScdlTransition) -> ScdlStatus {
    guard(|| {
        let p = &as_ref(prior, "prior")?.0;
        write_out(out, boxed(ScdlTransition(theory::build_transition(p))), "out")
    })
}

/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scdl_transition_free(t: *mut ScdlTransition) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Row-major `c × c` entries, `P(opposite = j | label = i)` at `i * c + j`.
///
/// # Safety
/// `buf` must hold `cap` values; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_transition_entries(
    t: *const ScdlTransition,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ScdlStatus {
    guard(|| copy_out(as_ref(t, "transition")?.0.entries(), buf, cap, out_len))
}

/// Opposite-label distribution induced by the class posterior `posterior`.
///
/// # Safety
/// `posterior` and `out` must each hold `class_count` values.
#[no_mangle]
pub unsafe extern "C" fn scdl_induced_opposite(
    t: *const ScdlTransition,
    posterior: *const f64,
    class_count: usize,
    out: *mut f64,
) -> ScdlStatus {
    guard(|| {
        let t = &as_ref(t, "transition")?.0;
        if class_count != t.class_count() {
            return Err(Error::DimensionMismatch {
                expected: t.class_count(),
                actual: class_count,
            }
            .into());
        }
        let s = ProbVector::new(as_slice(posterior, class_count, "posterior")?.to_vec())?;
        let s_bar = theory::induced_opposite(&s, t)?;
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(s_bar.as_slice().as_ptr(), out, class_count);
        Ok(())
    })
}

/// Exhaustive check on a discrete instance. `cond` is row-major, one row of
/// `class_count` posteriors per support point.
///
/// # Safety
/// `point_mass` must hold `support` values, `cond` `support * class_count`
/// values; the output pointers must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn scdl_verify_minimizer_agreement(
    prior: *const ScdlPrior,
    point_mass: *const f64,
    support: usize,
    cond: *const f64,
    class_count: usize,
    alpha1: f64,
    alpha2: f64,
    out_agreement: *mut bool,
    out_risk_gap: *mut f64,
) -> ScdlStatus {
    guard(|| {
        let p = &as_ref(prior, "prior")?.0;
        let mass = as_slice(point_mass, support, "point_mass")?.to_vec();
        let rows = as_slice(cond, support * class_count, "cond")?
            .chunks(class_count.max(1))
            .map(<[f64]>::to_vec)
            .collect();
        let inst = DiscreteInstance::new(mass, rows)?;
        let report = theory::verify_theorem1(&inst, p, &CompositeLossConfig::new(alpha1, alpha2)?)?;
        write_out(out_agreement, report.agreement, "out_agreement")?;
        write_out(out_risk_gap, report.risk_gap, "out_risk_gap")
    })
}

// Models ----------------------------------------------------------------------

/// He-initialized ReLU MLP.
///
/// # Safety
/// `hidden` must hold `hidden_len` widths and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_new(
    input_dim: usize,
    hidden: *const usize,
    hidden_len: usize,
    class_count: usize,
    seed: u64,
    out: *mut *mut ScdlModel,
) -> ScdlStatus {
    guard(|| {
        let hidden = as_slice(hidden, hidden_len, "hidden")?;
        if input_dim == 0 || class_count < 2 || hidden.contains(&0) {
            return Err(invalid("dimensions must be positive and class_count at least 2"));
        }
        let model = MlpModel::new(input_dim, hidden, class_count, &mut SeededRng::new(seed));
        write_out(out, boxed(ScdlModel(model)), "out")
    })
}

/// Reads a checkpoint produced by `scdl_model_save` or the Rust API.
///
/// # Safety
/// `bytes` must hold `len` bytes and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_load(bytes: *const u8, len: usize, out: *mut *mut ScdlModel) -> ScdlStatus {
    guard(|| {
        let model = MlpModel::read_checkpoint(as_slice(bytes, len, "bytes")?)?;
        write_out(out, boxed(ScdlModel(model)), "out")
    })
}

/// Serializes the model into `buf`.
///
/// # Safety
/// `buf` must hold `cap` bytes (or be null with `cap == 0`); `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_save(
    model: *const ScdlModel,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> ScdlStatus {
    guard(|| {
        let mut bytes = Vec::new();
        as_ref(model, "model")?.0.write_checkpoint(&mut bytes)?;
        copy_out(&bytes, buf, cap, out_len)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_free(model: *mut ScdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Class probabilities and predicted label for one feature vector.
///
/// # Safety
/// `features` must hold `dim` values; `out_probs` must be null or hold the
/// model's class count; `out_label` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_predict(
    model: *const ScdlModel,
    features: *const f64,
    dim: usize,
    out_probs: *mut f64,
    out_label: *mut usize,
) -> ScdlStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.0;
        let pred = m.forward(as_slice(features, dim, "features")?)?;
        if !out_probs.is_null() {
            ptr::copy_nonoverlapping(pred.probs.as_slice().as_ptr(), out_probs, pred.probs.len());
        }
        write_out(out_label, pred.label.0, "out_label")
    })
}
