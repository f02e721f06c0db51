//! C ABI for tracelam.
//!
//! Models and samplers are opaque handles created by `tl_*_new`/`tl_model_*`
//! and released with the matching `*_free`. Every fallible function returns
//! a [`TlStatus`]; on failure `tl_last_error` describes the most recent error
//! on the calling thread. Models use the standard builtin registry.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::{Arc, OnceLock};

use tracelam::ast::{GeneralizedValue, Term, Value};
use tracelam::builtins::Registry;
use tracelam::church;
use tracelam::eval::{EvalError, Evaluator, Status, DEFAULT_FUEL};
use tracelam::infer::{Chain, InferError, MHConfig, RejectionSampler, Sample};
use tracelam::syntax::parse_term;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    EvalError = 4,
    InvalidConfig = 5,
    InitFailure = 6,
    RetryExhausted = 7,
    Panic = 8,
}

/// Outcome of a run against a fixed trace.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TlRunStatus {
    Completed = 0,
    TraceMismatch = 1,
    FuelExhausted = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TlRunResult {
    pub status: TlRunStatus,
    /// The run ended in a value (as opposed to `fail`).
    pub is_value: bool,
    /// The value if it is a constant, NaN otherwise.
    pub value: f64,
    pub log_weight: f64,
    pub steps: u64,
}

/// A draw from a sampler.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TlSample {
    /// The value if it is a constant, NaN for λ-values.
    pub value: f64,
    pub log_weight: f64,
    pub accepted: bool,
    /// Number of random choices in the sample's trace.
    pub trace_len: usize,
}

/// A closed core term.
pub struct TlModel {
    term: Arc<Term>,
}

enum SamplerKind {
    Mh(Chain<'static>),
    Rejection(RejectionSampler<'static>),
}

/// An unbounded stream of posterior samples.
pub struct TlSampler {
    kind: SamplerKind,
}

fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(Registry::standard)
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: TlStatus, message: impl ToString) -> TlStatus {
    let msg = CString::new(message.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn guard(f: impl FnOnce() -> TlStatus) -> TlStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(TlStatus::Panic, "internal panic"))
}

fn infer_status(e: &InferError) -> TlStatus {
    match e {
        InferError::InitFailure { .. } => TlStatus::InitFailure,
        InferError::RetryExhausted { .. } => TlStatus::RetryExhausted,
        InferError::InvalidConfig(_) => TlStatus::InvalidConfig,
        InferError::Eval(_) => TlStatus::EvalError,
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, TlStatus> {
    if s.is_null() {
        return Err(fail(TlStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| fail(TlStatus::InvalidUtf8, e))
}

fn const_or_nan(v: &Value) -> f64 {
    v.as_const().unwrap_or(f64::NAN)
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn new_model(term: Term, out: *mut *mut TlModel) -> TlStatus {
    if let Some(x) = term.first_free_var() {
        return fail(TlStatus::ParseError, format!("unbound variable `{x}`"));
    }
    if let Err(e) = registry().validate(&term) {
        return fail(TlStatus::ParseError, e);
    }
    let model = Box::new(TlModel { term: Arc::new(term) });
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(model) };
    TlStatus::Ok
}

/// Compiles a Church `(query ...)` program.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_model_from_church(source: *const c_char, out: *mut *mut TlModel) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullArgument, "null output pointer");
        }
        let src = match read_str(source) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match church::compile(src, registry()) {
            Ok(term) => new_model(term, out),
            Err(e) => fail(TlStatus::ParseError, e),
        }
    })
}

/// Parses a core term in the canonical text format.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_model_from_core(source: *const c_char, out: *mut *mut TlModel) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return fail(TlStatus::NullArgument, "null output pointer");
        }
        let src = match read_str(source) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match parse_term(src) {
            Ok(term) => new_model(term, out),
            Err(e) => fail(TlStatus::ParseError, e),
        }
    })
}

/// # Safety
/// `model` must come from `tl_model_from_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_model_free(model: *mut TlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// The model's core term as text; release with `tl_string_free`. NULL if
/// `model` is NULL.
///
/// # Safety
/// `model` must be a live model handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tl_model_core_text(model: *const TlModel) -> *mut c_char {
    let Some(model) = model.as_ref() else { return ptr::null_mut() };
    CString::new(model.term.to_string()).map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the model on `trace[0..len]` with the small-step machine.
/// A `fuel` of 0 selects the default budget.
///
/// # Safety
/// `model` must be live, `trace` must point to `len` readable doubles (or be
/// NULL with `len == 0`), and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_model_eval(
    model: *const TlModel,
    trace: *const f64,
    len: usize,
    fuel: u64,
    out: *mut TlRunResult,
) -> TlStatus {
    guard(|| {
        let Some(model) = model.as_ref() else { return fail(TlStatus::NullArgument, "null model") };
        if out.is_null() || (trace.is_null() && len > 0) {
            return fail(TlStatus::NullArgument, "null pointer argument");
        }
        let trace = if len == 0 { &[][..] } else { std::slice::from_raw_parts(trace, len) };
        let ev = Evaluator::new(registry()).with_fuel(if fuel == 0 { DEFAULT_FUEL } else { fuel });
        let outcome = match ev.run_small_step(&model.term, trace) {
            Ok(o) => o,
            Err(e @ EvalError::OpenTerm(_)) | Err(e @ EvalError::Builtin(_)) => return fail(TlStatus::EvalError, e),
        };
        let status = match outcome.status {
            Status::Completed => TlRunStatus::Completed,
            Status::TraceMismatch => TlRunStatus::TraceMismatch,
            Status::FuelExhausted => TlRunStatus::FuelExhausted,
        };
        let (is_value, value) = match &outcome.result {
            GeneralizedValue::Val(v) => (true, const_or_nan(v)),
            GeneralizedValue::Fail => (false, f64::NAN),
        };
        *out = TlRunResult { status, is_value, value, log_weight: outcome.weight.ln(), steps: outcome.steps };
        TlStatus::Ok
    })
}

fn new_sampler(kind: SamplerKind, out: *mut *mut TlSampler) -> TlStatus {
    // SAFETY: checked non-null by the callers.
    unsafe { *out = Box::into_raw(Box::new(TlSampler { kind })) };
    TlStatus::Ok
}

/// Starts a Metropolis-Hastings chain. The model may be freed afterwards.
/// A `fuel` of 0 selects the default budget.
///
/// # Safety
/// `model` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tl_mh_new(
    model: *const TlModel,
    sigma: f64,
    burn_in: usize,
    thin: usize,
    seed: u64,
    fuel: u64,
    out: *mut *mut TlSampler,
) -> TlStatus {
    guard(|| {
        let Some(model) = model.as_ref() else { return fail(TlStatus::NullArgument, "null model") };
        if out.is_null() {
            return fail(TlStatus::NullArgument, "null output pointer");
        }
        let cfg = MHConfig {
            sigma,
            samples: usize::MAX,
            burn_in,
            thin,
            seed,
            fuel: if fuel == 0 { DEFAULT_FUEL } else { fuel },
            ..MHConfig::default()
        };
        match Chain::new(Evaluator::new(registry()), model.term.clone(), cfg) {
            Ok(chain) => new_sampler(SamplerKind::Mh(chain), out),
            Err(e) => fail(infer_status(&e), e),
        }
    })
}

/// Starts a rejection sampler that gives up after `max_retries` consecutive
/// rejected runs. The model may be freed afterwards.
///
/// # Safety
/// `model` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tl_rejection_new(
    model: *const TlModel,
    seed: u64,
    max_retries: u64,
    out: *mut *mut TlSampler,
) -> TlStatus {
    guard(|| {
        let Some(model) = model.as_ref() else { return fail(TlStatus::NullArgument, "null model") };
        if out.is_null() {
            return fail(TlStatus::NullArgument, "null output pointer");
        }
        let sampler = RejectionSampler::with_stream(
            Evaluator::new(registry()),
            model.term.clone(),
            usize::MAX,
            seed,
            max_retries,
            0,
        );
        new_sampler(SamplerKind::Rejection(sampler), out)
    })
}

/// Draws the next sample.
///
/// # Safety
/// `sampler` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tl_sampler_next(sampler: *mut TlSampler, out: *mut TlSample) -> TlStatus {
    guard(|| {
        let Some(sampler) = sampler.as_mut() else { return fail(TlStatus::NullArgument, "null sampler") };
        if out.is_null() {
            return fail(TlStatus::NullArgument, "null output pointer");
        }
        let next: Option<Result<Sample, InferError>> = match &mut sampler.kind {
            SamplerKind::Mh(c) => c.next(),
            SamplerKind::Rejection(r) => r.next(),
        };
        match next {
            Some(Ok(s)) => {
                *out = TlSample {
                    value: const_or_nan(&s.value),
                    log_weight: s.log_weight,
                    accepted: s.accepted,
                    trace_len: s.trace.len(),
                };
                TlStatus::Ok
            }
            Some(Err(e)) => fail(infer_status(&e), e),
            None => fail(TlStatus::RetryExhausted, "the sampler is exhausted"),
        }
    })
}

/// # Safety
/// `sampler` must come from `tl_mh_new`/`tl_rejection_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_sampler_free(sampler: *mut TlSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}
