//! C ABI over `lars-ue`.
//!
//! Every fallible function returns a [`LarsUeStatus`] and writes its result
//! through an out-pointer. On failure a message is stored per thread and can
//! be read with [`lars_ue_last_error`]. Panics are caught at the boundary and
//! reported as `LARS_UE_STATUS_INTERNAL`.
//!
//! Models are opaque: obtain one with [`lars_ue_model_load`] and release it
//! with [`lars_ue_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use lars_ue::data::TokenTrace;
use lars_ue::lars::{load_model, LarsModel};
use lars_ue::{metrics, numerics, scoring, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LarsUeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Undefined = 5,
    Internal = 6,
}

/// A loaded LARS scorer.
pub struct LarsUeModel {
    inner: LarsModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> LarsUeStatus {
    match err {
        Error::Io { .. } => LarsUeStatus::Io,
        Error::Container(_) | Error::Json { .. } | Error::Invalid { .. } => LarsUeStatus::Format,
        Error::MetricUndefined(_) => LarsUeStatus::Undefined,
        _ => LarsUeStatus::InvalidArgument,
    }
}

struct Failure(LarsUeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LarsUeStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LarsUeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LarsUeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LarsUeStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LarsUeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn lars_ue_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lars_ue_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model file. On success `*out` owns a handle that must be passed
/// to `lars_ue_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_model_load(path: *const c_char, out: *mut *mut LarsUeModel) -> LarsUeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let path = str_arg(path, "path")?;
        let model = load_model(path)?;
        *out = Box::into_raw(Box::new(LarsUeModel { inner: model }));
        Ok(())
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must come from `lars_ue_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_model_free(model: *mut LarsUeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores one answer: `tokens` and `logprobs` hold `len` entries each.
/// Writes the probability-like score in (0, 1].
///
/// # Safety
/// All pointers must be valid for the stated lengths; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_model_score(
    model: *const LarsUeModel,
    question: *const c_char,
    tokens: *const *const c_char,
    logprobs: *const f64,
    len: usize,
    out_score: *mut f64,
) -> LarsUeStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let question = str_arg(question, "question")?;
        let token_ptrs = slice_arg(tokens, len, "tokens")?;
        let logprobs = slice_arg(logprobs, len, "logprobs")?;
        let tokens = token_ptrs
            .iter()
            .map(|&p| str_arg(p, "token").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let trace = TokenTrace::new(tokens, logprobs.to_vec())?;
        let score = model.inner.score(question, &trace)?;
        write_out(out_score, score.value())
    })
}

fn trace_of(logprobs: &[f64]) -> Result<TokenTrace, Failure> {
    Ok(TokenTrace::new(vec![String::new(); logprobs.len()], logprobs.to_vec())?)
}

/// Length-normalized score: `exp(mean(logprobs))`.
///
/// # Safety
/// `logprobs` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_length_normalized_score(
    logprobs: *const f64,
    len: usize,
    out: *mut f64,
) -> LarsUeStatus {
    guard(|| {
        let trace = trace_of(slice_arg(logprobs, len, "logprobs")?)?;
        write_out(out, scoring::length_normalized_score(&trace).value())
    })
}

/// Sequence probability: `exp(sum(logprobs))`.
///
/// # Safety
/// `logprobs` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_sequence_prob(logprobs: *const f64, len: usize, out: *mut f64) -> LarsUeStatus {
    guard(|| {
        let trace = trace_of(slice_arg(logprobs, len, "logprobs")?)?;
        write_out(out, scoring::sequence_prob(&trace).value())
    })
}

/// Rouge-L F-measure between two whitespace-tokenized strings.
///
/// # Safety
/// `a` and `b` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_rouge_l(a: *const c_char, b: *const c_char, out: *mut f64) -> LarsUeStatus {
    guard(|| {
        let a = str_arg(a, "a")?;
        let b = str_arg(b, "b")?;
        write_out(out, numerics::rouge_l_f(a, b))
    })
}

/// AUROC of `uncertainties` against labels (1 = correct, 0 = incorrect).
/// `LARS_UE_STATUS_UNDEFINED` when only one class is present.
///
/// # Safety
/// Both arrays must hold `len` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_auroc(
    uncertainties: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> LarsUeStatus {
    guard(|| {
        let u = slice_arg(uncertainties, len, "uncertainties")?;
        let l = slice_arg(labels, len, "labels")?;
        write_out(out, metrics::auroc(u, l)?)
    })
}

/// Prediction rejection ratio of `uncertainties` against labels.
///
/// # Safety
/// Both arrays must hold `len` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lars_ue_prr(
    uncertainties: *const f64,
    labels: *const u8,
    len: usize,
    out: *mut f64,
) -> LarsUeStatus {
    guard(|| {
        let u = slice_arg(uncertainties, len, "uncertainties")?;
        let l = slice_arg(labels, len, "labels")?;
        write_out(out, metrics::prr(u, l)?)
    })
}
