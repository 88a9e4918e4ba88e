//! C ABI for faultforge.
//!
//! Models and verdicts are opaque handles owned by the caller and released
//! with [`ff_model_free`] and [`ff_verdict_free`]. Every fallible function
//! returns an [`FfStatus`]; on failure [`ff_last_error`] describes what went
//! wrong on the calling thread. Strings handed out through `char **`
//! parameters are owned by the caller and released with [`ff_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use faultforge::buchi::SearchOptions;
use faultforge::fixtures;
use faultforge::gadgets::{GadgetConfig, GadgetKind};
use faultforge::modelfmt::{parse_model, validate_baseline, BaselineError, ModelDocument};
use faultforge::synthesis::{render_trace, synthesize, Outcome, SynthesisError, ThreatModel, TraceStyle, Verdict};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    UnknownProperty = 4,
    InvalidGadget = 5,
    SynthesisError = 6,
    BaselineViolated = 7,
    Inconclusive = 8,
    UnknownFixture = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfOutcome {
    Safe = 0,
    Attack = 1,
    Inconclusive = 2,
}

/// Callers must pass one of the listed values; anything else is undefined behaviour.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfGadgetKind {
    Drop = 0,
    Replay = 1,
    Reorder = 2,
}

/// Callers must pass one of the listed values; anything else is undefined behaviour.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfTraceStyle {
    Human = 0,
    Machine = 1,
}

/// One gadget of a threat model: `kind` attached to channel `victim` with
/// fault limit `limit`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FfGadgetSpec {
    pub kind: FfGadgetKind,
    pub victim: *const c_char,
    pub limit: usize,
}

/// A parsed model.
pub struct FfModel {
    doc: ModelDocument,
}

/// The verdict of one attack search.
pub struct FfVerdict {
    verdict: Verdict,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(FfStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FfStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(FfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(FfStatus::NullArgument, format!("{what} is null")))
}

fn give_string(out: &mut *mut c_char, s: String) {
    *out = CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw();
}

fn synthesis_status(e: &SynthesisError) -> FfStatus {
    match e {
        SynthesisError::UnknownProperty(_) => FfStatus::UnknownProperty,
        SynthesisError::UnknownVictim(_) | SynthesisError::Gadget(_) => FfStatus::InvalidGadget,
        _ => FfStatus::SynthesisError,
    }
}

fn options(max_states: usize) -> SearchOptions {
    let mut o = SearchOptions::from_env();
    if max_states > 0 {
        o.max_states = max_states;
    }
    o
}

/// Message describing the last failed call on this thread, or null. The
/// pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn ff_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string obtained from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses `.fproto` text into a model.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_model_parse(text: *const c_char, out: *mut *mut FfModel) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let doc = parse_model(text).map_err(|e| Fail(FfStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(FfModel { doc }));
        Ok(())
    })
}

/// Loads a bundled model: `"tcp"` or `"abp"`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_model_fixture(name: *const c_char, out: *mut *mut FfModel) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let doc = match str_arg(name, "name")? {
            "tcp" => fixtures::tcp_model(),
            "abp" => fixtures::abp_model(),
            other => return Err(Fail(FfStatus::UnknownFixture, format!("no bundled model named {other}"))),
        };
        *out = Box::into_raw(Box::new(FfModel { doc }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_model_free(model: *mut FfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of properties declared in the model.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ff_model_property_count(model: *const FfModel) -> usize {
    model.as_ref().map_or(0, |m| m.doc.properties.len())
}

/// Name of property `index`, as a new string.
///
/// # Safety
/// `model` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_model_property_name(model: *const FfModel, index: usize, out: *mut *mut c_char) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| Fail(FfStatus::NullArgument, "model is null".into()))?;
        let p = m.doc.properties.get(index).ok_or_else(|| Fail(FfStatus::UnknownProperty, format!("no property at index {index}")))?;
        give_string(out, p.name.clone());
        Ok(())
    })
}

/// Checks every property without an attacker. `max_states` of 0 uses the
/// default cap. Returns `BaselineViolated` naming the property in the last
/// error if one fails.
///
/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ff_model_check(model: *const FfModel, max_states: usize) -> FfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Fail(FfStatus::NullArgument, "model is null".into()))?;
        match validate_baseline(&m.doc, options(max_states)) {
            Ok(_) => Ok(()),
            Err(e @ BaselineError::BaselineViolation { .. }) => Err(Fail(FfStatus::BaselineViolated, e.to_string())),
            Err(e @ BaselineError::Inconclusive(_)) => Err(Fail(FfStatus::Inconclusive, e.to_string())),
            Err(e) => Err(Fail(FfStatus::SynthesisError, e.to_string())),
        }
    })
}

/// Searches for an attack on `property` under the given gadgets.
/// `max_states` of 0 uses the default cap (or `FAULTFORGE_STATE_CAP`).
///
/// # Safety
/// `model` must be a live model handle, `property` a nul-terminated string,
/// `gadgets` an array of `gadget_count` specs (may be null when the count is
/// 0) and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_attack(
    model: *const FfModel,
    property: *const c_char,
    gadgets: *const FfGadgetSpec,
    gadget_count: usize,
    max_states: usize,
    out: *mut *mut FfVerdict,
) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| Fail(FfStatus::NullArgument, "model is null".into()))?;
        let property = str_arg(property, "property")?;
        let specs: &[FfGadgetSpec] = if gadget_count == 0 {
            &[]
        } else if gadgets.is_null() {
            return Err(Fail(FfStatus::NullArgument, "gadgets is null".into()));
        } else {
            std::slice::from_raw_parts(gadgets, gadget_count)
        };
        let mut configs = Vec::with_capacity(specs.len());
        for s in specs {
            let kind = match s.kind {
                FfGadgetKind::Drop => GadgetKind::Drop,
                FfGadgetKind::Replay => GadgetKind::Replay,
                FfGadgetKind::Reorder => GadgetKind::Reorder,
            };
            configs.push(GadgetConfig { kind, victim: str_arg(s.victim, "victim")?.to_string(), limit: s.limit });
        }
        let tm = ThreatModel::new(&m.doc, property, configs).map_err(|e| Fail(synthesis_status(&e), e.to_string()))?;
        let verdict = synthesize(&tm, options(max_states)).map_err(|e| Fail(synthesis_status(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(FfVerdict { verdict }));
        Ok(())
    })
}

/// Outcome of a verdict. A null handle reads as inconclusive.
///
/// # Safety
/// `verdict` must be null or a live verdict handle.
#[no_mangle]
pub unsafe extern "C" fn ff_verdict_outcome(verdict: *const FfVerdict) -> FfOutcome {
    match verdict.as_ref().map(|v| v.verdict.outcome) {
        Some(Outcome::Safe) => FfOutcome::Safe,
        Some(Outcome::Attack) => FfOutcome::Attack,
        _ => FfOutcome::Inconclusive,
    }
}

/// Number of product states the search explored.
///
/// # Safety
/// `verdict` must be null or a live verdict handle.
#[no_mangle]
pub unsafe extern "C" fn ff_verdict_states(verdict: *const FfVerdict) -> usize {
    verdict.as_ref().map_or(0, |v| v.verdict.stats.states)
}

/// The whole verdict, including any trace, as JSON.
///
/// # Safety
/// `verdict` must be a live verdict handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_verdict_json(verdict: *const FfVerdict, out: *mut *mut c_char) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = verdict.as_ref().ok_or_else(|| Fail(FfStatus::NullArgument, "verdict is null".into()))?;
        give_string(out, v.verdict.to_json());
        Ok(())
    })
}

/// The attack trace rendered in `style`; an empty string for verdicts
/// without a trace.
///
/// # Safety
/// `verdict` must be a live verdict handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ff_verdict_trace(verdict: *const FfVerdict, style: FfTraceStyle, out: *mut *mut c_char) -> FfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let v = verdict.as_ref().ok_or_else(|| Fail(FfStatus::NullArgument, "verdict is null".into()))?;
        let text = if v.verdict.trace.is_none() {
            String::new()
        } else {
            let style = match style {
                FfTraceStyle::Human => TraceStyle::Human,
                FfTraceStyle::Machine => TraceStyle::Machine,
            };
            render_trace(&v.verdict, style).map_err(|e| Fail(FfStatus::SynthesisError, e.to_string()))?
        };
        give_string(out, text);
        Ok(())
    })
}

/// Releases a verdict. Null is ignored.
///
/// # Safety
/// `verdict` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ff_verdict_free(verdict: *mut FfVerdict) {
    if !verdict.is_null() {
        drop(Box::from_raw(verdict));
    }
}
