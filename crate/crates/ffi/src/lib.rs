//! C ABI over the synthesis pipeline.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every entry point returns an [`LsStatus`]; on failure
//! the message is available from [`ls_last_error`] on the same thread.
//! Strings handed out by a session stay valid until the session is freed;
//! strings returned through `char **` are released with [`ls_string_free`].

use locksynth::lang::{parse_program, Program};
use locksynth::lockcons::Objective;
use locksynth::pipeline::{self, Options, PipelineError, SynthesisSession};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    /// The program is not preemption-safe, violates the input precondition,
    /// or the synthesized placement failed its self-check.
    PropertyFailed = 1,
    NullArgument = 2,
    InvalidUtf8 = 3,
    ParseError = 4,
    InvalidArgument = 5,
    SynthesisError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsObjective {
    None = 0,
    Coarse = 1,
    Fine = 2,
    Perf = 3,
}

pub struct LsProgram(Program);

pub struct LsOptions(Options);

pub struct LsSession {
    inner: SynthesisSession,
    source: CString,
    report: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn guard(f: impl FnOnce() -> Result<LsStatus, (LsStatus, String)>) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            LsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LsStatus, String)> {
    if p.is_null() {
        return Err((LsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (LsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LsStatus, String)> {
    p.as_ref().ok_or_else(|| (LsStatus::NullArgument, format!("{what} is null")))
}

fn to_cstring(s: String) -> CString {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed")
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `src` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ls_program_parse(src: *const c_char, out: *mut *mut LsProgram) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err((LsStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let text = str_arg(src, "src")?;
        let p = parse_program(text).map_err(|e| (LsStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(LsProgram(p)));
        Ok(LsStatus::Ok)
    })
}

/// # Safety
/// `p` must come from `ls_program_parse` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_program_free(p: *mut LsProgram) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

#[no_mangle]
pub extern "C" fn ls_options_new() -> *mut LsOptions {
    Box::into_raw(Box::new(LsOptions(Options::default())))
}

/// # Safety
/// `o` must come from `ls_options_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_options_free(o: *mut LsOptions) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// # Safety
/// `o` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn ls_options_set_objective(o: *mut LsOptions, objective: LsObjective) -> LsStatus {
    guard(|| {
        let o = o.as_mut().ok_or((LsStatus::NullArgument, "options is null".to_string()))?;
        o.0.objective = match objective {
            LsObjective::None => Objective::None,
            LsObjective::Coarse => Objective::Coarse,
            LsObjective::Fine => Objective::Fine,
            LsObjective::Perf => Objective::Perf,
        };
        Ok(LsStatus::Ok)
    })
}

/// Number of synthesized locks; 0 restores the default.
///
/// # Safety
/// `o` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn ls_options_set_locks(o: *mut LsOptions, locks: u32) -> LsStatus {
    guard(|| {
        let o = o.as_mut().ok_or((LsStatus::NullArgument, "options is null".to_string()))?;
        o.0.locks = (locks > 0).then_some(locks as usize);
        Ok(LsStatus::Ok)
    })
}

/// Largest displacement bound; the schedule doubles from 2 up to it.
///
/// # Safety
/// `o` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn ls_options_set_bound(o: *mut LsOptions, bound: u32) -> LsStatus {
    guard(|| {
        let o = o.as_mut().ok_or((LsStatus::NullArgument, "options is null".to_string()))?;
        if bound == 0 {
            return Err((LsStatus::InvalidArgument, "bound must be positive".into()));
        }
        let mut s = Vec::new();
        let mut k = 2;
        while k < bound as usize {
            s.push(k);
            k *= 2;
        }
        s.push(bound as usize);
        o.0.synth_schedule = s.clone();
        o.0.schedule = s;
        Ok(LsStatus::Ok)
    })
}

/// # Safety
/// `o` must be a live options handle.
#[no_mangle]
pub unsafe extern "C" fn ls_options_set_seed(o: *mut LsOptions, seed: u64) -> LsStatus {
    guard(|| {
        let o = o.as_mut().ok_or((LsStatus::NullArgument, "options is null".to_string()))?;
        o.0.sim.seed = seed;
        Ok(LsStatus::Ok)
    })
}

/// Check preemption-safety. `*report_json` (if non-null) receives the JSON
/// report, to be released with `ls_string_free`. Returns `Ok` when safe and
/// `PropertyFailed` otherwise.
///
/// # Safety
/// `p` must be a live program; `o` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn ls_check(p: *const LsProgram, o: *const LsOptions, report_json: *mut *mut c_char) -> LsStatus {
    guard(|| {
        let p = ref_arg(p, "program")?;
        let default = Options::default();
        let opts = o.as_ref().map_or(&default, |o| &o.0);
        let rep = pipeline::check(&p.0, opts);
        if !report_json.is_null() {
            let json = serde_json::to_string(&rep).map_err(|e| (LsStatus::Panic, e.to_string()))?;
            *report_json = to_cstring(json).into_raw();
        }
        if rep.preemption_safe && rep.precondition.is_empty() {
            Ok(LsStatus::Ok)
        } else {
            Err((LsStatus::PropertyFailed, rep.counterexample.unwrap_or_else(|| rep.precondition.join("; "))))
        }
    })
}

/// Run the pipeline. On `Ok` or a failed self-check (`PropertyFailed`),
/// `*out` receives a session.
///
/// # Safety
/// `p` must be a live program, `o` live or null, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ls_synthesize(p: *const LsProgram, o: *const LsOptions, out: *mut *mut LsSession) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err((LsStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let p = ref_arg(p, "program")?;
        let default = Options::default();
        let opts = o.as_ref().map_or(&default, |o| &o.0);
        let s = pipeline::run(&p.0, opts).map_err(|e| {
            let code = match e {
                PipelineError::Precondition(_) | PipelineError::NotLockFixable(_) => LsStatus::PropertyFailed,
                _ => LsStatus::SynthesisError,
            };
            (code, e.to_string())
        })?;
        let verified = s.verified();
        let sess = LsSession { source: to_cstring(s.text.clone()), report: to_cstring(s.report.to_json()), inner: s };
        *out = Box::into_raw(Box::new(sess));
        if verified {
            Ok(LsStatus::Ok)
        } else {
            set_error("synthesized placement failed its self-check");
            Ok(LsStatus::PropertyFailed)
        }
    })
}

/// Patched source text, owned by the session.
///
/// # Safety
/// `s` must be a live session or null.
#[no_mangle]
pub unsafe extern "C" fn ls_session_source(s: *const LsSession) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.source.as_ptr())
}

/// JSON report, owned by the session.
///
/// # Safety
/// `s` must be a live session or null.
#[no_mangle]
pub unsafe extern "C" fn ls_session_report(s: *const LsSession) -> *const c_char {
    s.as_ref().map_or(ptr::null(), |s| s.report.as_ptr())
}

/// Number of lock plus unlock statements inserted.
///
/// # Safety
/// `s` must be a live session or null.
#[no_mangle]
pub unsafe extern "C" fn ls_session_insertions(s: *const LsSession) -> u32 {
    s.as_ref().map_or(0, |s| s.inner.placement.insertions.len() as u32)
}

/// # Safety
/// `s` must come from `ls_synthesize` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ls_session_free(s: *mut LsSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must have been returned through a `char **` by this library.
#[no_mangle]
pub unsafe extern "C" fn ls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG9: &str = include_str!("../../core/corpus/fig9.lsy");

    fn parse(src: &str) -> (LsStatus, *mut LsProgram) {
        let c = CString::new(src).unwrap();
        let mut p = ptr::null_mut();
        let st = unsafe { ls_program_parse(c.as_ptr(), &mut p) };
        (st, p)
    }

    #[test]
    fn synthesize_round_trip() {
        let (st, p) = parse(FIG9);
        assert_eq!(st, LsStatus::Ok);
        let o = ls_options_new();
        unsafe {
            assert_eq!(ls_options_set_objective(o, LsObjective::Fine), LsStatus::Ok);
            let mut s = ptr::null_mut();
            assert_eq!(ls_synthesize(p, o, &mut s), LsStatus::Ok);
            let src = CStr::from_ptr(ls_session_source(s)).to_str().unwrap();
            assert!(src.contains("lock(lk1);"));
            let rep: serde_json::Value = serde_json::from_str(CStr::from_ptr(ls_session_report(s)).to_str().unwrap()).unwrap();
            assert_eq!(rep["objective"], "fine");
            assert!(ls_session_insertions(s) > 0);
            ls_session_free(s);
            ls_options_free(o);
            ls_program_free(p);
        }
    }

    #[test]
    fn check_reports_the_race() {
        let (_, p) = parse(FIG9);
        unsafe {
            let mut json = ptr::null_mut();
            assert_eq!(ls_check(p, ptr::null(), &mut json), LsStatus::PropertyFailed);
            assert!(!ls_last_error().is_null());
            let rep: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
            assert_eq!(rep["preemption_safe"], false);
            ls_string_free(json);
            ls_program_free(p);
        }
    }

    #[test]
    fn errors_are_reported() {
        let (st, p) = parse("thread T { a: x := 1; }");
        assert_eq!(st, LsStatus::ParseError);
        assert!(p.is_null());
        let msg = unsafe { CStr::from_ptr(ls_last_error()) }.to_str().unwrap();
        assert!(!msg.is_empty());
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { ls_program_parse(ptr::null(), &mut out) }, LsStatus::NullArgument);
        assert_eq!(unsafe { ls_synthesize(ptr::null(), ptr::null(), &mut ptr::null_mut()) }, LsStatus::NullArgument);
        let o = ls_options_new();
        assert_eq!(unsafe { ls_options_set_bound(o, 0) }, LsStatus::InvalidArgument);
        unsafe { ls_options_free(o) };
    }
}
