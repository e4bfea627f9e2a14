//! C interface to the map verifier.
//!
//! Networks, rulesets and reports are opaque heap handles released with
//! their `*_free` function. Every fallible call returns an [`MvStatus`];
//! on failure [`mv_last_error_message`] describes the error for the
//! calling thread. Strings returned to the caller are released with
//! [`mv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mapverify::engine::{
    default_linked, evaluate, load_linked, report_to_json, EvalConfig, LinkedRuleset, ReportMeta, VerificationReport,
};
use mapverify::map_io::read_map_str;
use mapverify::map_model::LaneletNetwork;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    MapError = 3,
    RulesError = 4,
    ConfigError = 5,
    EvalError = 6,
    Panic = 7,
}

pub struct MvNetwork(LaneletNetwork);

pub struct MvRuleset(LinkedRuleset);

pub struct MvReport {
    report: VerificationReport,
    config: EvalConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Failure = (MvStatus, String);

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            MvStatus::Panic
        }
    }
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(s: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if s.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(s)
        .to_str()
        .map(Some)
        .map_err(|_| (MvStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// As [`opt_str`].
unsafe fn req_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    opt_str(s, what)?.ok_or_else(|| (MvStatus::NullArgument, format!("{what} is null")))
}

fn null(what: &str) -> Failure {
    (MvStatus::NullArgument, format!("{what} is null"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Parses a map document.
///
/// # Safety
/// `xml` is a NUL-terminated string; `out` is writable. On success `*out`
/// holds a network to release with [`mv_network_free`].
#[no_mangle]
pub unsafe extern "C" fn mv_network_from_xml(xml: *const c_char, out: *mut *mut MvNetwork) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = req_str(xml, "xml")?;
        let net = read_map_str(text).map_err(|e| (MvStatus::MapError, e.to_string()))?;
        *out = Box::into_raw(Box::new(MvNetwork(net)));
        Ok(())
    })
}

/// # Safety
/// `net` is null or came from [`mv_network_from_xml`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn mv_network_free(net: *mut MvNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of lanelets; 0 for a null handle.
///
/// # Safety
/// `net` is null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn mv_network_len(net: *const MvNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.len())
}

/// Loads and links a ruleset. Passing null for both sources selects the
/// shipped rules and predicates at default thresholds.
///
/// # Safety
/// `rules` and `predicates` are null or NUL-terminated strings; `out` is
/// writable. Release the result with [`mv_ruleset_free`].
#[no_mangle]
pub unsafe extern "C" fn mv_ruleset_load(
    rules: *const c_char,
    predicates: *const c_char,
    out: *mut *mut MvRuleset,
) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let linked = match (opt_str(rules, "rules")?, opt_str(predicates, "predicates")?) {
            (None, None) => default_linked(&EvalConfig::default().thresholds),
            (Some(r), Some(p)) => load_linked(r, p).map_err(|e| (MvStatus::RulesError, e.to_string()))?,
            (Some(_), None) => return Err(null("predicates")),
            (None, Some(_)) => return Err(null("rules")),
        };
        *out = Box::into_raw(Box::new(MvRuleset(linked)));
        Ok(())
    })
}

/// # Safety
/// `rules` is null or came from [`mv_ruleset_load`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn mv_ruleset_free(rules: *mut MvRuleset) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Evaluates every rule on `net`. `config_toml` is null for the default
/// evaluation settings.
///
/// # Safety
/// Handles are live; `config_toml` is null or NUL-terminated; `out` is
/// writable. Release the result with [`mv_report_free`].
#[no_mangle]
pub unsafe extern "C" fn mv_verify(
    rules: *const MvRuleset,
    net: *const MvNetwork,
    config_toml: *const c_char,
    out: *mut *mut MvReport,
) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let rules = rules.as_ref().ok_or_else(|| null("rules"))?;
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let config = match opt_str(config_toml, "config")? {
            Some(t) => EvalConfig::from_toml(t).map_err(|e| (MvStatus::ConfigError, e.to_string()))?,
            None => EvalConfig::default(),
        };
        let report = evaluate(&rules.0, &net.0, &config).map_err(|e| (MvStatus::EvalError, e.to_string()))?;
        *out = Box::into_raw(Box::new(MvReport { report, config }));
        Ok(())
    })
}

/// # Safety
/// `report` is null or came from [`mv_verify`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn mv_report_free(report: *mut MvReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of rules with at least one violation; 0 for a null handle.
///
/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mv_report_violated_count(report: *const MvReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.violated_rules().count())
}

/// Total violations across rules; 0 for a null handle.
///
/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mv_report_violation_count(report: *const MvReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.violation_count())
}

/// Renders the JSON report. `map_name` is recorded in the `run` block and
/// may be null.
///
/// # Safety
/// `report` is live; `map_name` is null or NUL-terminated; `out` is
/// writable. Release the string with [`mv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mv_report_to_json(
    report: *const MvReport,
    map_name: *const c_char,
    out: *mut *mut c_char,
) -> MvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let name = opt_str(map_name, "map_name")?.unwrap_or("");
        let meta = ReportMeta::new(name, "ffi", "ffi");
        *out = into_c_string(report_to_json(&r.report, &meta, &r.config));
        Ok(())
    })
}

/// # Safety
/// `s` is null or a string returned by this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn mv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null after a
/// success. The pointer stays valid until the next call into the library
/// from the same thread.
#[no_mangle]
pub extern "C" fn mv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
