use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use faultforge_ffi::*;

const PING: &str = r#"
channel AtoB capacity 1 messages {PING}
channel BtoA capacity 1 messages {PONG}
process A {
    states {Idle, Waiting}
    init Idle
    Idle --AtoB!PING--> Waiting
    Waiting --BtoA?PONG--> Idle
}
process B {
    states {Ready, Reply}
    init Ready
    Ready --AtoB?PING--> Reply
    Reply --BtoA!PONG--> Ready
}
property alive := G F A.Idle
"#;

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    assert!(!s.is_null());
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    ff_string_free(s);
    out
}

unsafe fn last_error() -> String {
    let p = ff_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_str().unwrap().to_string()
}

fn parse(text: &str) -> *mut FfModel {
    let text = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ff_model_parse(text.as_ptr(), &mut m) }, FfStatus::Ok);
    m
}

#[test]
fn drop_attack_through_the_abi() {
    unsafe {
        let m = parse(PING);
        assert_eq!(ff_model_property_count(m), 1);
        let mut name = ptr::null_mut();
        assert_eq!(ff_model_property_name(m, 0, &mut name), FfStatus::Ok);
        assert_eq!(take(name), "alive");
        assert_eq!(ff_model_check(m, 0), FfStatus::Ok);

        let victim = CString::new("AtoB").unwrap();
        let spec = FfGadgetSpec { kind: FfGadgetKind::Drop, victim: victim.as_ptr(), limit: 1 };
        let prop = CString::new("alive").unwrap();
        let mut v = ptr::null_mut();
        assert_eq!(ff_attack(m, prop.as_ptr(), &spec, 1, 0, &mut v), FfStatus::Ok);
        assert_eq!(ff_verdict_outcome(v), FfOutcome::Attack);
        assert!(ff_verdict_states(v) > 0);

        let mut json = ptr::null_mut();
        assert_eq!(ff_verdict_json(v, &mut json), FfStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        assert_eq!(json["outcome"], "attack");

        let mut trace = ptr::null_mut();
        assert_eq!(ff_verdict_trace(v, FfTraceStyle::Human, &mut trace), FfStatus::Ok);
        assert!(take(trace).contains("drop(AtoB)"));
        ff_verdict_free(v);
        ff_model_free(m);
    }
}

#[test]
fn safe_verdict_has_empty_trace() {
    unsafe {
        let m = parse(PING);
        let prop = CString::new("alive").unwrap();
        let mut v = ptr::null_mut();
        assert_eq!(ff_attack(m, prop.as_ptr(), ptr::null(), 0, 0, &mut v), FfStatus::Ok);
        assert_eq!(ff_verdict_outcome(v), FfOutcome::Safe);
        let mut trace = ptr::null_mut();
        assert_eq!(ff_verdict_trace(v, FfTraceStyle::Machine, &mut trace), FfStatus::Ok);
        assert_eq!(take(trace), "");
        ff_verdict_free(v);
        ff_model_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new("process {").unwrap();
        assert_eq!(ff_model_parse(bad.as_ptr(), &mut m), FfStatus::ParseError);
        assert!(m.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(ff_model_parse(ptr::null(), &mut m), FfStatus::NullArgument);
        assert!(last_error().contains("text"));

        let m = parse(PING);
        let prop = CString::new("nope").unwrap();
        let mut v = ptr::null_mut();
        assert_eq!(ff_attack(m, prop.as_ptr(), ptr::null(), 0, 0, &mut v), FfStatus::UnknownProperty);
        assert!(v.is_null());

        let prop = CString::new("alive").unwrap();
        let victim = CString::new("CtoD").unwrap();
        let spec = FfGadgetSpec { kind: FfGadgetKind::Replay, victim: victim.as_ptr(), limit: 1 };
        assert_eq!(ff_attack(m, prop.as_ptr(), &spec, 1, 0, &mut v), FfStatus::InvalidGadget);
        assert!(last_error().contains("CtoD"));

        let victim = CString::new("AtoB").unwrap();
        let spec = FfGadgetSpec { kind: FfGadgetKind::Replay, victim: victim.as_ptr(), limit: 0 };
        assert_eq!(ff_attack(m, prop.as_ptr(), &spec, 1, 0, &mut v), FfStatus::InvalidGadget);

        // a successful call clears the previous error
        assert_eq!(ff_model_check(m, 0), FfStatus::Ok);
        assert!(ff_last_error().is_null());
        ff_model_free(m);

        let name = CString::new("quic").unwrap();
        let mut f = ptr::null_mut();
        assert_eq!(ff_model_fixture(name.as_ptr(), &mut f), FfStatus::UnknownFixture);
        ff_model_free(ptr::null_mut());
        ff_verdict_free(ptr::null_mut());
        ff_string_free(ptr::null_mut());
    }
}

#[test]
fn bundled_fixture_and_state_cap() {
    unsafe {
        let name = CString::new("tcp").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(ff_model_fixture(name.as_ptr(), &mut m), FfStatus::Ok);
        assert_eq!(ff_model_property_count(m), 6);
        let prop = CString::new("phi1").unwrap();
        let victim = CString::new("AtoB").unwrap();
        let spec = FfGadgetSpec { kind: FfGadgetKind::Replay, victim: victim.as_ptr(), limit: 1 };
        let mut v = ptr::null_mut();
        assert_eq!(ff_attack(m, prop.as_ptr(), &spec, 1, 10, &mut v), FfStatus::Ok);
        assert_eq!(ff_verdict_outcome(v), FfOutcome::Inconclusive);
        ff_verdict_free(v);
        ff_model_free(m);
        assert!(CStr::from_ptr(ff_version()).to_str().unwrap().starts_with("0."));
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/faultforge.h")).unwrap();
    for sym in [
        "ff_model_parse",
        "ff_model_fixture",
        "ff_model_free",
        "ff_model_check",
        "ff_attack",
        "ff_verdict_outcome",
        "ff_verdict_json",
        "ff_verdict_trace",
        "ff_verdict_free",
        "ff_string_free",
        "ff_last_error",
        "FF_STATUS_PARSE_ERROR",
        "typedef struct ff_model ff_model",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "faultforge.h"

int main(void) {
    ff_model *m = NULL;
    if (ff_model_fixture("tcp", &m) != FF_STATUS_OK) return 10;
    ff_gadget_spec g = { FF_GADGET_KIND_DROP, "AtoB", 1 };
    ff_verdict *v = NULL;
    if (ff_attack(m, "phi1", &g, 1, 0, &v) != FF_STATUS_OK) return 11;
    if (ff_verdict_outcome(v) != FF_OUTCOME_ATTACK) return 12;
    char *json = NULL;
    if (ff_verdict_json(v, &json) != FF_STATUS_OK) return 13;
    if (strstr(json, "\"attack\"") == NULL) return 14;
    ff_string_free(json);
    ff_verdict_free(v);
    if (ff_attack(m, "nope", NULL, 0, 0, &v) != FF_STATUS_UNKNOWN_PROPERTY) return 15;
    if (ff_last_error() == NULL) return 16;
    ff_model_free(m);
    puts("ok");
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libfaultforge_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler not available");
        return;
    }
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let src = tmp.join("ffi_smoke.c");
    let bin = tmp.join("ffi_smoke");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C program failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
