use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use bventropy_ffi::*;

fn last_error() -> String {
    let p = bve_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn counts_on_a_lattice() {
    unsafe {
        let mut space = ptr::null_mut();
        assert_eq!(bve_space_lattice(10, 1, 1.0, &mut space), BveStatus::Ok);
        assert_eq!(bve_space_len(space), 10);
        let (mut cover, mut pack) = (0usize, 0usize);
        assert_eq!(
            bve_covering_number(space, 1.0, true, &mut cover),
            BveStatus::Ok
        );
        assert_eq!(
            bve_packing_number(space, 1.0, false, &mut pack),
            BveStatus::Ok
        );
        // Closed unit balls on 0..9 each cover three points: ⌈10/3⌉ = 4.
        assert_eq!(cover, 4);
        // Points more than 1 apart: every other point.
        assert_eq!(pack, 5);
        let (mut d, mut p) = (0u32, 0u32);
        assert_eq!(
            bve_space_dimensions(space, 1.0, 3.0, &mut d, &mut p),
            BveStatus::Ok
        );
        assert!(p <= d);
        bve_space_free(space);
    }
}

#[test]
fn matrix_errors_are_reported() {
    unsafe {
        let mut space = ptr::null_mut();
        let bad = [0.0, 1.0, 2.0, 0.0];
        assert_eq!(
            bve_space_from_matrix(2, bad.as_ptr(), &mut space),
            BveStatus::MetricError
        );
        assert!(space.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            bve_space_from_matrix(2, ptr::null(), &mut space),
            BveStatus::NullPointer
        );
        assert_eq!(
            bve_covering_number(ptr::null(), 1.0, true, &mut 0),
            BveStatus::NullPointer
        );
    }
}

#[test]
fn encode_decode_round_trip() {
    unsafe {
        let token = CString::new("pow:2").unwrap();
        let mut gauge = ptr::null_mut();
        assert_eq!(bve_gauge_parse(token.as_ptr(), &mut gauge), BveStatus::Ok);
        assert_eq!(bve_gauge_eval(gauge, 0.5), 0.25);

        let breaks = [0.0, 0.3, 0.6];
        let values = [0.2, -0.4, 0.1];
        let mut step = ptr::null_mut();
        assert_eq!(
            bve_step_new(1.0, breaks.as_ptr(), values.as_ptr(), 3, &mut step),
            BveStatus::Ok
        );
        let mut tv = 0.0;
        assert_eq!(bve_step_tv_psi(step, gauge, &mut tv), BveStatus::Ok);
        // The two-jump path 0.2 → -0.4 → 0.1 beats skipping the middle.
        assert!((tv - (0.36 + 0.25)).abs() < 1e-12);

        let mut cw = ptr::null_mut();
        assert_eq!(
            bve_encode(step, gauge, 1.0, 1.0, 0.05, &mut cw),
            BveStatus::Ok
        );
        assert!(bve_codeword_bit_length(cw) as f64 <= bve_codeword_budget_bits(cw));
        let (mut data, mut len) = (ptr::null(), 0usize);
        assert_eq!(bve_codeword_bytes(cw, &mut data, &mut len), BveStatus::Ok);
        assert_eq!(&std::slice::from_raw_parts(data, 4), b"BVC1");

        let mut decoded = ptr::null_mut();
        assert_eq!(bve_decode(data, len, 1.0, &mut decoded), BveStatus::Ok);
        let mut err = 1.0;
        assert_eq!(bve_l1_distance(step, decoded, &mut err), BveStatus::Ok);
        assert!(err <= 0.05);

        let n = bve_step_pieces(decoded);
        let mut b = vec![0.0; n];
        let mut v = vec![0.0; n];
        assert_eq!(
            bve_step_read(decoded, b.as_mut_ptr(), v.as_mut_ptr(), n),
            BveStatus::Ok
        );
        assert_eq!(b[0], 0.0);
        assert_eq!(
            bve_step_read(decoded, b.as_mut_ptr(), v.as_mut_ptr(), 0),
            BveStatus::InvalidArgument
        );

        assert_eq!(
            bve_decode(data, 3, 1.0, &mut decoded),
            BveStatus::CodecError
        );

        bve_step_free(decoded);
        bve_codeword_free(cw);
        bve_step_free(step);
        bve_gauge_free(gauge);
    }
}

#[test]
fn bad_gauge_token() {
    unsafe {
        let token = CString::new("pow:0.5").unwrap();
        let mut gauge = ptr::null_mut();
        assert_eq!(
            bve_gauge_parse(token.as_ptr(), &mut gauge),
            BveStatus::GaugeError
        );
        assert!(gauge.is_null());
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(bve_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "bventropy.h"

int main(void) {
    BveSpace *space = NULL;
    if (bve_space_lattice(10, 1, 1.0, &space) != BVE_STATUS_OK) return 1;
    size_t cover = 0;
    if (bve_covering_number(space, 1.0, true, &cover) != BVE_STATUS_OK) return 2;
    bve_space_free(space);
    if (bve_space_lattice(0, 1, 1.0, &space) == BVE_STATUS_OK) return 3;
    printf("%zu %s\n", cover, bve_last_error() != NULL ? "err" : "none");
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    let profile = deps.parent()?;
    let lib = profile.join("libbventropy_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("bventropy.h").exists());
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping C link check");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = tmp.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("no C compiler; skipping C link check");
        return;
    };
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "4 err");
}
