use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ropnet::model::{build_custom_rop_net, count_parameters, forward};
use ropnet::tensor::{BatchNormMode, Tensor};
use ropnet_ffi::*;

fn last_error() -> String {
    let p = rop_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn custom(width: f64, seed: u64) -> *mut RopModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rop_model_build_custom(64, width, seed, &mut m) }, RopStatus::Ok);
    assert!(!m.is_null());
    m
}

fn ramp(n: usize) -> Vec<f32> {
    (0..n).map(|i| (i % 97) as f32 / 97.0).collect()
}

#[test]
fn counts_match_library() {
    let m = custom(0.5, 3);
    let (mut trainable, mut total) = (0, 0);
    assert_eq!(unsafe { rop_model_count_parameters(m, &mut trainable, &mut total) }, RopStatus::Ok);
    let (spec, p) = build_custom_rop_net(64, 0.5, 3).unwrap();
    let c = count_parameters(&spec, &p).unwrap();
    assert_eq!((trainable, total), (c.trainable, c.total));
    let mut size = 0;
    assert_eq!(unsafe { rop_model_input_size(m, &mut size) }, RopStatus::Ok);
    assert_eq!(size, 64);
    unsafe { rop_model_free(m) };
}

#[test]
fn predict_and_plan_match_eager_forward() {
    let m = custom(0.25, 4);
    let n = 2;
    let x = ramp(n * 64 * 64 * 3);
    let mut eager = vec![0.0f32; n];
    assert_eq!(
        unsafe { rop_model_predict(m, x.as_ptr(), x.len(), n, eager.as_mut_ptr()) },
        RopStatus::Ok
    );
    let (spec, p) = build_custom_rop_net(64, 0.25, 4).unwrap();
    let t = Tensor::new(&[n, 64, 64, 3], &x).unwrap();
    assert_eq!(forward(&spec, &p, &t, BatchNormMode::Infer).unwrap().data(), &eager[..]);

    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { rop_plan_create(m, n, &mut plan) }, RopStatus::Ok);
    unsafe { rop_model_free(m) };
    let mut bytes = 0;
    assert_eq!(unsafe { rop_plan_arena_bytes(plan, &mut bytes) }, RopStatus::Ok);
    assert!(bytes > 0);
    for _ in 0..2 {
        let mut out = vec![0.0f32; n];
        assert_eq!(
            unsafe { rop_plan_execute(plan, x.as_ptr(), x.len(), out.as_mut_ptr(), n) },
            RopStatus::Ok
        );
        for (a, b) in out.iter().zip(&eager) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    let mut out = vec![0.0f32; 1];
    let short = &x[..64 * 64 * 3];
    assert_eq!(
        unsafe { rop_plan_execute(plan, short.as_ptr(), short.len(), out.as_mut_ptr(), 1) },
        RopStatus::Shape
    );
    unsafe { rop_plan_free(plan) };
}

#[test]
fn save_load_roundtrip_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ropm").to_str().unwrap()).unwrap();
    let m = custom(0.25, 5);
    assert_eq!(unsafe { rop_model_save(m, path.as_ptr()) }, RopStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { rop_model_load(path.as_ptr(), &mut back) }, RopStatus::Ok);
    let x = ramp(64 * 64 * 3);
    let (mut a, mut b) = ([0.0f32], [0.0f32]);
    unsafe {
        rop_model_predict(m, x.as_ptr(), x.len(), 1, a.as_mut_ptr());
        rop_model_predict(back, x.as_ptr(), x.len(), 1, b.as_mut_ptr());
    }
    assert_eq!(a[0].to_bits(), b[0].to_bits());

    let missing = CString::new(dir.path().join("none.ropm").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { rop_model_load(missing.as_ptr(), &mut none) }, RopStatus::Io);
    assert!(none.is_null());
    assert!(last_error().contains("none.ropm"));

    let junk = dir.path().join("junk.ropm");
    std::fs::write(&junk, b"nope").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rop_model_load(junk.as_ptr(), &mut none) }, RopStatus::Format);
    unsafe {
        rop_model_free(m);
        rop_model_free(back);
    }
}

#[test]
fn null_and_parameter_errors() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rop_model_build_custom(64, 0.3, 0, &mut m) }, RopStatus::Parameter);
    assert!(m.is_null());
    assert_eq!(unsafe { rop_model_build_custom(64, 1.0, 0, ptr::null_mut()) }, RopStatus::NullPointer);
    assert!(last_error().contains("out"));
    let (mut t, mut total) = (0, 0);
    assert_eq!(
        unsafe { rop_model_count_parameters(ptr::null(), &mut t, &mut total) },
        RopStatus::NullPointer
    );
    let m = custom(0.25, 0);
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { rop_plan_create(m, 0, &mut plan) }, RopStatus::Capability);
    assert_eq!(unsafe { rop_model_input_size(m, &mut t) }, RopStatus::Ok);
    assert!(rop_last_error().is_null());
    unsafe {
        rop_model_free(m);
        rop_model_free(ptr::null_mut());
        rop_plan_free(ptr::null_mut());
    }
}

#[test]
fn vote_follows_majority_with_ties() {
    let (mut d, mut k) = (0u8, 0usize);
    let probs = [0.9f32, 0.2, 0.7];
    assert_eq!(unsafe { rop_vote(probs.as_ptr(), 3, 0.5, true, &mut d, &mut k) }, RopStatus::Ok);
    assert_eq!((d, k), (1, 2));
    let tie = [0.9f32, 0.1];
    assert_eq!(unsafe { rop_vote(tie.as_ptr(), 2, 0.5, true, &mut d, &mut k) }, RopStatus::Ok);
    assert_eq!(d, 1);
    assert_eq!(unsafe { rop_vote(tie.as_ptr(), 2, 0.5, false, &mut d, &mut k) }, RopStatus::Ok);
    assert_eq!(d, 0);
    assert_eq!(unsafe { rop_vote(tie.as_ptr(), 0, 0.5, true, &mut d, &mut k) }, RopStatus::Parameter);
    let bad = [1.5f32];
    assert_eq!(unsafe { rop_vote(bad.as_ptr(), 1, 0.5, true, &mut d, &mut k) }, RopStatus::Parameter);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rop_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ropnet.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "rop_last_error",
        "rop_version",
        "rop_model_build_custom",
        "rop_model_build_mobilenet",
        "rop_model_load",
        "rop_model_save",
        "rop_model_free",
        "rop_model_input_size",
        "rop_model_count_parameters",
        "rop_model_predict",
        "rop_model_predict_ppm",
        "rop_plan_create",
        "rop_plan_free",
        "rop_plan_arena_bytes",
        "rop_plan_execute",
        "rop_vote",
    ] {
        let declared = [' ', '*'].iter().any(|c| text.contains(&format!("{c}{f}(")));
        assert!(declared, "{f} missing from header");
    }
    assert!(text.contains("typedef struct RopModel RopModel;"));
    assert!(text.contains("ROP_STATUS_NULL_POINTER = 1"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "ropnet.h"

int main(void) {
    RopModel *m = NULL;
    if (rop_model_build_custom(64, 0.25, 1, &m) != ROP_STATUS_OK) return 10;
    size_t trainable = 0, total = 0;
    if (rop_model_count_parameters(m, &trainable, &total) != ROP_STATUS_OK) return 11;
    static float x[64 * 64 * 3];
    for (size_t i = 0; i < sizeof x / sizeof x[0]; i++) x[i] = (float)(i % 97) / 97.0f;
    float eager = 0.0f, planned = 0.0f;
    if (rop_model_predict(m, x, sizeof x / sizeof x[0], 1, &eager) != ROP_STATUS_OK) return 12;
    RopPlan *plan = NULL;
    if (rop_plan_create(m, 1, &plan) != ROP_STATUS_OK) return 13;
    if (rop_plan_execute(plan, x, sizeof x / sizeof x[0], &planned, 1) != ROP_STATUS_OK) return 14;
    if (rop_model_build_custom(64, 0.3, 1, NULL) != ROP_STATUS_NULL_POINTER) return 15;
    printf("%zu %zu %.9g %.9g %s\n", trainable, total, eager, planned, rop_last_error());
    rop_plan_free(plan);
    rop_model_free(m);
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    // Test binaries live in target/<profile>/deps; the static library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    assert!(lib_dir.join("libropnet_ffi.a").exists(), "static library not built in {}", lib_dir.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(lib_dir.join("libropnet_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    let (spec, p) = build_custom_rop_net(64, 0.25, 1).unwrap();
    let c = count_parameters(&spec, &p).unwrap();
    assert_eq!(fields[0].parse::<usize>().unwrap(), c.trainable);
    assert_eq!(fields[1].parse::<usize>().unwrap(), c.total);
    let eager: f32 = fields[2].parse().unwrap();
    let planned: f32 = fields[3].parse().unwrap();
    assert!((eager - planned).abs() <= 1e-6);
    assert!(text.contains("out is null"));
}

#[test]
fn predict_ppm_matches_preprocessed_predict() {
    use ropnet::data::{load_ppm, preprocess, save_ppm, RawImage};
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("eye.ppm");
    let px: Vec<u8> = (0..30 * 40 * 3).map(|i| (i * 7 % 256) as u8).collect();
    save_ppm(&RawImage::new(30, 40, px).unwrap(), &file).unwrap();
    let m = custom(0.25, 6);
    let c_path = CString::new(file.to_str().unwrap()).unwrap();
    let mut p = 0.0f32;
    assert_eq!(unsafe { rop_model_predict_ppm(m, c_path.as_ptr(), &mut p) }, RopStatus::Ok);
    let x = preprocess(&load_ppm(&file).unwrap(), 64).unwrap();
    let mut q = [0.0f32];
    assert_eq!(
        unsafe { rop_model_predict(m, x.data().as_ptr(), x.len(), 1, q.as_mut_ptr()) },
        RopStatus::Ok
    );
    assert_eq!(p.to_bits(), q[0].to_bits());
    unsafe { rop_model_free(m) };
}
