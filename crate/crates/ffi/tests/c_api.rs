use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use dncf_ffi::*;

fn synthetic() -> *mut DncfDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { dncf_dataset_synthetic(50, 200, 4, 7, &mut ds) }, DncfStatus::Ok);
    ds
}

fn model(kind: &str, ds: *const DncfDataset) -> *mut DncfModel {
    let kind = CString::new(kind).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { dncf_model_new(kind.as_ptr(), 8, ptr::null(), ds, 3, &mut m) };
    assert_eq!(status, DncfStatus::Ok);
    m
}

fn last_error() -> String {
    let p = dncf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn train_save_load_round_trip() {
    let ds = synthetic();
    assert_eq!(unsafe { dncf_dataset_num_users(ds) }, 50);
    assert_eq!(unsafe { dncf_dataset_num_items(ds) }, 200);
    let m = model("dgmf", ds);
    let mut opts = dncf_train_options_default();
    assert_eq!(opts.batch_size, 256);
    opts.epochs = 2;
    let mut trained = DncfMetrics { hr: -1.0, ndcg: -1.0, k: 0, users: 0 };
    assert_eq!(unsafe { dncf_model_train(m, ds, &opts, &mut trained) }, DncfStatus::Ok);
    assert_eq!(trained.users, 50);
    assert!((0.0..=1.0).contains(&trained.hr) && trained.ndcg <= trained.hr);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dncf_model_save(m, path.as_ptr()) }, DncfStatus::Ok);
    let other = model("dgmf", ds);
    assert_eq!(unsafe { dncf_model_load(other, path.as_ptr()) }, DncfStatus::Ok);

    let mut a = DncfMetrics { hr: 0.0, ndcg: 0.0, k: 0, users: 0 };
    let mut b = a;
    unsafe {
        assert_eq!(dncf_model_evaluate(m, ds, 10, &mut a), DncfStatus::Ok);
        assert_eq!(dncf_model_evaluate(other, ds, 10, &mut b), DncfStatus::Ok);
    }
    assert_eq!(a, b);
    assert_eq!(a.hr, trained.hr);

    let (mut s1, mut s2) = (0.0, 0.0);
    unsafe {
        assert_eq!(dncf_model_score(m, ds, 4, 9, &mut s1), DncfStatus::Ok);
        assert_eq!(dncf_model_score(other, ds, 4, 9, &mut s2), DncfStatus::Ok);
    }
    assert!(s1 > 0.0 && s1 < 1.0);
    assert_eq!(s1.to_bits(), s2.to_bits());
    assert!(unsafe { dncf_model_num_parameters(m) } > 0);

    unsafe {
        dncf_model_free(m);
        dncf_model_free(other);
        dncf_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let ds = synthetic();
    let mut m = ptr::null_mut();
    let bad = CString::new("svd").unwrap();
    assert_eq!(unsafe { dncf_model_new(bad.as_ptr(), 8, ptr::null(), ds, 0, &mut m) }, DncfStatus::Config);
    assert!(last_error().contains("svd"));
    assert!(m.is_null());

    let dgmf = model("dgmf", ds);
    let mut score = 0.0;
    assert_eq!(unsafe { dncf_model_score(dgmf, ds, 999, 0, &mut score) }, DncfStatus::Data);
    assert_eq!(unsafe { dncf_model_score(ptr::null(), ds, 0, 0, &mut score) }, DncfStatus::NullPointer);

    let missing = CString::new("/nonexistent/file").unwrap();
    let mut loaded = ptr::null_mut();
    let status = unsafe { dncf_dataset_load(missing.as_ptr(), missing.as_ptr(), missing.as_ptr(), &mut loaded) };
    assert_eq!(status, DncfStatus::Io);
    assert_eq!(unsafe { dncf_model_load(dgmf, missing.as_ptr()) }, DncfStatus::Io);

    // a checkpoint of another kind does not fit
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("mlp.ckpt").to_str().unwrap()).unwrap();
    let dmlp = model("dmlp", ds);
    assert_eq!(unsafe { dncf_model_save(dmlp, path.as_ptr()) }, DncfStatus::Ok);
    assert_eq!(unsafe { dncf_model_load(dgmf, path.as_ptr()) }, DncfStatus::Checkpoint);

    let mut opts = dncf_train_options_default();
    opts.optimizer = 7;
    assert_eq!(unsafe { dncf_model_train(dgmf, ds, &opts, ptr::null_mut()) }, DncfStatus::InvalidArgument);

    unsafe {
        dncf_model_free(dgmf);
        dncf_model_free(dmlp);
        dncf_dataset_free(ds);
        dncf_model_free(ptr::null_mut());
        dncf_dataset_free(ptr::null_mut());
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(dncf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dncf.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["dncf_model_train", "dncf_last_error", "typedef struct DncfModel DncfModel"] {
        assert!(text.contains(name), "{name}");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_against_staticlib() {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libdncf_ffi.a");
    if !lib.is_file() {
        eprintln!("{} not built; skipped", lib.display());
        return;
    }
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("train");
    let Ok(out) = Command::new("cc")
        .arg(format!("-I{}", manifest.join("include").display()))
        .arg(manifest.join("examples/train.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
    else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("HR@10") && stdout.contains("over 50 users"), "{stdout}");
}
