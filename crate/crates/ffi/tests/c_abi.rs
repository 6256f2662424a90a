use std::ffi::{CStr, CString};
use std::ptr;

use protoreplay_ffi::*;

const SMALL: &str = r#"
dataset = "synthetic"
method = "ccp"
augment = false
encoder = "mlp"
mlp_hidden = [16]
projector_hidden = 8
projection_dim = 4
buffer_m = 5
synthetic_classes = 4
synthetic_train_per_class = 20
synthetic_test_per_class = 10
classes_per_task = 2
seeds = [0]
"#;

fn config(text: &str) -> *mut PrConfig {
    let toml = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { pr_config_from_toml(toml.as_ptr(), &mut cfg) }, PrStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

fn last_error() -> String {
    let p = pr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    pr_string_free(s);
    out
}

#[test]
fn config_round_trip_and_override() {
    let cfg = config(SMALL);
    unsafe {
        let mut hash = ptr::null_mut();
        assert_eq!(pr_config_hash(cfg, &mut hash), PrStatus::Ok);
        let before = take(hash);
        assert_eq!(before.len(), 12);

        let set = CString::new("learning_rate=0.05").unwrap();
        assert_eq!(pr_config_set(cfg, set.as_ptr()), PrStatus::Ok);
        assert_eq!(pr_config_hash(cfg, &mut hash), PrStatus::Ok);
        assert_ne!(take(hash), before);

        let mut toml = ptr::null_mut();
        assert_eq!(pr_config_to_toml(cfg, &mut toml), PrStatus::Ok);
        assert!(take(toml).contains("learning_rate = 0.05"));
        pr_config_free(cfg);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("no_such_key = 1").unwrap();
    assert_eq!(unsafe { pr_config_from_toml(bad.as_ptr(), &mut cfg) }, PrStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("no_such_key"));

    assert_eq!(unsafe { pr_config_from_toml(ptr::null(), &mut cfg) }, PrStatus::NullPointer);
    let name = CString::new("nope").unwrap();
    assert_eq!(unsafe { pr_config_preset(name.as_ptr(), &mut cfg) }, PrStatus::Config);

    let mut f = 0.0;
    assert_eq!(unsafe { pr_forgetting([50.0].as_ptr(), 1, &mut f) }, PrStatus::Data);
    let mut steps = 0;
    assert_eq!(unsafe { pr_learner_steps(ptr::null(), &mut steps) }, PrStatus::NullPointer);
    unsafe {
        pr_config_free(ptr::null_mut());
        pr_learner_free(ptr::null_mut());
        pr_string_free(ptr::null_mut());
    }
}

#[test]
fn forgetting_of_full_overwrite() {
    // Upper triangle is ignored.
    let m = [100.0, -1.0, 0.0, 100.0];
    let mut f = 0.0;
    assert_eq!(unsafe { pr_forgetting(m.as_ptr(), 2, &mut f) }, PrStatus::Ok);
    assert_eq!(f, 100.0);
}

#[test]
fn learner_trains_and_predicts_seen_classes() {
    let cfg = config(SMALL);
    let numel = 4 * 8; // default synthetic image 1x4x8
    unsafe {
        let mut learner = ptr::null_mut();
        assert_eq!(pr_learner_new(cfg, 3, &mut learner), PrStatus::Ok);
        let n = 10;
        let images: Vec<f32> = (0..n * numel).map(|i| ((i * 7) % 13) as f32 / 13.0).collect();
        let labels: Vec<u32> = (0..n as u32).map(|i| i % 2).collect();
        let mut loss = f64::NAN;
        for _ in 0..3 {
            assert_eq!(pr_learner_train_batch(learner, images.as_ptr(), labels.as_ptr(), n, &mut loss), PrStatus::Ok);
            assert!(loss.is_finite());
        }
        let mut steps = 0;
        assert_eq!(pr_learner_steps(learner, &mut steps), PrStatus::Ok);
        assert_eq!(steps, 3);

        let mut out = vec![u32::MAX; n];
        assert_eq!(pr_learner_predict(learner, images.as_ptr(), n, out.as_mut_ptr()), PrStatus::Ok);
        assert!(out.iter().all(|&y| y < 2));

        let bad = vec![9u32; n];
        assert_eq!(pr_learner_train_batch(learner, images.as_ptr(), bad.as_ptr(), n, ptr::null_mut()), PrStatus::Data);
        assert_eq!(pr_learner_train_batch(learner, images.as_ptr(), labels.as_ptr(), 0, ptr::null_mut()), PrStatus::Data);
        pr_learner_free(learner);
        pr_config_free(cfg);
    }
}

#[test]
fn run_returns_records() {
    let cfg = config(SMALL);
    let dir = tempfile::tempdir().unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut json = ptr::null_mut();
        assert_eq!(pr_run(cfg, out_dir.as_ptr(), &mut json), PrStatus::Ok);
        let records: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
        let rec = &records.as_array().unwrap()[0];
        assert_eq!(rec["method"], "ccp");
        assert_eq!(rec["matrix"].as_array().unwrap().len(), 2);
        pr_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/protoreplay.h")).unwrap();
    for f in [
        "pr_last_error",
        "pr_string_free",
        "pr_config_from_toml",
        "pr_config_preset",
        "pr_config_set",
        "pr_config_to_toml",
        "pr_config_hash",
        "pr_config_free",
        "pr_learner_new",
        "pr_learner_train_batch",
        "pr_learner_predict",
        "pr_learner_steps",
        "pr_learner_free",
        "pr_forgetting",
        "pr_run",
    ] {
        assert!(header.contains(&format!("{f}(")), "header lacks {f}");
    }
    assert!(header.contains("typedef struct PrLearner PrLearner"));
    assert!(header.contains("PR_STATUS_OK"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/protoreplay.h");
    let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() else {
        eprintln!("no C compiler on PATH; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
