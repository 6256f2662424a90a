use std::fs;
use std::process::Command;

use protoreplay::data::DatasetId;
use protoreplay::experiment::config::SYNTHETIC_S1;
use protoreplay::experiment::runner::{seed_dir, METRICS_FILE};
use protoreplay::experiment::{aggregate, load_records, plot_anytime, run, RunConfig, RunOptions};
use protoreplay::Error;

fn config(dir: &std::path::Path, extra: &[&str]) -> RunConfig {
    let mut ov: Vec<String> = vec![format!("output_dir={:?}", dir.display().to_string()), "seeds=[0]".into()];
    ov.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::from_toml_with_overrides(SYNTHETIC_S1, &ov).unwrap()
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let straight = config(&tmp.path().join("a"), &["method=\"ccp\"", "log_every=7"]);
    let full = run(&straight, &RunOptions::default()).unwrap();

    let split = config(&tmp.path().join("b"), &["method=\"ccp\"", "log_every=7", "checkpoint_every=40"]);
    let halted = run(
        &split,
        &RunOptions {
            resume: false,
            halt_after: Some(57),
        },
    )
    .unwrap();
    assert_eq!(halted.halted, vec![0]);
    assert!(halted.records.is_empty());
    let resumed = run(
        &split,
        &RunOptions {
            resume: true,
            halt_after: None,
        },
    )
    .unwrap();

    let (a, b) = (&full.records[0], &resumed.records[0]);
    assert_eq!(a.matrix, b.matrix);
    assert_eq!(a.final_accuracy, b.final_accuracy);
    assert_eq!(a.forgetting, b.forgetting);
    assert_eq!(a.config_hash, b.config_hash);
    for file in [METRICS_FILE, "steps.jsonl"] {
        let x = fs::read(seed_dir(&straight, 0).join(file)).unwrap();
        let y = fs::read(seed_dir(&split, 0).join(file)).unwrap();
        assert_eq!(x, y, "{file} differs after resume");
    }
    assert!(!seed_dir(&split, 0).join("checkpoint.json").exists());
}

#[test]
fn checkpoint_of_another_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), &["method=\"er\""]);
    run(&cfg, &RunOptions { resume: false, halt_after: Some(5) }).unwrap();
    let ck = seed_dir(&cfg, 0).join("checkpoint.json");
    let mut other = cfg.clone();
    other.learning_rate = 0.01;
    fs::create_dir_all(seed_dir(&other, 0)).unwrap();
    fs::copy(&ck, seed_dir(&other, 0).join("checkpoint.json")).unwrap();
    let err = run(&other, &RunOptions { resume: true, halt_after: None }).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
}

#[test]
fn er_with_a_buffer_holding_everything_beats_finetuning() {
    let tmp = tempfile::tempdir().unwrap();
    let er = run(&config(tmp.path(), &["method=\"er\"", "buffer_m=200", "learning_rate=0.1"]), &RunOptions::default()).unwrap();
    let ft = run(&config(tmp.path(), &["method=\"finetune\"", "learning_rate=0.1"]), &RunOptions::default()).unwrap();
    let (e, f) = (er.records[0].final_accuracy, ft.records[0].final_accuracy);
    assert!(e > f, "er {e} vs finetune {f}");
}

#[test]
fn aggregate_plot_and_their_failure_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for method in ["ccp", "er"] {
        let cfg = RunConfig::from_toml_with_overrides(
            SYNTHETIC_S1,
            &[
                format!("output_dir={:?}", tmp.path().display().to_string()),
                format!("method={method:?}"),
                "seeds=[0,1]".into(),
                "eval_mode=\"even\"".into(),
                "eval_points=8".into(),
            ],
        )
        .unwrap();
        records.extend(run(&cfg, &RunOptions::default()).unwrap().records);
    }
    let loaded = load_records(&[tmp.path().to_path_buf()]).unwrap();
    assert_eq!(loaded.len(), 4);
    let summary = aggregate(&loaded).unwrap();
    assert_eq!(summary.rows.len(), 2);
    assert!(summary.rows.iter().all(|r| r.accuracy.n == 2 && r.accuracy.std.is_some()));
    assert!(loaded.iter().all(|r| r.anytime.len() == 8));

    let svg = plot_anytime(&loaded, &tmp.path().join("plots"), Some(50.0)).unwrap();
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.contains("ccp") && text.contains("er"));
    let again = plot_anytime(&loaded, &tmp.path().join("plots"), Some(50.0)).unwrap();
    assert_eq!(svg, again);

    assert!(matches!(aggregate(&[]), Err(Error::Aggregate(_))));
    let mut mixed = records.clone();
    mixed[0].dataset = DatasetId::Cifar10;
    assert!(matches!(aggregate(&mixed), Err(Error::Aggregate(_))));
    let mut mixed_s = records;
    mixed_s[1].classes_per_task = 2;
    assert!(matches!(aggregate(&mixed_s), Err(Error::Aggregate(_))));
}

#[test]
fn missing_cifar_directory_is_a_clear_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_with_overrides(
        "dataset = \"cifar10\"\n",
        &[format!("data_dir={:?}", tmp.path().join("nope").display().to_string())],
    )
    .unwrap();
    let err = run(&cfg, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MissingDataset { .. }), "{err}");
}

#[test]
fn cli_rejects_unknown_keys_and_runs_presets() {
    let bin = env!("CARGO_BIN_EXE_protoreplay");
    let out = Command::new(bin).args(["run", "--preset", "synthetic-s1", "--set", "lerning_rate=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lerning_rate"));

    let listed = Command::new(bin).arg("list-configs").output().unwrap();
    assert!(listed.status.success());
    assert!(String::from_utf8_lossy(&listed.stdout).contains("synthetic-s1"));

    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["run", "--preset", "synthetic-s1", "--method", "finetune", "--seeds", "4"])
        .arg("--output-dir")
        .arg(tmp.path())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("finetune") && stdout.contains("10.0"), "{stdout}");

    let agg = Command::new(bin).arg("aggregate").arg(tmp.path()).output().unwrap();
    assert!(agg.status.success());
    assert!(String::from_utf8_lossy(&agg.stdout).contains("finetune"));
    let empty = tempfile::tempdir().unwrap();
    let agg = Command::new(bin).arg("aggregate").arg(empty.path()).output().unwrap();
    assert!(!agg.status.success());
}
