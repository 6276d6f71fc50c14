//! End-to-end checks of the command-line surface: exit codes, artifacts,
//! manifests, and determinism, all on reduced scenes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn mcvd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcvd"))
}

fn run(args: &[&str]) -> Output {
    mcvd().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Reduced scene: ~10 ms per simulated sample.
fn quick_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "scene": {
            "r": 5.0, "D": 100.0, "N": 150, "delta": 0.5, "dt": 0.001,
            "T_pilot": 1.0, "bin_width": 0.01, "cull_radius": 1000.0,
            "d_min": 15.0, "d_max": 25.0, "seed": 11
        },
        "train": { "max_epochs": 6, "batch_size": 8 }
    });
    if let (Value::Object(base), Value::Object(over)) = (&mut cfg, extra) {
        for (k, v) in over {
            base.insert(k, v);
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn gen_dataset(dir: &Path, cfg: &Path, n: &str, out_name: &str) -> PathBuf {
    let out = dir.join(out_name);
    let res = run(&[
        "gen-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "-n",
        n,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "gen-dataset failed: {}", stderr(&res));
    out
}

fn train_model(dir: &Path, cfg: &Path, dataset: &Path, out_name: &str) -> PathBuf {
    let out = dir.join(out_name);
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        dataset.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "train failed: {}", stderr(&res));
    out
}

fn assert_run_dir_manifest(dir: &Path) {
    let manifests: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains("manifest"))
        .collect();
    assert_eq!(
        manifests.len(),
        1,
        "expected exactly one manifest in {dir:?}"
    );
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let cfg_bytes = std::fs::read(dir.join("config.json")).unwrap();
    let expected = hex::encode(Sha256::digest(&cfg_bytes));
    assert_eq!(
        manifest["config_sha256"].as_str().unwrap(),
        expected,
        "manifest hash does not cover config.json"
    );
    for name in manifest["outputs"].as_array().unwrap() {
        assert!(
            dir.join(name.as_str().unwrap()).exists(),
            "missing output {name}"
        );
    }
}

#[test]
fn help_documents_full_scale() {
    let out = run(&["gen-dataset", "--help"]);
    assert_eq!(code(&out), 0);
    assert!(
        stdout(&out).contains("10000"),
        "full-scale sample count missing from help"
    );
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["gen-dataset", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validate_channel_rejects_degenerate_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(
        dir.path(),
        json!({ "scene": {
            "r": 5.0, "D": 100.0, "N": 150, "delta": 0.5, "dt": 1.0,
            "T_pilot": 1.0, "bin_width": 0.01, "cull_radius": 1000.0,
            "d_min": 15.0, "d_max": 25.0, "seed": 11
        }}),
    );
    let out = run(&["validate-channel", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(
        stderr(&out).contains("dt"),
        "stderr should name the violated constraint"
    );
}

#[test]
fn validate_channel_quick_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&[
        "validate-channel",
        "--quick",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for needle in [
        "absorbed fraction",
        "hitting-time mode",
        "chi-square",
        "PASS",
    ] {
        assert!(text.contains(needle), "stdout missing {needle:?}:\n{text}");
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("validation.json")).unwrap())
            .unwrap();
    assert_eq!(report["spec"]["n_molecules"].as_u64(), Some(10_000));
    assert_run_dir_manifest(&out_dir);
}

#[test]
fn gen_dataset_writes_rows_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let out = gen_dataset(dir.path(), &cfg, "12", "ds");
    let data = std::fs::read_to_string(out.join("dataset.data.csv")).unwrap();
    assert_eq!(data.lines().count(), 13, "header + 12 rows");
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dataset.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["n_samples"].as_u64(), Some(12));
    assert_eq!(meta["scene"]["seed"].as_u64(), Some(11));
    assert_run_dir_manifest(&out);
}

#[test]
fn gen_dataset_is_deterministic_across_workers_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let base = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let res = run(&[
            "gen-dataset",
            "--config",
            cfg.to_str().unwrap(),
            "-n",
            "10",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
        out
    };
    let a = base("w1", "1");
    let b = base("w2", "2");
    let c = base("w1_again", "1");
    for file in ["dataset.data.csv", "dataset.meta.json"] {
        let fa = std::fs::read(a.join(file)).unwrap();
        let fb = std::fs::read(b.join(file)).unwrap();
        let fc = std::fs::read(c.join(file)).unwrap();
        assert_eq!(fa, fb, "{file} differs across worker counts");
        assert_eq!(fa, fc, "{file} differs across reruns");
    }
}

#[test]
fn seed_flag_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let out = dir.path().join("seeded");
    let res = run(&[
        "gen-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "-n",
        "3",
        "--seed",
        "99",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("dataset.meta.json")).unwrap())
            .unwrap();
    assert_eq!(
        meta["seed"].as_u64(),
        Some(99),
        "CLI seed must override the file seed"
    );
}

#[test]
fn train_writes_model_history_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let run1 = train_model(dir.path(), &cfg, &ds, "tr1");
    let run2 = train_model(dir.path(), &cfg, &ds, "tr2");
    let history = std::fs::read_to_string(run1.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 7, "header + one row per epoch");
    assert!(history.starts_with("epoch,"));
    assert_eq!(
        std::fs::read(run1.join("model.json")).unwrap(),
        std::fs::read(run2.join("model.json")).unwrap(),
        "same dataset and seed must give a byte-identical model"
    );
    assert_run_dir_manifest(&run1);
}

#[test]
fn train_zero_epochs_still_writes_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({ "train": { "max_epochs": 0 } }));
    let ds = gen_dataset(dir.path(), &cfg, "12", "ds");
    let out = train_model(dir.path(), &cfg, &ds, "tr");
    assert!(out.join("model.json").exists());
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1, "header only");
}

#[test]
fn train_divergence_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({ "train": { "learning_rate": 1e100 } }));
    let ds = gen_dataset(dir.path(), &cfg, "12", "ds");
    let res = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        dir.path().join("tr").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1, "stderr: {}", stderr(&res));
    assert!(stderr(&res).contains("diverged"));
}

#[test]
fn eval_reports_both_sections_and_reductions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let out = dir.path().join("ev");
    let res = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let text = stdout(&res);
    assert!(
        text.contains("MAE reduced by"),
        "missing reduction line:\n{text}"
    );
    assert!(
        text.contains("RMSE reduced by"),
        "missing reduction line:\n{text}"
    );
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["model", "baseline", "mae_position_reduction", "ridge_alpha"] {
        assert!(report.get(key).is_some(), "metrics.json missing {key}");
    }
    assert!(report["model"]["n_samples"].as_u64().unwrap() >= 2);
    assert!(out.join("scatter.csv").exists());
    assert!(out.join("comparison3d.csv").exists());
    assert_run_dir_manifest(&out);
}

#[test]
fn eval_layout_version_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let model_path = tr.join("model.json");
    let tampered = std::fs::read_to_string(&model_path)
        .unwrap()
        .replace("mcvd-locate/v1", "mcvd-locate/v0");
    std::fs::write(&model_path, tampered).unwrap();
    let res = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        dir.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2, "stderr: {}", stderr(&res));
    assert!(stderr(&res).contains("layout version"));
}

#[test]
fn plot_export_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let out = dir.path().join("plot");
    let res = run(&[
        "plot-export",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let scatter = std::fs::read_to_string(out.join("scatter.csv")).unwrap();
    let n_test = 2; // 24 samples at the default 0.8/0.1/0.1 split
    assert_eq!(scatter.lines().count(), 1 + 3 * n_test);
    let comparison = std::fs::read_to_string(out.join("comparison3d.csv")).unwrap();
    assert_eq!(
        comparison.lines().count(),
        1 + n_test,
        "5 samples capped at test size"
    );
    assert_run_dir_manifest(&out);
}

fn simulate_scene_dir(dir: &Path, cfg: &Path) -> PathBuf {
    let out = dir.join("sim");
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "simulate failed: {}", stderr(&res));
    out
}

#[test]
fn predict_emits_world_units_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let sim = simulate_scene_dir(dir.path(), &cfg);
    let res = run(&[
        "predict",
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--log",
        sim.join("log.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert!(v["position"]["x"].is_f64());
    assert_eq!(v["tx"].as_array().unwrap().len(), 6);
    let att: Vec<f64> = v["attention"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_f64().unwrap())
        .collect();
    assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(v["low_confidence"].as_bool(), Some(false));
}

#[test]
fn predict_empty_log_is_low_confidence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let sim = simulate_scene_dir(dir.path(), &cfg);
    std::fs::write(
        sim.join("log.csv"),
        "pilot_id,molecule_id,time_s,px,py,pz,absorber\n",
    )
    .unwrap();
    let res = run(&[
        "predict",
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--log",
        sim.join("log.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(v["low_confidence"].as_bool(), Some(true));
}

#[test]
fn predict_malformed_row_exits_2_with_row_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let sim = simulate_scene_dir(dir.path(), &cfg);
    let log_path = sim.join("log.csv");
    let mut text = std::fs::read_to_string(&log_path).unwrap();
    text.push_str("3,17,not-a-time,1.0,2.0,3.0,NodeB\n");
    let bad_row = text.lines().count();
    std::fs::write(&log_path, text).unwrap();
    let res = run(&[
        "predict",
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--log",
        log_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2, "stderr: {}", stderr(&res));
    assert!(
        stderr(&res).contains(&format!("row {bad_row}")),
        "stderr should cite row {bad_row}: {}",
        stderr(&res)
    );
}

#[test]
fn predict_scene_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let ds = gen_dataset(dir.path(), &cfg, "24", "ds");
    let tr = train_model(dir.path(), &cfg, &ds, "tr");
    let sim = simulate_scene_dir(dir.path(), &cfg);
    let header_path = sim.join("log.header.json");
    let tampered = std::fs::read_to_string(&header_path)
        .unwrap()
        .replace("\"D\": 100.0", "\"D\": 55.0");
    std::fs::write(&header_path, tampered).unwrap();
    let res = run(&[
        "predict",
        "--model",
        tr.join("model.json").to_str().unwrap(),
        "--log",
        sim.join("log.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2, "stderr: {}", stderr(&res));
    assert!(stderr(&res).contains("scene config"));
}

#[test]
fn simulate_fixed_pose_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), json!({}));
    let out = dir.path().join("sim");
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--pose",
        "18,0,0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "stderr: {}", stderr(&res));
    let header: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("log.header.json")).unwrap())
            .unwrap();
    assert_eq!(header["pose_a"]["position"]["x"].as_f64(), Some(18.0));
    assert_run_dir_manifest(&out);
}
