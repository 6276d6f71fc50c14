//! Subcommand implementations. Each artifact-producing command writes its
//! files under `--out` and finishes the directory with config + manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use mcvd_locate::config::SceneConfig;
use mcvd_locate::dataset::{
    generate_dataset, load_dataset, sample_pose, save_dataset, split, SampleRecord, N_LABELS,
};
use mcvd_locate::error::{Error, Result};
use mcvd_locate::evalkit::{compare, export_scatter, metrics_report, save_report, MetricsReport};
use mcvd_locate::features::{build_feature_matrix, flatten};
use mcvd_locate::geom::{Pose, UnitQuaternion, Vec3};
use mcvd_locate::learn::{
    default_alpha_grid, load_model, predict, ridge_fit, ridge_predict, save_history, save_model,
    select_ridge_alpha, train, Dims, Prediction, Scaler,
};
use mcvd_locate::rng::{derive_rng, mix_seed, stream_key, Domain};
use mcvd_locate::simulator::{load_log, save_log, simulate_scene};
use mcvd_locate::validate::run_channel_validation;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::manifest::write_run_dir;
use crate::runcfg::RunConfig;

fn pass_fail(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn cmd_validate_channel(rc: &RunConfig, quick: bool, out: Option<&Path>) -> Result<ExitCode> {
    let report = run_channel_validation(&rc.scene, quick)?;
    println!(
        "absorbed fraction: {:.5} (expected {:.5}, dev {:.2} sigma, tol {})  {}",
        report.absorbed_fraction,
        report.expected_fraction,
        report.fraction_dev_sigma,
        report.spec.fraction_tol_sigma,
        pass_fail(report.fraction_pass)
    );
    println!(
        "hitting-time mode: {:.4} s (analytic {:.4} s, dev {:.2} bins, tol {})  {}",
        report.fitted_mode_time,
        report.analytic_peak_time,
        report.mode_dev_bins,
        report.spec.mode_tol_bins,
        pass_fail(report.mode_pass)
    );
    println!(
        "chi-square fit: stat {:.1}, dof {}, p {:.4} (min {})  {}",
        report.chi2_stat,
        report.chi2_dof,
        report.p_value,
        report.spec.min_p_value,
        pass_fail(report.chi2_pass)
    );
    println!("wall time: {:.1} s", report.wall_seconds);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        save_report(&report, &dir.join("validation.json"))?;
        let seeds = BTreeMap::from([("scene".to_string(), rc.scene.seed)]);
        write_run_dir(dir, "validate-channel", rc, seeds, &["validation.json"])?;
    }
    Ok(if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        println!("channel validation FAILED");
        ExitCode::from(1)
    })
}

fn parse_pose(s: &str) -> Result<Pose> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad pose component {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let orientation = match vals.len() {
        3 => UnitQuaternion::normalize(1.0, 0.0, 0.0, 0.0),
        7 => UnitQuaternion::normalize(vals[3], vals[4], vals[5], vals[6]),
        n => {
            return Err(Error::invalid(format!(
                "--pose takes x,y,z or x,y,z,qw,qx,qy,qz (got {n} values)"
            )))
        }
    };
    Ok(Pose {
        position: Vec3::new(vals[0], vals[1], vals[2]),
        orientation,
    })
}

pub fn cmd_simulate(rc: &RunConfig, pose: Option<&str>, out: &Path) -> Result<ExitCode> {
    let seed = rc.scene.seed;
    let pose_a = match pose {
        Some(s) => parse_pose(s)?,
        None => {
            let mut rng = derive_rng(seed, stream_key(Domain::Pose, 0, 0, 0));
            sample_pose(&rc.scene, &mut rng)
        }
    };
    let log = simulate_scene(&rc.scene, &pose_a, mix_seed(seed, 0))?;
    std::fs::create_dir_all(out)?;
    save_log(&log, &out.join("log.csv"), &out.join("log.header.json"))?;
    let events: usize = log.pilots.iter().map(|p| p.events.len()).sum();
    println!(
        "simulated 6 pilots at |p_A| = {:.2} um: {events} absorption events -> {}",
        pose_a.position.norm(),
        out.join("log.csv").display()
    );
    let seeds = BTreeMap::from([("scene".to_string(), seed)]);
    write_run_dir(out, "simulate", rc, seeds, &["log.csv", "log.header.json"])?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_gen_dataset(rc: &RunConfig, n: usize, out: &Path) -> Result<ExitCode> {
    let seed = rc.scene.seed;
    let t0 = Instant::now();
    let ds = generate_dataset(&rc.scene, n, seed)?;
    std::fs::create_dir_all(out)?;
    save_dataset(&ds, &out.join("dataset"))?;
    println!(
        "generated {n} samples in {:.1} s -> {}",
        t0.elapsed().as_secs_f64(),
        out.join("dataset.data.csv").display()
    );
    let seeds = BTreeMap::from([("generation".to_string(), seed)]);
    write_run_dir(
        out,
        "gen-dataset",
        rc,
        seeds,
        &["dataset.meta.json", "dataset.data.csv"],
    )?;
    Ok(ExitCode::SUCCESS)
}

/// Accepts the dataset base path, its directory, or either of its two files.
fn dataset_base(p: &Path) -> PathBuf {
    if p.is_dir() {
        return p.join("dataset");
    }
    let s = p.to_string_lossy();
    for suffix in [".meta.json", ".data.csv"] {
        if let Some(stripped) = s.strip_suffix(suffix) {
            return PathBuf::from(stripped);
        }
    }
    p.to_path_buf()
}

fn split_records(
    records: &[SampleRecord],
    spec: &mcvd_locate::dataset::SplitSpec,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>)> {
    let idx = split(records, spec)?;
    let take = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect();
    Ok((take(&idx.train), take(&idx.val), take(&idx.test)))
}

pub fn cmd_train(rc: &RunConfig, dataset: &Path, out: &Path) -> Result<ExitCode> {
    let ds = load_dataset(&dataset_base(dataset))?;
    let (tr, va, te) = split_records(&ds.records, &rc.split)?;
    println!(
        "split {}/{}/{} (train/val/test)",
        tr.len(),
        va.len(),
        te.len()
    );
    let t0 = Instant::now();
    let outcome = train(&tr, &va, &ds.scene, Dims::default(), &rc.train, &rc.weights)?;
    if outcome.model.scaler.n_fit_rows() != tr.len() {
        return Err(Error::State(format!(
            "data leakage: scaler fit on {} rows but the train split has {}",
            outcome.model.scaler.n_fit_rows(),
            tr.len()
        )));
    }
    std::fs::create_dir_all(out)?;
    save_model(&outcome.model, &out.join("model.json"))?;
    save_history(&outcome.history, &out.join("history.csv"))?;
    let last_val = outcome.history.last().map(|h| h.val.total);
    println!(
        "trained {} epochs in {:.1} s (best epoch {}, early stop: {}){}",
        outcome.history.len(),
        t0.elapsed().as_secs_f64(),
        outcome.best_epoch,
        outcome.stopped_early,
        match last_val {
            Some(v) => format!(", final val loss {v:.6}"),
            None => String::new(),
        }
    );
    println!("model -> {}", out.join("model.json").display());
    let seeds = BTreeMap::from([
        ("init".to_string(), rc.train.init_seed),
        ("split".to_string(), rc.split.split_seed),
    ]);
    write_run_dir(out, "train", rc, seeds, &["model.json", "history.csv"])?;
    Ok(ExitCode::SUCCESS)
}

/// Physical-parameter equality; the seed may differ between runs.
fn scenes_compatible(a: &SceneConfig, b: &SceneConfig) -> bool {
    let mut a = a.clone();
    let mut b = b.clone();
    a.seed = 0;
    b.seed = 0;
    a == b
}

fn prediction_labels(p: &Prediction) -> [f64; N_LABELS] {
    let mut row = [0.0; N_LABELS];
    row[0] = p.position.x;
    row[1] = p.position.y;
    row[2] = p.position.z;
    row[3] = p.orientation.w;
    row[4] = p.orientation.x;
    row[5] = p.orientation.y;
    row[6] = p.orientation.z;
    for k in 0..6 {
        row[7 + 3 * k] = p.tx[k].x;
        row[8 + 3 * k] = p.tx[k].y;
        row[9 + 3 * k] = p.tx[k].z;
    }
    row
}

struct EvalContext {
    train_rows: Vec<SampleRecord>,
    val_rows: Vec<SampleRecord>,
    test_rows: Vec<SampleRecord>,
    truth: Vec<[f64; N_LABELS]>,
    mlp_pred: Vec<[f64; N_LABELS]>,
}

fn load_eval_context(rc: &RunConfig, dataset: &Path, model_path: &Path) -> Result<EvalContext> {
    let ds = load_dataset(&dataset_base(dataset))?;
    let model = load_model(model_path)?;
    if !scenes_compatible(&model.scene, &ds.scene) {
        return Err(Error::invalid(
            "model and dataset were produced under different scene configs",
        ));
    }
    let (train_rows, val_rows, test_rows) = split_records(&ds.records, &rc.split)?;
    let truth: Vec<[f64; N_LABELS]> = test_rows.iter().map(|r| r.labels()).collect();
    let mlp_pred: Vec<[f64; N_LABELS]> = test_rows
        .iter()
        .map(|r| predict(&model, &r.features).map(|p| prediction_labels(&p)))
        .collect::<Result<_>>()?;
    Ok(EvalContext {
        train_rows,
        val_rows,
        test_rows,
        truth,
        mlp_pred,
    })
}

fn feature_matrix(rows: &[SampleRecord], scaler: &Scaler) -> Result<DMatrix<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * (1 + rows[0].features.len()));
    for r in rows {
        flat.extend(scaler.transform_features(&r.features)?);
    }
    let x = DMatrix::from_row_iterator(rows.len(), flat.len() / rows.len(), flat);
    Ok(mcvd_locate::learn::with_intercept(&x))
}

fn label_matrix(rows: &[SampleRecord]) -> DMatrix<f64> {
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.labels()).collect();
    DMatrix::from_row_iterator(rows.len(), N_LABELS, flat)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    model: MetricsReport,
    baseline: MetricsReport,
    mae_position_reduction: f64,
    rmse_position_reduction: f64,
    mae_tx_reduction: f64,
    rmse_tx_reduction: f64,
    ridge_alpha: f64,
    ridge_val_mse: f64,
    ridge_alpha_on_boundary: bool,
}

pub fn cmd_eval(rc: &RunConfig, dataset: &Path, model_path: &Path, out: &Path) -> Result<ExitCode> {
    let ctx = load_eval_context(rc, dataset, model_path)?;
    let model_report = metrics_report(&ctx.truth, &ctx.mlp_pred)?;

    // Ridge baseline on the same split, alpha tuned on validation MSE.
    let mut scaler = Scaler::default();
    scaler.fit(&ctx.train_rows)?;
    let x_train = feature_matrix(&ctx.train_rows, &scaler)?;
    let y_train = label_matrix(&ctx.train_rows);
    let x_val = feature_matrix(&ctx.val_rows, &scaler)?;
    let y_val = label_matrix(&ctx.val_rows);
    let sel = select_ridge_alpha(&x_train, &y_train, &x_val, &y_val, &default_alpha_grid())?;
    let weights = ridge_fit(&x_train, &y_train, sel.alpha, true)?;
    let ridge_out = ridge_predict(&weights, &feature_matrix(&ctx.test_rows, &scaler)?);
    let ridge_pred: Vec<[f64; N_LABELS]> = (0..ridge_out.nrows())
        .map(|i| std::array::from_fn(|j| ridge_out[(i, j)]))
        .collect();
    let baseline_report = metrics_report(&ctx.truth, &ridge_pred)?;
    let cmp = compare(&model_report, &baseline_report)?;

    println!("test samples: {}", model_report.n_samples);
    println!(
        "model   : mean R2 {:.4} | position MAE {:.3} um, RMSE {:.3} um",
        model_report.mean_r2, model_report.mae_position, model_report.rmse_position
    );
    println!(
        "baseline: mean R2 {:.4} | position MAE {:.3} um, RMSE {:.3} um (ridge alpha {})",
        baseline_report.mean_r2,
        baseline_report.mae_position,
        baseline_report.rmse_position,
        sel.alpha
    );
    println!(
        "MAE reduced by {:.1}%, RMSE reduced by {:.1}%",
        100.0 * cmp.mae_position_reduction,
        100.0 * cmp.rmse_position_reduction
    );

    std::fs::create_dir_all(out)?;
    let report = EvalReport {
        model: cmp.model,
        baseline: cmp.baseline,
        mae_position_reduction: cmp.mae_position_reduction,
        rmse_position_reduction: cmp.rmse_position_reduction,
        mae_tx_reduction: cmp.mae_tx_reduction,
        rmse_tx_reduction: cmp.rmse_tx_reduction,
        ridge_alpha: sel.alpha,
        ridge_val_mse: sel.val_mse,
        ridge_alpha_on_boundary: sel.on_boundary,
    };
    save_report(&report, &out.join("metrics.json"))?;
    export_positions(&ctx, out, rc.scene.seed)?;
    let seeds = BTreeMap::from([
        ("split".to_string(), rc.split.split_seed),
        ("export".to_string(), rc.scene.seed),
    ]);
    write_run_dir(
        out,
        "eval",
        rc,
        seeds,
        &["metrics.json", "scatter.csv", "comparison3d.csv"],
    )?;
    Ok(ExitCode::SUCCESS)
}

fn export_positions(ctx: &EvalContext, out: &Path, seed: u64) -> Result<()> {
    let pos = |rows: &[[f64; N_LABELS]]| -> Vec<[f64; 3]> {
        rows.iter().map(|r| [r[0], r[1], r[2]]).collect()
    };
    export_scatter(
        &pos(&ctx.truth),
        &pos(&ctx.mlp_pred),
        &out.join("scatter.csv"),
        &out.join("comparison3d.csv"),
        seed,
    )
}

pub fn cmd_plot_export(
    rc: &RunConfig,
    dataset: &Path,
    model_path: &Path,
    out: &Path,
) -> Result<ExitCode> {
    let ctx = load_eval_context(rc, dataset, model_path)?;
    std::fs::create_dir_all(out)?;
    export_positions(&ctx, out, rc.scene.seed)?;
    println!(
        "wrote {} scatter rows and {} comparison samples -> {}",
        3 * ctx.truth.len(),
        ctx.truth
            .len()
            .min(mcvd_locate::evalkit::N_COMPARISON_SAMPLES),
        out.display()
    );
    let seeds = BTreeMap::from([
        ("split".to_string(), rc.split.split_seed),
        ("export".to_string(), rc.scene.seed),
    ]);
    write_run_dir(
        out,
        "plot-export",
        rc,
        seeds,
        &["scatter.csv", "comparison3d.csv"],
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_predict(model_path: &Path, log_path: &Path, header: Option<&Path>) -> Result<ExitCode> {
    let header_path = match header {
        Some(h) => h.to_path_buf(),
        None => log_path.with_extension("header.json"),
    };
    let model = load_model(model_path)?;
    let log = load_log(log_path, &header_path)?;
    if !scenes_compatible(&model.scene, &log.scene) {
        return Err(Error::invalid(
            "absorption log scene config does not match the model's scene config",
        ));
    }
    let fm = build_feature_matrix(&log)?;
    let low_confidence = fm.tokens.iter().all(|t| t.pilot_total == 0);
    if low_confidence {
        eprintln!("warning: no Node-B absorptions in any pilot; features are all sentinels");
    }
    let p = predict(&model, &flatten(&fm))?;
    let text = serde_json::to_string_pretty(&json!({
        "position": p.position,
        "orientation": p.orientation,
        "tx": p.tx,
        "attention": p.attention,
        "low_confidence": low_confidence,
    }))
    .expect("prediction always serializes");
    println!("{text}");
    Ok(ExitCode::SUCCESS)
}
