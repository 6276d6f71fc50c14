//! Evaluation metrics (R², MAE, RMSE) and figure-style CSV exports.
//!
//! All metrics operate in physical units (micrometers): callers must invert
//! any feature/target scaling before handing predictions to this module.

use crate::dataset::N_LABELS;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream_key, Domain};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Number of test cases exported for the 3D truth-vs-prediction comparison.
pub const N_COMPARISON_SAMPLES: usize = 5;

/// Aggregated test-split metrics for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r2_x: f64,
    pub r2_y: f64,
    pub r2_z: f64,
    /// Arithmetic mean of the per-axis R² values.
    pub mean_r2: f64,
    /// Single R² over all three position axes pooled (per-axis means in SS_tot).
    pub pooled_r2: f64,
    /// MAE over Node-A position coordinates, micrometers.
    pub mae_position: f64,
    /// RMSE over Node-A position coordinates, micrometers.
    pub rmse_position: f64,
    /// MAE over the 18 transmitter coordinates, micrometers.
    pub mae_tx: f64,
    /// RMSE over the 18 transmitter coordinates, micrometers.
    pub rmse_tx: f64,
    pub n_samples: usize,
}

/// Model-vs-baseline reduction percentages, as fractions (0.491 = 49.1%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model: MetricsReport,
    pub baseline: MetricsReport,
    pub mae_position_reduction: f64,
    pub rmse_position_reduction: f64,
    pub mae_tx_reduction: f64,
    pub rmse_tx_reduction: f64,
}

/// Coefficient of determination 1 − SS_res/SS_tot for one coordinate.
///
/// May be negative for predictors worse than the truth mean. A truth column
/// with (numerically) zero variance makes the metric undefined.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "r_squared: truth has {} rows, prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("r_squared requires at least 2 rows"));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|&y| (y - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(&y, &p)| (y - p).powi(2)).sum();
    let scale = truth.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    if ss_tot <= (f64::EPSILON * scale).powi(2) * n {
        return Err(Error::UndefinedMetric(
            "truth column has zero variance; R-squared is undefined".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

fn check_shapes<R: AsRef<[f64]>, S: AsRef<[f64]>>(
    truth: &[R],
    pred: &[S],
    op: &str,
) -> Result<usize> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{op}: truth has {} rows, prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut count = 0usize;
    for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
        let (t, p) = (t.as_ref(), p.as_ref());
        if t.len() != p.len() {
            return Err(Error::ShapeMismatch(format!(
                "{op}: row {i} has {} truth entries but {} predictions",
                t.len(),
                p.len()
            )));
        }
        count += t.len();
    }
    if count == 0 {
        return Err(Error::invalid(format!("{op} requires a non-empty matrix")));
    }
    Ok(count)
}

/// Mean absolute error over all matrix entries.
pub fn mae<R: AsRef<[f64]>, S: AsRef<[f64]>>(truth: &[R], pred: &[S]) -> Result<f64> {
    let count = check_shapes(truth, pred, "mae")?;
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            t.as_ref()
                .iter()
                .zip(p.as_ref())
                .map(|(&a, &b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum();
    Ok(sum / count as f64)
}

/// Root mean squared error over all matrix entries.
pub fn rmse<R: AsRef<[f64]>, S: AsRef<[f64]>>(truth: &[R], pred: &[S]) -> Result<f64> {
    let count = check_shapes(truth, pred, "rmse")?;
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            t.as_ref()
                .iter()
                .zip(p.as_ref())
                .map(|(&a, &b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((sum / count as f64).sqrt())
}

fn column(rows: &[[f64; N_LABELS]], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

/// Full metrics over label matrices laid out as [`crate::dataset::SampleRecord::labels`]:
/// position in columns 0..3, orientation quaternion in 3..7, TX coordinates in 7..25.
pub fn metrics_report(
    truth: &[[f64; N_LABELS]],
    pred: &[[f64; N_LABELS]],
) -> Result<MetricsReport> {
    if truth.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "metrics_report: truth has {} rows, prediction has {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::invalid("metrics_report requires at least 2 samples"));
    }
    let r2 = |j: usize| r_squared(&column(truth, j), &column(pred, j));
    let (r2_x, r2_y, r2_z) = (r2(0)?, r2(1)?, r2(2)?);
    let mean_r2 = (r2_x + r2_y + r2_z) / 3.0;

    let n = truth.len() as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for j in 0..3 {
        let col = column(truth, j);
        let mean = col.iter().sum::<f64>() / n;
        ss_tot += col.iter().map(|&y| (y - mean).powi(2)).sum::<f64>();
        ss_res += col
            .iter()
            .zip(pred.iter().map(|r| r[j]))
            .map(|(&y, p)| (y - p).powi(2))
            .sum::<f64>();
    }
    let pooled_r2 = 1.0 - ss_res / ss_tot;

    let pos = |rows: &[[f64; N_LABELS]]| -> Vec<[f64; 3]> {
        rows.iter().map(|r| [r[0], r[1], r[2]]).collect()
    };
    let tx = |rows: &[[f64; N_LABELS]]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| r[7..N_LABELS].to_vec()).collect()
    };
    let mae_position = mae(&pos(truth), &pos(pred))?;
    // Clamp away sub-ULP rounding so RMSE >= MAE holds exactly on every report.
    let rmse_position = rmse(&pos(truth), &pos(pred))?.max(mae_position);
    let mae_tx = mae(&tx(truth), &tx(pred))?;
    let rmse_tx = rmse(&tx(truth), &tx(pred))?.max(mae_tx);

    let report = MetricsReport {
        r2_x,
        r2_y,
        r2_z,
        mean_r2,
        pooled_r2,
        mae_position,
        rmse_position,
        mae_tx,
        rmse_tx,
        n_samples: truth.len(),
    };
    assert!(
        report.rmse_position >= report.mae_position
            && report.mae_position >= 0.0
            && report.rmse_tx >= report.mae_tx
            && report.mae_tx >= 0.0,
        "metric invariant RMSE >= MAE >= 0 violated: {report:?}"
    );
    Ok(report)
}

fn reduction(baseline: f64, model: f64, metric: &str) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::UndefinedReduction {
            metric: metric.to_string(),
        });
    }
    Ok((baseline - model) / baseline)
}

/// Relative error reductions of `model` over `baseline` on the same test split.
pub fn compare(model: &MetricsReport, baseline: &MetricsReport) -> Result<ComparisonReport> {
    if model.n_samples != baseline.n_samples {
        return Err(Error::invalid(format!(
            "compare requires reports from the same test split ({} vs {} samples)",
            model.n_samples, baseline.n_samples
        )));
    }
    Ok(ComparisonReport {
        mae_position_reduction: reduction(
            baseline.mae_position,
            model.mae_position,
            "position MAE",
        )?,
        rmse_position_reduction: reduction(
            baseline.rmse_position,
            model.rmse_position,
            "position RMSE",
        )?,
        mae_tx_reduction: reduction(baseline.mae_tx, model.mae_tx, "TX MAE")?,
        rmse_tx_reduction: reduction(baseline.rmse_tx, model.rmse_tx, "TX RMSE")?,
        model: model.clone(),
        baseline: baseline.clone(),
    })
}

/// Serialize a report (or any serializable value) as pretty JSON with a trailing newline.
pub fn save_report<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::State(format!("failed to serialize report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Write per-axis scatter data (`axis,truth,prediction`) for Node-A positions,
/// plus a 3D truth-vs-prediction CSV for [`N_COMPARISON_SAMPLES`] deterministically
/// sampled test cases.
pub fn export_scatter(
    truth: &[[f64; 3]],
    pred: &[[f64; 3]],
    scatter_path: &Path,
    comparison_path: &Path,
    seed: u64,
) -> Result<()> {
    check_shapes(truth, pred, "export_scatter")?;
    let mut w = csv::Writer::from_path(scatter_path)?;
    w.write_record(["axis", "truth", "prediction"])?;
    for (j, axis) in ["x", "y", "z"].iter().enumerate() {
        for (t, p) in truth.iter().zip(pred) {
            w.write_record([axis.to_string(), format!("{}", t[j]), format!("{}", p[j])])?;
        }
    }
    w.flush()?;

    let mut rng = derive_rng(seed, stream_key(Domain::Export, 0, 0, 0));
    let k = N_COMPARISON_SAMPLES.min(truth.len());
    let mut picked = rand::seq::index::sample(&mut rng, truth.len(), k).into_vec();
    picked.sort_unstable();

    let mut w = csv::Writer::from_path(comparison_path)?;
    w.write_record([
        "sample", "truth_x", "truth_y", "truth_z", "pred_x", "pred_y", "pred_z",
    ])?;
    for i in picked {
        let (t, p) = (&truth[i], &pred[i]);
        w.write_record([
            format!("{i}"),
            format!("{}", t[0]),
            format!("{}", t[1]),
            format!("{}", t[2]),
            format!("{}", p[0]),
            format!("{}", p[1]),
            format!("{}", p[2]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
