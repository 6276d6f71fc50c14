//! Column standardization, fitted on training rows only.

use serde::{Deserialize, Serialize};

use crate::dataset::{SampleRecord, N_LABELS};
use crate::error::{Error, Result};
use crate::features::FLAT_WIDTH;

/// Floor applied to constant columns so apply never divides by ~0.
pub const STD_FLOOR: f64 = 1e-8;

/// Number of standardized target columns: position (3) + tx (18).
/// Quaternion components are left raw.
pub const N_SCALED_TARGETS: usize = 21;

/// Per-column mean/std for features and the metric targets.
///
/// Target layout: [0..3) position, [3..21) tx, matching label slots
/// [0..3) and [7..25).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct Scaler {
    fitted: bool,
    n_fit_rows: usize,
    feat_mean: Vec<f64>,
    feat_std: Vec<f64>,
    tgt_mean: Vec<f64>,
    tgt_std: Vec<f64>,
}


fn column_stats(rows: &[Vec<f64>], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; width];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; width];
    for row in rows {
        for (c, v) in row.iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// The 21 metric targets of a record, in scaler order.
fn metric_targets(rec: &SampleRecord) -> Vec<f64> {
    let labels = rec.labels();
    let mut t = Vec::with_capacity(N_SCALED_TARGETS);
    t.extend_from_slice(&labels[0..3]);
    t.extend_from_slice(&labels[7..25]);
    t
}

impl Scaler {
    /// Population mean/std per column over the given training rows.
    /// A scaler fits exactly once; refitting is a state error.
    pub fn fit(&mut self, train_rows: &[SampleRecord]) -> Result<()> {
        if self.fitted {
            return Err(Error::State("scaler is already fitted".into()));
        }
        if train_rows.is_empty() {
            return Err(Error::invalid("scaler needs at least one training row"));
        }
        for rec in train_rows {
            if rec.features.len() != FLAT_WIDTH {
                return Err(Error::ShapeMismatch(format!(
                    "sample {} has {} features, expected {FLAT_WIDTH}",
                    rec.sample_id,
                    rec.features.len()
                )));
            }
        }
        let feats: Vec<Vec<f64>> = train_rows.iter().map(|r| r.features.clone()).collect();
        (self.feat_mean, self.feat_std) = column_stats(&feats, FLAT_WIDTH);
        let tgts: Vec<Vec<f64>> = train_rows.iter().map(metric_targets).collect();
        (self.tgt_mean, self.tgt_std) = column_stats(&tgts, N_SCALED_TARGETS);
        self.n_fit_rows = train_rows.len();
        self.fitted = true;
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// How many rows the scaler was fitted on — the training-leakage guard
    /// compares this against the train split size.
    pub fn n_fit_rows(&self) -> usize {
        self.n_fit_rows
    }

    fn require_fitted(&self) -> Result<()> {
        if self.fitted {
            Ok(())
        } else {
            Err(Error::State("scaler must be fitted before use".into()))
        }
    }

    /// (x - mean)/std per feature column.
    pub fn transform_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.require_fitted()?;
        if features.len() != FLAT_WIDTH {
            return Err(Error::ShapeMismatch(format!(
                "expected {FLAT_WIDTH} features, found {}",
                features.len()
            )));
        }
        Ok(features
            .iter()
            .enumerate()
            .map(|(c, v)| (v - self.feat_mean[c]) / self.feat_std[c])
            .collect())
    }

    /// Standardizes the metric label slots of a 25-label vector; the
    /// quaternion slots [3..7) pass through raw.
    pub fn standardize_labels(&self, labels: &[f64; N_LABELS]) -> Result<[f64; N_LABELS]> {
        self.require_fitted()?;
        let mut out = *labels;
        for c in 0..3 {
            out[c] = (labels[c] - self.tgt_mean[c]) / self.tgt_std[c];
        }
        for c in 0..18 {
            out[7 + c] = (labels[7 + c] - self.tgt_mean[3 + c]) / self.tgt_std[3 + c];
        }
        Ok(out)
    }

    /// Exact inverse of `standardize_labels`.
    pub fn unstandardize_labels(&self, labels: &[f64; N_LABELS]) -> Result<[f64; N_LABELS]> {
        self.require_fitted()?;
        let mut out = *labels;
        for c in 0..3 {
            out[c] = labels[c] * self.tgt_std[c] + self.tgt_mean[c];
        }
        for c in 0..18 {
            out[7 + c] = labels[7 + c] * self.tgt_std[3 + c] + self.tgt_mean[3 + c];
        }
        Ok(out)
    }

    /// Mean/std of the position targets (scaler slots 0..3).
    pub fn position_moments(&self) -> (&[f64], &[f64]) {
        (&self.tgt_mean[0..3], &self.tgt_std[0..3])
    }

    /// Mean/std of the tx targets (scaler slots 3..21).
    pub fn tx_moments(&self) -> (&[f64], &[f64]) {
        (&self.tgt_mean[3..21], &self.tgt_std[3..21])
    }

    /// Builds a fitted scaler from explicit moments (diagnostics and the
    /// finite-difference harness; the training pipeline always uses `fit`).
    pub(crate) fn from_moments(
        feat_mean: Vec<f64>,
        feat_std: Vec<f64>,
        tgt_mean: Vec<f64>,
        tgt_std: Vec<f64>,
        n_fit_rows: usize,
    ) -> Scaler {
        Scaler {
            fitted: true,
            n_fit_rows,
            feat_mean,
            feat_std,
            tgt_mean,
            tgt_std,
        }
    }
}
