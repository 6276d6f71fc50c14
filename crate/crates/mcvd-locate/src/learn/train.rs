//! Mini-batch adaptive-moment training with early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::SceneConfig;
use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::learn::loss::{
    batch_loss, loss_and_grad, prepare_samples, LossContext, LossTerms, LossWeights,
};
use crate::learn::model::{Dims, ModelParams};
use crate::learn::scaler::Scaler;
use crate::rng::{derive_rng, stream_key, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// epochs without validation improvement before stopping
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.patience == 0 {
            problems.push("patience must be at least 1".to_string());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must lie in [0, 1)"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Per-epoch train/validation loss breakdown (epochs are 1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: LossTerms,
    pub val: LossTerms,
}

/// Everything inference needs, bundled for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub scene: SceneConfig,
    pub scaler: Scaler,
    pub params: ModelParams,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: u64,
}

impl Adam {
    fn new(like: &ModelParams) -> Adam {
        Adam {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, tc: &TrainConfig) {
        self.step += 1;
        let b1c = 1.0 - tc.beta1.powi(self.step as i32);
        let b2c = 1.0 - tc.beta2.powi(self.step as i32);
        let pt = params.tensors_mut();
        let gt = grads.tensors();
        let mt = self.m.tensors_mut();
        let vt = self.v.tensors_mut();
        for (((p, g), m), v) in pt.into_iter().zip(gt).zip(mt).zip(vt) {
            for j in 0..p.len() {
                m[j] = tc.beta1 * m[j] + (1.0 - tc.beta1) * g[j];
                v[j] = tc.beta2 * v[j] + (1.0 - tc.beta2) * g[j] * g[j];
                let m_hat = m[j] / b1c;
                let v_hat = v[j] / b2c;
                p[j] -= tc.learning_rate * m_hat / (v_hat.sqrt() + 1e-8);
            }
        }
    }
}

fn weighted_add(acc: &mut LossTerms, terms: &LossTerms, weight: f64) {
    acc.total += weight * terms.total;
    acc.pos += weight * terms.pos;
    acc.quat += weight * terms.quat;
    acc.tx += weight * terms.tx;
    acc.phys += weight * terms.phys;
    acc.consist += weight * terms.consist;
    acc.n_phys += terms.n_phys;
}

/// Fits the scaler on the training rows only, then runs mini-batch descent.
/// Returns the parameters with the best validation loss seen.
pub fn train(
    train_rows: &[SampleRecord],
    val_rows: &[SampleRecord],
    scene: &SceneConfig,
    dims: Dims,
    tc: &TrainConfig,
    lw: &LossWeights,
) -> Result<TrainOutcome> {
    tc.validate()?;
    lw.validate()?;
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(Error::invalid(
            "training and validation rows must be non-empty",
        ));
    }

    let mut scaler = Scaler::default();
    scaler.fit(train_rows)?;
    // leakage guard: the scaler must have seen exactly the train split
    if scaler.n_fit_rows() != train_rows.len() {
        return Err(Error::State(format!(
            "scaler saw {} rows but the train split holds {}",
            scaler.n_fit_rows(),
            train_rows.len()
        )));
    }

    let train_samples = prepare_samples(train_rows, &scaler)?;
    let val_samples = prepare_samples(val_rows, &scaler)?;
    if lw.lambda_phys > 0.0 && train_samples.iter().all(|s| s.d_tilde.is_none()) {
        eprintln!(
            "warning: physics loss enabled but no training sample has a finite \
             distance estimate; the term will contribute zero"
        );
    }
    let ctx = LossContext {
        scaler: &scaler,
        layout: scene.layout(),
    };

    let mut params = ModelParams::init(dims, tc.init_seed);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut adam = Adam::new(&params);
    let n_train = train_samples.len() as f64;

    for epoch in 1..=tc.max_epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = derive_rng(tc.init_seed, stream_key(Domain::Train, epoch as u64, 0, 0));
        order.shuffle(&mut rng);

        let mut train_terms = LossTerms {
            total: 0.0,
            pos: 0.0,
            quat: 0.0,
            tx: 0.0,
            phys: 0.0,
            consist: 0.0,
            n_phys: 0,
        };
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| train_samples[i].clone()).collect();
            let (terms, grads) =
                loss_and_grad(&params, &batch, lw, &ctx).map_err(|e| divergence_or(e, epoch))?;
            weighted_add(&mut train_terms, &terms, chunk.len() as f64 / n_train);
            adam.update(&mut params, &grads, tc);
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }

        let val_terms =
            batch_loss(&params, &val_samples, lw, &ctx).map_err(|e| divergence_or(e, epoch))?;
        history.push(EpochStats {
            epoch,
            train: train_terms,
            val: val_terms,
        });

        if val_terms.total < best_val {
            best_val = val_terms.total;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tc.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: TrainedModel {
            scene: scene.clone(),
            scaler,
            params: best_params,
            weights: *lw,
        },
        history,
        best_epoch,
        stopped_early,
    })
}

fn divergence_or(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(_) => Error::Divergence { epoch },
        other => other,
    }
}

/// Training curves as CSV: epoch, totals, then per-term columns.
pub fn save_history(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "train_total",
        "val_total",
        "train_pos",
        "train_quat",
        "train_tx",
        "train_phys",
        "train_consist",
        "val_pos",
        "val_quat",
        "val_tx",
        "val_phys",
        "val_consist",
    ])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            format!("{}", h.train.total),
            format!("{}", h.val.total),
            format!("{}", h.train.pos),
            format!("{}", h.train.quat),
            format!("{}", h.train.tx),
            format!("{}", h.train.phys),
            format!("{}", h.train.consist),
            format!("{}", h.val.pos),
            format!("{}", h.val.quat),
            format!("{}", h.val.tx),
            format!("{}", h.val.phys),
            format!("{}", h.val.consist),
        ])?;
    }
    w.flush()?;
    Ok(())
}
