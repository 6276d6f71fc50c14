//! Learning stack: scaler, attention-pooled MLP, physics-informed loss,
//! the training loop, and the ridge baseline.

pub mod loss;
pub mod model;
pub mod ridge;
pub mod scaler;
pub mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{UnitQuaternion, Vec3};

pub use loss::{
    batch_loss, finite_difference_check, loss_and_grad, prepare_samples, FdReport, LossContext,
    LossTerms, LossWeights, TrainSample,
};
pub use model::{forward, Dims, ForwardOutput, ModelParams};
pub use ridge::{
    default_alpha_grid, ridge_fit, ridge_predict, select_ridge_alpha, with_intercept,
    AlphaSelection,
};
pub use scaler::Scaler;
pub use train::{save_history, train, EpochStats, TrainConfig, TrainOutcome, TrainedModel};

pub const MODEL_LAYOUT_VERSION: &str = "mcvd-locate/v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    layout_version: String,
    model: TrainedModel,
}

/// Writes the model (parameters + scaler + scene) as one JSON file.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        layout_version: MODEL_LAYOUT_VERSION.to_string(),
        model: model.clone(),
    };
    let mut text = serde_json::to_string(&file)
        .map_err(|e| Error::State(format!("model serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedHeader(format!("{}: {e}", path.display())))?;
    if file.layout_version != MODEL_LAYOUT_VERSION {
        return Err(Error::VersionMismatch {
            found: file.layout_version,
            expected: MODEL_LAYOUT_VERSION.to_string(),
        });
    }
    if !file.model.scaler.is_fitted() {
        return Err(Error::State("model file carries an unfitted scaler".into()));
    }
    Ok(file.model)
}

/// World-space estimate for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
    pub tx: [Vec3; 6],
    pub attention: [f64; 6],
}

/// Runs the model on raw (unstandardized) features and maps the outputs
/// back to world units.
pub fn predict(model: &TrainedModel, raw_features: &[f64]) -> Result<Prediction> {
    let x = model.scaler.transform_features(raw_features)?;
    let out = forward(&model.params, &x)?;
    let mut labels = [0.0f64; 25];
    labels[0..3].copy_from_slice(&out.position);
    labels[3..7].copy_from_slice(&out.quat);
    labels[7..25].copy_from_slice(&out.tx);
    let phys = model.scaler.unstandardize_labels(&labels)?;
    let mut tx = [Vec3::ZERO; 6];
    for (k, t) in tx.iter_mut().enumerate() {
        *t = Vec3::new(phys[7 + 3 * k], phys[7 + 3 * k + 1], phys[7 + 3 * k + 2]);
    }
    Ok(Prediction {
        position: Vec3::new(phys[0], phys[1], phys[2]),
        orientation: UnitQuaternion {
            w: out.quat[0],
            x: out.quat[1],
            y: out.quat[2],
            z: out.quat[3],
        },
        tx,
        attention: out.attention,
    })
}
