//! Run configuration: one JSON document with optional sections.
//!
//! Precedence is CLI flags > config file > built-in defaults. A section
//! present in the file replaces the built-in defaults for that section;
//! within `train` and `weights`, individual fields may be given and the
//! rest default. The top-level `seed` (or `--seed`) overrides both the
//! scene seed and the training init seed so one number pins a whole run.

use std::path::Path;

use mcvd_locate::config::SceneConfig;
use mcvd_locate::dataset::SplitSpec;
use mcvd_locate::error::{Error, Result};
use mcvd_locate::learn::{LossWeights, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub split: SplitSpec,
    /// Master seed; `--seed` on the command line wins over this.
    pub seed: Option<u64>,
}

pub fn load(path: Option<&Path>, cli_seed: Option<u64>) -> Result<RunConfig> {
    let mut rc: RunConfig = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?
        }
    };
    if let Some(s) = cli_seed {
        rc.seed = Some(s);
    }
    if let Some(s) = rc.seed {
        rc.scene.seed = s;
        rc.train.init_seed = s;
    }
    rc.scene.validate()?;
    rc.train.validate()?;
    rc.weights.validate()?;
    rc.split.validate()?;
    Ok(rc)
}
