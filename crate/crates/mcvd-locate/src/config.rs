//! Scene configuration: the single source of truth for physical and
//! simulation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::NodeLayout;

/// All physical and simulation parameters.
///
/// Units: micrometers, seconds, micrometers^2/second. `delta` is the tube
/// offset (emission happens at distance `r + delta` from a node center).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Absorbing sphere radius (both nodes), micrometers.
    pub r: f64,
    /// Diffusion coefficient, micrometers^2/s.
    #[serde(rename = "D")]
    pub d_coeff: f64,
    /// Molecules per pilot transmission.
    #[serde(rename = "N")]
    pub n_molecules: u64,
    /// Tube offset above the absorbing surface, micrometers.
    pub delta: f64,
    /// Simulation step, seconds.
    pub dt: f64,
    /// Per-pilot observation window (= guard time), seconds.
    #[serde(rename = "T_pilot")]
    pub t_pilot: f64,
    /// Histogram bin width for peak detection, seconds.
    pub bin_width: f64,
    /// Molecules farther than this from the midpoint of the two node
    /// centers are counted lost, micrometers.
    pub cull_radius: f64,
    /// Sampling range for |p_A|, micrometers.
    pub d_min: f64,
    pub d_max: f64,
    /// Global seed for all derived random streams.
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            r: 5.0,
            d_coeff: 100.0,
            n_molecules: 2000,
            delta: 0.5,
            dt: 1e-4,
            t_pilot: 5.0,
            bin_width: 0.01,
            cull_radius: 1000.0,
            d_min: 20.0,
            d_max: 50.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn layout(&self) -> NodeLayout {
        // invariants guarantee r > 0, delta > 0 once validated
        NodeLayout::new(self.r, self.delta).expect("validated config has a valid layout")
    }

    /// Checks every invariant; returns the config unchanged iff all hold,
    /// otherwise the full list of violated constraints.
    pub fn validate(&self) -> Result<&Self> {
        let mut errs = Vec::new();
        if !(self.r > 0.0) || !self.r.is_finite() {
            errs.push("r > 0".to_string());
        }
        if !(self.d_coeff > 0.0) || !self.d_coeff.is_finite() {
            errs.push("D > 0".to_string());
        }
        if self.n_molecules < 1 {
            errs.push("N >= 1".to_string());
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            errs.push("delta > 0".to_string());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            errs.push("dt > 0".to_string());
        }
        if !(self.t_pilot >= 100.0 * self.dt) {
            errs.push("T_pilot >= 100*dt".to_string());
        }
        if !(self.bin_width >= self.dt) {
            errs.push("bin_width >= dt".to_string());
        }
        if !(self.d_min > 2.0 * self.r + self.delta) {
            errs.push("d_min must exceed 2r+delta".to_string());
        }
        if !(self.d_max > self.d_min) {
            errs.push("d_max > d_min".to_string());
        }
        if !(self.cull_radius > 2.0 * self.d_max) {
            errs.push("cull_radius > 2*d_max".to_string());
        }
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<SceneConfig> {
        serde_json::from_str(s).map_err(|e| Error::MalformedHeader(format!("scene config: {e}")))
    }
}

/// Convenience alias mirroring the operation name used by callers.
pub fn validate_config(cfg: &SceneConfig) -> Result<&SceneConfig> {
    cfg.validate()
}
