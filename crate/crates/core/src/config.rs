//! Engine and partner-model configuration.
//!
//! Both live in one TOML file: an `[engine]` table for the planner and
//! a `[dbn]` table for the partner model. Every field is optional and
//! falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partner_model::{DbnParameters, PartnerModelError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("engine config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("dbn parameters: {0}")]
    Dbn(#[from] PartnerModelError),
}

/// Planner and knowledge-update settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Weight of expertise in declarative / repeat updates; 0 < alpha <= 1.
    pub alpha: f64,
    /// Capacity scale; capacity is (1 - E(L)) * kappa.
    pub kappa: u32,
    /// Penalty for conversationally invalid actions.
    pub beta: f64,
    /// Grounding threshold on LoU.
    pub gth: f64,
    pub fb_gain: f64,
    pub fb_loss: f64,
    pub mcts_iterations: u32,
    pub mcts_exploration: f64,
    pub mcts_seed: u64,
    /// Search depth in agent turns.
    pub horizon: u32,
    /// Weight of the grounding-progress term added at search leaves.
    pub progress_weight: f64,
    /// Sample move success instead of applying the expected LoU.
    pub sampled_effects: bool,
    /// Hard cap on cycles per session.
    pub max_cycles: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            kappa: 5,
            beta: -100.0,
            gth: 0.8,
            fb_gain: 0.3,
            fb_loss: 0.5,
            mcts_iterations: 2000,
            mcts_exploration: std::f64::consts::SQRT_2,
            mcts_seed: 0,
            horizon: 6,
            progress_weight: 1.0,
            sampled_effects: false,
            max_cycles: 1000,
        }
    }
}

impl EngineConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field, message: &str| {
            Err(ConfigError::Invalid {
                field,
                message: message.to_string(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid("alpha", "must satisfy 0 < alpha <= 1");
        }
        if self.kappa < 1 {
            return invalid("kappa", "must be at least 1");
        }
        if !(self.beta < -10.0) {
            return invalid("beta", "must be below -10");
        }
        if !(self.gth > 0.0 && self.gth < 1.0) {
            return invalid("gth", "must satisfy 0 < gth < 1");
        }
        if !(0.0..=1.0).contains(&self.fb_gain) {
            return invalid("fb_gain", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.fb_loss) {
            return invalid("fb_loss", "must lie in [0, 1)");
        }
        if self.mcts_iterations == 0 {
            return invalid("mcts_iterations", "must be positive");
        }
        if !(self.mcts_exploration >= 0.0) {
            return invalid("mcts_exploration", "must be non-negative");
        }
        if self.horizon == 0 {
            return invalid("horizon", "must be positive");
        }
        if !(self.progress_weight >= 0.0) {
            return invalid("progress_weight", "must be non-negative");
        }
        if self.max_cycles == 0 || self.max_cycles > crate::partner_model::FILTER_HORIZON {
            return invalid("max_cycles", "must lie in [1, 1000]");
        }
        Ok(())
    }
}

/// Contents of a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub engine: EngineConfig,
    pub dbn: DbnParameters,
}

impl Settings {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let settings: Settings = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.engine.validate()?;
        self.dbn.validate()?;
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("settings serialize")
    }
}
