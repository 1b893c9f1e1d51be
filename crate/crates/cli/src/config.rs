//! Run configuration: artifact locations, expert settings, fusion and
//! evaluation options, and the master seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use roadex_core::eval::Protocol;
use roadex_core::fusion::{FilterStart, DEFAULT_ALPHA};
use roadex_core::simgen::{DatasetSpec, SceneScoreSpec};
use roadex_experts::{BehaviorConfig, InteractionConfig};

use crate::error::{CliError, Result};

/// Environment variables that override the configured directories.
pub const ENV_DATA_DIR: &str = "ROADEX_DATA_DIR";
pub const ENV_WEIGHTS_DIR: &str = "ROADEX_WEIGHTS_DIR";
pub const ENV_SCORES_DIR: &str = "ROADEX_SCORES_DIR";
pub const ENV_REPORT_DIR: &str = "ROADEX_REPORT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub scores_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            weights_dir: "weights".into(),
            scores_dir: "scores".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSettings {
    /// Confidence level of the per-expert thresholds.
    pub alpha: f64,
    pub mode: FilterStart,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            alpha: DEFAULT_ALPHA,
            mode: FilterStart::Immediate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub protocol: Protocol,
    /// Operating threshold; the ensemble threshold when absent.
    pub tau: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            protocol: Protocol::Raw,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; overrides the seeds of the dataset and expert sections.
    pub seed: u64,
    pub paths: Paths,
    pub dataset: DatasetSpec,
    pub scene: SceneScoreSpec,
    pub interaction: InteractionConfig,
    pub behavior: BehaviorConfig,
    pub fusion: FusionSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            dataset: DatasetSpec::default(),
            scene: SceneScoreSpec::default(),
            interaction: InteractionConfig::default(),
            behavior: BehaviorConfig::default(),
            fusion: FusionSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate().map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path`, applies environment overrides and resolves relative
    /// directories against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(path, &text)?;
        cfg.apply_env();
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        for (var, dir) in [
            (ENV_DATA_DIR, &mut self.paths.data_dir),
            (ENV_WEIGHTS_DIR, &mut self.paths.weights_dir),
            (ENV_SCORES_DIR, &mut self.paths.scores_dir),
            (ENV_REPORT_DIR, &mut self.paths.report_dir),
        ] {
            if let Some(v) = std::env::var_os(var).filter(|v| !v.is_empty()) {
                *dir = v.into();
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec().validate()?;
        self.interaction_config().validate()?;
        self.behavior_config().validate()?;
        if !(self.fusion.alpha > 0.0 && self.fusion.alpha < 1.0) {
            return Err(CliError::Invalid(format!(
                "fusion.alpha must be in (0, 1), got {}",
                self.fusion.alpha
            )));
        }
        if let Some(t) = self.eval.tau.filter(|t| !t.is_finite()) {
            return Err(CliError::Invalid(format!("eval.tau must be finite, got {t}")));
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            ..self.dataset.clone()
        }
    }

    pub fn interaction_config(&self) -> InteractionConfig {
        InteractionConfig {
            seed: self.seed,
            ..self.interaction.clone()
        }
    }

    pub fn behavior_config(&self) -> BehaviorConfig {
        BehaviorConfig {
            seed: self.seed,
            ..self.behavior.clone()
        }
    }
}

impl Paths {
    pub fn resolve(&mut self, base: &Path) {
        for dir in [
            &mut self.data_dir,
            &mut self.weights_dir,
            &mut self.scores_dir,
            &mut self.report_dir,
        ] {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }
}
