//! Versioned experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use st3d::optim::{OptimizerWeights, ProblemTerms, SolverConfig, TemporalMode};
use st3d::scenesim::{NoiseConfig, RenderConfig, ScenarioSpec};
use st3d::tracker::{RegressSource, TrackerConfig};

use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SpatialMode {
    #[default]
    On,
    Off,
}

/// Randomized scene used when no scenario file is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub frames: usize,
    pub objects: usize,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { frames: 10, objects: 4 }
    }
}

/// Association, lifecycle and solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerSection {
    pub iou_threshold: f64,
    pub exhaustive: bool,
    pub max_misses: usize,
    pub sample_budget: usize,
    pub match_threshold: f64,
    pub regress_source: RegressSource,
    pub solver: SolverConfig,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            iou_threshold: t.iou_threshold,
            exhaustive: t.exhaustive,
            max_misses: t.max_misses,
            sample_budget: t.sample_budget,
            match_threshold: t.match_threshold,
            regress_source: t.regress_source,
            solver: t.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Scenario TOML; a random scene from `[scene]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// Default output directory; never written to the effective config.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub temporal: TemporalMode,
    #[serde(default)]
    pub spatial: SpatialMode,
    #[serde(default)]
    pub scene: SceneSection,
    /// `noise.seed` always equals `seed`.
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub weights: OptimizerWeights,
    #[serde(default)]
    pub tracker: TrackerSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            scenario: None,
            output: None,
            temporal: TemporalMode::default(),
            spatial: SpatialMode::default(),
            scene: SceneSection::default(),
            noise: NoiseConfig::default(),
            render: RenderConfig::default(),
            weights: OptimizerWeights::default(),
            tracker: TrackerSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::usage(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(CliError::usage(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        if config.noise.seed != 0 && config.noise.seed != config.seed {
            return Err(CliError::usage("noise.seed is derived from seed; set seed instead"));
        }
        Ok(config)
    }

    /// Reads a config file; relative scenario paths resolve against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text).map_err(|e| e.context(path.display()))?;
        if let Some(s) = &config.scenario {
            if s.is_relative() {
                config.scenario = Some(path.parent().unwrap_or(Path::new(".")).join(s));
            }
        }
        Ok(config)
    }

    /// Fills in derived values and checks every section.
    pub fn finalize(mut self) -> CliResult<Self> {
        self.noise.seed = self.seed;
        if let Some(s) = &self.scenario {
            let abs = std::path::absolute(s).map_err(|e| CliError::usage(format!("{}: {e}", s.display())))?;
            self.scenario = Some(abs);
        }
        if self.scene.frames < 2 || self.scene.objects == 0 {
            return Err(CliError::usage("scene needs at least 2 frames and 1 object"));
        }
        self.noise.validate()?;
        self.tracker_config().validate()?;
        Ok(self)
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        let t = &self.tracker;
        TrackerConfig {
            iou_threshold: t.iou_threshold,
            exhaustive: t.exhaustive,
            max_misses: t.max_misses,
            terms: ProblemTerms { spatial: self.spatial == SpatialMode::On, temporal: self.temporal },
            weights: self.weights,
            solver: t.solver,
            sample_budget: t.sample_budget,
            match_threshold: t.match_threshold,
            regress_source: t.regress_source,
        }
    }

    pub fn scenario_spec(&self) -> CliResult<ScenarioSpec> {
        match &self.scenario {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
                ScenarioSpec::from_toml(&text).map_err(|e| CliError::from(e).context(path.display()))
            }
            None => Ok(ScenarioSpec::default_random(self.scene.frames, self.scene.objects)),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml("version = 1\nseed = 7\n").unwrap().finalize().unwrap();
        assert_eq!(c.noise.seed, 7);
        assert_eq!(c.tracker_config().terms, ProblemTerms::default());
        assert_eq!(c.tracker.max_misses, 2);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(ExperimentConfig::from_toml("version = 1\nbogus = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 1\n[tracker]\niou = 0.3\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 2\n").is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("version = 1\nseed = 1\n[noise]\nseed = 5\n").is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let text = "version = 1\nseed = 3\ntemporal = \"coord\"\nspatial = \"off\"\n[tracker]\nexhaustive = true\n";
        let c = ExperimentConfig::from_toml(text).unwrap().finalize().unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap().finalize().unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_toml(), again.to_toml());
        assert!(!c.tracker_config().terms.spatial);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = ExperimentConfig::from_toml("version = 1\n[tracker]\niou_threshold = 1.5\n").unwrap();
        assert!(c.finalize().is_err());
        let c = ExperimentConfig::from_toml("version = 1\n[noise]\nimage = -1.0\n").unwrap();
        assert!(c.finalize().is_err());
    }
}
