//! The JSON experiment config: one serializable source of truth per run.
//!
//! All randomness flows from the single root seed through named
//! substreams, so any stage can be re-run on its own and two runs with the
//! same config are byte-identical (timestamps aside).

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DEFAULT_PATTERN;
use crate::rain::RainParams;
use crate::trainer::TrainConfig;

#[derive(Debug)]
pub enum ConfigError {
    Io { path: PathBuf, source: io::Error },
    Parse { path: PathBuf, detail: String },
    MissingPath { path: PathBuf },
    NoSequences,
    NoEvalRain,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Self::Parse { path, detail } => write!(f, "{}: {detail}", path.display()),
            Self::MissingPath { path } => {
                write!(f, "configured path {} does not exist", path.display())
            }
            Self::NoSequences => write!(f, "config lists no clean sequence directories"),
            Self::NoEvalRain => write!(f, "config lists no eval rain settings"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Directories of clean frames, one sequence each.
    pub clean_dirs: Vec<PathBuf>,
    /// Frame file pattern inside each directory.
    #[serde(default = "default_pattern")]
    pub pattern: String,
}

fn default_pattern() -> String {
    DEFAULT_PATTERN.to_string()
}

/// Scalar training hyperparameters (rain settings and the seed live at the
/// experiment level).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub poisson_peak: f64,
    pub val_fraction: f64,
    pub base_channels: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            patch_size: d.patch_size,
            lr: d.lr,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            poisson_peak: d.poisson_peak,
            val_fraction: d.val_fraction,
            base_channels: d.base_channels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// Rain added to training sources (and to eval inputs by `synth`).
    pub source_rain: RainParams,
    /// Rain added to training targets.
    pub target_rain: RainParams,
    /// Densities evaluated by the `table` command, in row order.
    pub eval_rain: Vec<RainParams>,
    #[serde(default)]
    pub train: TrainSettings,
}

impl ExperimentConfig {
    /// Defaults mirroring the training protocol: source rain at density
    /// 300/std 10, target rain at 500/20, table rows at 300, 500, 800.
    pub fn with_dataset(clean_dirs: Vec<PathBuf>, out_dir: PathBuf, seed: u64) -> Self {
        let source_rain = RainParams::default();
        let target_rain = source_rain
            .with_density(500.0, 20.0)
            .expect("valid density");
        let eval_rain = vec![
            source_rain.clone(),
            source_rain.with_density(500.0, 20.0).expect("valid density"),
            source_rain.with_density(800.0, 30.0).expect("valid density"),
        ];
        Self {
            seed,
            out_dir,
            dataset: DatasetConfig {
                clean_dirs,
                pattern: default_pattern(),
            },
            source_rain,
            target_rain,
            eval_rain,
            train: TrainSettings::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Referenced input paths must exist; the output directory is created
    /// on demand by the commands.
    pub fn validate_paths(&self) -> Result<(), ConfigError> {
        if self.dataset.clean_dirs.is_empty() {
            return Err(ConfigError::NoSequences);
        }
        if self.eval_rain.is_empty() {
            return Err(ConfigError::NoEvalRain);
        }
        for dir in &self.dataset.clean_dirs {
            if !dir.is_dir() {
                return Err(ConfigError::MissingPath { path: dir.clone() });
            }
        }
        Ok(())
    }

    /// Assemble the trainer view of this experiment.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            patch_size: self.train.patch_size,
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.eps,
            seed: self.seed,
            source_rain: self.source_rain.clone(),
            target_rain: self.target_rain.clone(),
            poisson_peak: self.train.poisson_peak,
            val_fraction: self.train.val_fraction,
            base_channels: self.train.base_channels,
        }
    }

    /// The exact resolved config, echoed into every output directory.
    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::with_dataset(
            vec![PathBuf::from("data/seq0")],
            PathBuf::from("out"),
            7,
        );
        let text = cfg.to_pretty_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.eval_rain.len(), 3);
        assert_eq!(back.source_rain, cfg.source_rain);
        assert_eq!(back.to_pretty_json(), text);
    }

    #[test]
    fn invalid_rain_in_json_is_rejected() {
        let cfg = ExperimentConfig::with_dataset(
            vec![PathBuf::from("data/seq0")],
            PathBuf::from("out"),
            7,
        );
        let text = cfg.to_pretty_json().replace("\"angle_deg\": 10.0", "\"angle_deg\": 77.0");
        let err = serde_json::from_str::<ExperimentConfig>(&text).unwrap_err();
        assert!(err.to_string().contains("angle_deg"), "{err}");
    }

    #[test]
    fn missing_dirs_fail_validation() {
        let cfg = ExperimentConfig::with_dataset(
            vec![PathBuf::from("/definitely/not/here")],
            PathBuf::from("out"),
            0,
        );
        assert!(matches!(
            cfg.validate_paths(),
            Err(ConfigError::MissingPath { .. })
        ));
    }
}
