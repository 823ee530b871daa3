//! Experiment configuration: one JSON file drives dataset creation, ensemble
//! construction, unlearning, baselines, and evaluation. CLI flags override
//! file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EtidError, Result};
use crate::nn::{LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Etid,
    RetrainSingle,
    RetrainEnsemble,
    Sisa,
    Relabel,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Etid => "etid",
            Method::RetrainSingle => "retrain_single",
            Method::RetrainEnsemble => "retrain_ensemble",
            Method::Sisa => "sisa",
            Method::Relabel => "relabel",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "etid" => Ok(Method::Etid),
            "retrain_single" => Ok(Method::RetrainSingle),
            "retrain_ensemble" => Ok(Method::RetrainEnsemble),
            "sisa" => Ok(Method::Sisa),
            "relabel" => Ok(Method::Relabel),
            other => Err(EtidError::validation(format!("unknown method `{other}`"))),
        }
    }

    pub fn needs_k3(&self) -> bool {
        matches!(
            self,
            Method::Etid | Method::RetrainEnsemble | Method::Relabel
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataConfig {
    /// When set, load this CSV instead of generating synthetic data.
    pub csv_path: Option<PathBuf>,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Gaussian clusters per class; 1 gives a single blob per class.
    #[serde(default = "one")]
    pub modes_per_class: usize,
    pub cluster_spread: f64,
    pub train_ratio: f64,
}

fn one() -> usize {
    1
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv_path: None,
            n_samples: 5000,
            n_features: 20,
            n_classes: 5,
            // Many small clusters per class: per-cluster sample scarcity is
            // what sub-models memorize, and disjoint-shard baselines starve.
            // A single blob per class leaves membership inference blind.
            modes_per_class: 25,
            cluster_spread: 2.0,
            train_ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub data: DataConfig,
    pub k: usize,
    pub unlearn_ratio: f64,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub distill: TrainConfig,
    pub rectify: TrainConfig,
    pub attack: TrainConfig,
    pub attack_hidden: usize,
    /// Internal resampling repeats of the membership-inference examination.
    pub attack_repeats: usize,
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    pub parallel: bool,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            format_version: 1,
            data: DataConfig::default(),
            k: 5,
            unlearn_ratio: 0.01,
            hidden: vec![128],
            train: TrainConfig {
                learning_rate: 0.1,
                epochs: 60,
                batch_size: 32,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            distill: TrainConfig {
                learning_rate: 0.2,
                epochs: 30,
                batch_size: 16,
                seed: 0,
                shuffle: true,
                loss: LossKind::KlToTargets,
            },
            // Rectification doubles as the step that restores sub-model
            // diversity on the erased rows, so it gets a real budget
            // (capped so a full unlearning pass stays well under a retrain).
            rectify: TrainConfig {
                learning_rate: 0.1,
                epochs: 20,
                batch_size: 32,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            attack: TrainConfig {
                learning_rate: 0.1,
                epochs: 60,
                batch_size: 32,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            attack_hidden: 16,
            attack_repeats: 8,
            methods: vec![
                Method::Etid,
                Method::RetrainSingle,
                Method::RetrainEnsemble,
                Method::Sisa,
                Method::Relabel,
            ],
            n_seeds: 5,
            parallel: true,
            seed: 17,
            output_dir: PathBuf::from("etid-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != 1 {
            return Err(EtidError::validation(format!(
                "config.format_version: unsupported version {}",
                self.format_version
            )));
        }
        if let Some(path) = &self.data.csv_path {
            if !path.exists() {
                return Err(EtidError::validation(format!(
                    "data.csv_path: {} does not exist",
                    path.display()
                )));
            }
        }
        if !(self.unlearn_ratio > 0.0 && self.unlearn_ratio < 1.0) {
            return Err(EtidError::validation(format!(
                "unlearn_ratio: must be in (0,1), got {}",
                self.unlearn_ratio
            )));
        }
        if self.data.modes_per_class < 1 {
            return Err(EtidError::validation(
                "data.modes_per_class: must be >= 1",
            ));
        }
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(EtidError::validation(format!(
                "data.train_ratio: must be in (0,1), got {}",
                self.data.train_ratio
            )));
        }
        if self.methods.iter().any(Method::needs_k3) && self.k < 3 {
            return Err(EtidError::validation(format!(
                "k: must be >= 3 for ensemble distillation methods, got {}",
                self.k
            )));
        }
        if self.n_seeds == 0 {
            return Err(EtidError::validation("n_seeds: must be >= 1"));
        }
        if self.attack_repeats < 2 {
            return Err(EtidError::validation("attack_repeats: must be >= 2"));
        }
        self.train.validate().map_err(prefix("train"))?;
        self.distill.validate().map_err(prefix("distill"))?;
        self.rectify.validate().map_err(prefix("rectify"))?;
        self.attack.validate().map_err(prefix("attack"))?;
        if self.distill.loss != LossKind::KlToTargets {
            return Err(EtidError::validation(
                "distill.loss: must be kl_to_targets",
            ));
        }
        Ok(())
    }
}

fn prefix(field: &'static str) -> impl Fn(EtidError) -> EtidError {
    move |e| EtidError::validation(format!("{field}: {e}"))
}

/// Default output root, overridable via this environment variable.
pub const OUTPUT_DIR_ENV: &str = "ETID_OUTPUT_DIR";

pub fn resolve_output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_mirrors_protocol() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.unlearn_ratio, 0.01);
        assert_eq!(cfg.n_seeds, 5);
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.unlearn_ratio = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("unlearn_ratio"), "{err}");

        let mut cfg = ExperimentConfig::default();
        cfg.k = 2;
        assert!(cfg.validate().unwrap_err().to_string().contains("k:"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let cfg = ExperimentConfig::default();
        cfg.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(serde_json::to_string(&cfg).unwrap(), serde_json::to_string(&loaded).unwrap());
    }
}
