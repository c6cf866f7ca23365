//! Experiment configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Activation, ClassWeights, MlpSpec};
use crate::optim::AdamConfig;
use crate::sharpness::SharpnessConfig;
use crate::synthbench::{ShiftSpec, TaskSpec};

pub const CONFIG_VERSION: u32 = 1;

/// Hidden layers and activation; input and output widths come from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize) -> Result<MlpSpec> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(crate::model::N_CLASSES);
        MlpSpec::new(dims, self.activation)
    }
}

/// Which optimizer trains the model. `total_steps` of the Adam settings is
/// always replaced by `epochs * batches_per_epoch` at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerChoice {
    Adam {
        #[serde(default = "default_adam")]
        adam: AdamConfig,
    },
    Sam {
        rho: f64,
        #[serde(default = "default_adam")]
        adam: AdamConfig,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        force_zero_perturbation: bool,
    },
}

impl Default for OptimizerChoice {
    fn default() -> Self {
        OptimizerChoice::Adam { adam: default_adam() }
    }
}

/// Adam settings sized for the synthetic benchmark: a faster schedule than
/// the library default, which targets much larger models.
pub fn default_adam() -> AdamConfig {
    AdamConfig {
        lr_max: 3e-3,
        lr_min: 1.5e-4,
        ..AdamConfig::default()
    }
}

impl OptimizerChoice {
    pub fn sam(rho: f64) -> Self {
        OptimizerChoice::Sam {
            rho,
            adam: default_adam(),
            force_zero_perturbation: false,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            OptimizerChoice::Adam { .. } => "adam",
            OptimizerChoice::Sam { .. } => "sam",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            OptimizerChoice::Adam { .. } => None,
            OptimizerChoice::Sam { rho, .. } => Some(*rho),
        }
    }

    pub fn adam(&self) -> &AdamConfig {
        match self {
            OptimizerChoice::Adam { adam } | OptimizerChoice::Sam { adam, .. } => adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if let Some(rho) = self.rho() {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Label of the system in tables, e.g. `mlp32-sam`.
    #[serde(default)]
    pub system: String,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub shifts: Vec<ShiftSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub sharpness: SharpnessConfig,
    /// Where results go; not part of the config hash.
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_batch() -> usize {
    32
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            system: "mlp".into(),
            task: TaskSpec::default(),
            shifts: Vec::new(),
            model: ModelConfig::default(),
            optimizer: OptimizerChoice::default(),
            epochs: 30,
            batch_size: default_batch(),
            seeds: default_seeds(),
            class_weights: ClassWeights::default(),
            sharpness: SharpnessConfig::default(),
            output_dir: default_output(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.task.validate()?;
        self.model.spec(self.task.feature_dim)?;
        self.optimizer.validate()?;
        self.class_weights.validate()?;
        self.sharpness.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_text(path)?)
    }

    pub fn spec(&self) -> Result<MlpSpec> {
        self.model.spec(self.task.feature_dim)
    }

    pub fn system_label(&self) -> String {
        if self.system.is_empty() {
            "mlp".into()
        } else {
            self.system.clone()
        }
    }

    /// Hash of every field that affects results. Seeds, the output
    /// directory and the system label are excluded: a run is identified by
    /// this hash plus its seed.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("seeds");
            map.remove("output_dir");
            map.remove("system");
        }
        // serde_json maps are ordered by key, so this text is canonical.
        let text = serde_json::to_string(&v).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn run_id(&self, seed: u64) -> String {
        format!("{}-s{seed}", self.hash())
    }

    /// Test-set names in evaluation order: `matched` first, then each shift.
    pub fn test_set_names(&self) -> Vec<String> {
        let mut names = vec!["matched".to_string()];
        for s in &self.shifts {
            let n = s.name();
            if !names.contains(&n) {
                names.push(n);
            }
        }
        names
    }
}
