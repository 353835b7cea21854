//! Pipeline configuration.
//!
//! One TOML file with a section per stage. Unknown keys are rejected.
//! Command-line flags override the file, which overrides the defaults here.
//! The config hash is the SHA-256 of the resolved config serialised as JSON
//! with sorted keys.

use std::path::{Path, PathBuf};

use omnidistill_core::data::ImageShape;
use omnidistill_core::distill::DistillConfig;
use omnidistill_core::model::{ArchKind, Architecture, TrainConfig};
use omnidistill_core::selection::SelectionConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::formats::ConfigHash;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub architecture: ArchSection,
    pub train: TrainSection,
    pub selection: SelectionSection,
    pub distill: DistillSection,
    pub probe: ProbeSection,
    pub compare: CompareSection,
}


/// Input datasets, relative to the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub anchor: PathBuf,
    pub pool: PathBuf,
    pub test: Option<PathBuf>,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            anchor: "anchor.odim".into(),
            pool: "pool.odim".into(),
            test: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchName {
    Mlp,
    TinyConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub kind: ArchName,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Convolution filters and kernel size; ignored for `mlp`.
    pub filters: usize,
    pub kernel: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            kind: ArchName::Mlp,
            hidden: vec![32],
            feature_dim: 16,
            filters: 8,
            kernel: 3,
        }
    }
}

impl ArchSection {
    pub fn build(&self, input: ImageShape, num_classes: usize) -> Result<Architecture, Error> {
        let kind = match self.kind {
            ArchName::Mlp => ArchKind::Mlp,
            ArchName::TinyConv => ArchKind::TinyConv {
                filters: self.filters,
                kernel: self.kernel,
            },
        };
        let arch = Architecture {
            kind,
            input,
            hidden_widths: self.hidden.clone(),
            feature_dim: self.feature_dim,
            num_classes,
        };
        arch.validate().map_err(|e| Error::Input(format!("architecture: {e}")))?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub flip_prob: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_decay: d.lr_decay,
            lr_decay_every: d.lr_decay_every,
            flip_prob: d.flip_prob,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            flip_prob: self.flip_prob,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub delta: f64,
    pub per_class_cap: Option<usize>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let d = SelectionConfig::default();
        SelectionSection {
            delta: d.delta,
            per_class_cap: d.per_class_cap,
        }
    }
}

impl SelectionSection {
    pub fn to_config(&self) -> SelectionConfig {
        SelectionConfig {
            delta: self.delta,
            per_class_cap: self.per_class_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSection {
    /// Number of distilled images; one per class when unset.
    pub n: Option<usize>,
    pub eta0: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub weight_draws: usize,
    pub inner_steps: usize,
    pub snapshot_every: Option<usize>,
    /// Learner the images are distilled for; the main architecture when
    /// unset.
    pub architecture: Option<ArchSection>,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::for_classes(1);
        DistillSection {
            n: None,
            eta0: d.eta0,
            alpha: d.alpha,
            batch_size: d.batch_size,
            iterations: d.iterations,
            weight_draws: d.weight_draws,
            inner_steps: d.inner_steps,
            snapshot_every: d.snapshot_every,
            architecture: None,
        }
    }
}

impl DistillSection {
    pub fn to_config(&self, num_classes: usize, seed: u64) -> DistillConfig {
        DistillConfig {
            n: self.n.unwrap_or(num_classes),
            eta0: self.eta0,
            alpha: self.alpha,
            batch_size: self.batch_size,
            iterations: self.iterations,
            weight_draws: self.weight_draws,
            inner_steps: self.inner_steps,
            snapshot_every: self.snapshot_every,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub architecture: ArchSection,
    pub train: TrainSection,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            architecture: ArchSection {
                hidden: vec![],
                ..ArchSection::default()
            },
            train: TrainSection {
                learning_rate: 0.01,
                batch_size: 8,
                flip_prob: 0.0,
                ..TrainSection::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub seeds: Vec<u64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> ConfigHash {
        hash_json(self)
    }

    /// Architecture used by the distillation stage.
    pub fn distill_architecture(&self) -> &ArchSection {
        self.distill.architecture.as_ref().unwrap_or(&self.architecture)
    }
}

/// SHA-256 of `value` as compact JSON with object keys sorted.
pub fn hash_json<T: Serialize>(value: &T) -> ConfigHash {
    // `serde_json::Value` keeps objects in a sorted map, which makes the
    // text canonical.
    let canonical = serde_json::to_value(value).expect("serialisable");
    Sha256::digest(canonical.to_string().as_bytes()).into()
}
