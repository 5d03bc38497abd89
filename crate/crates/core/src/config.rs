//! Experiment configuration: strict JSON schema with explicit defaults.
//!
//! Defaults: learning rate 0.001, momentum 0.5, batch size 32, one local
//! epoch per round, hidden layers 512/256/128, 100 rounds, one replicate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Error, Result};
use crate::graph::Topology;
use crate::protocol::AggregationSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusParams {
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_g1")]
    pub g1_classes: Vec<usize>,
    #[serde(default = "default_g2")]
    pub g2_classes: Vec<usize>,
    /// Samples per node per assigned class; `null` takes the largest equal
    /// share the dataset allows.
    #[serde(default)]
    pub per_node_per_class: Option<usize>,
}

impl Default for FocusParams {
    fn default() -> Self {
        FocusParams {
            fraction: default_fraction(),
            g1_classes: default_g1(),
            g2_classes: default_g2(),
            per_node_per_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityParams {
    #[serde(default = "default_classes_per_block")]
    pub classes_per_block: Vec<Vec<usize>>,
    #[serde(default)]
    pub per_node_per_class: Option<usize>,
}

impl Default for CommunityParams {
    fn default() -> Self {
        CommunityParams {
            classes_per_block: default_classes_per_block(),
            per_node_per_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionConfig {
    HubFocused(FocusParams),
    EdgeFocused(FocusParams),
    Community(CommunityParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    /// Training samples per class.
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            classes: default_classes(),
            dims: default_dims(),
            per_class: default_per_class(),
            test_per_class: default_test_per_class(),
            spread: default_spread(),
            seed: 0,
        }
    }
}

/// MNIST files are read from the directory named by `DECAVG_DATA_DIR`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistParams {
    /// Keep only the first N training images of each class.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub test_per_class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic(SyntheticParams),
    Mnist(MnistParams),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic(SyntheticParams::default())
    }
}

impl DatasetConfig {
    pub fn class_count(&self) -> usize {
        match self {
            DatasetConfig::Synthetic(s) => s.classes,
            DatasetConfig::Mnist(_) => 10,
        }
    }
}

/// How initial models are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Every node starts from the same model, drawn from node 0's init stream.
    #[default]
    Shared,
    /// Each node draws its own model from its own init stream.
    PerNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub init: InitMode,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden_layers: default_hidden(),
            lr: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            init: InitMode::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub aggregation: AggregationSpec,
    /// Communication rounds after round-0 pretraining.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Replicate `r` runs with seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Write confusion counts every N rounds (the final round is always
    /// written); 0 writes only the final round.
    #[serde(default = "default_confusion_every")]
    pub confusion_every: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_fraction() -> f64 {
    0.1
}
fn default_g1() -> Vec<usize> {
    vec![0, 1, 2, 3, 4]
}
fn default_g2() -> Vec<usize> {
    vec![5, 6, 7, 8, 9]
}
fn default_classes_per_block() -> Vec<Vec<usize>> {
    vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]
}
fn default_classes() -> usize {
    10
}
fn default_dims() -> usize {
    20
}
fn default_per_class() -> usize {
    600
}
fn default_test_per_class() -> usize {
    100
}
fn default_spread() -> f64 {
    0.2
}
fn default_hidden() -> Vec<usize> {
    vec![512, 256, 128]
}
fn default_lr() -> f64 {
    0.001
}
fn default_momentum() -> f64 {
    0.5
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    1
}
fn default_rounds() -> usize {
    100
}
fn default_replicates() -> usize {
    1
}
fn default_confusion_every() -> usize {
    10
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn check_class_list(name: &str, classes: &[usize], count: usize) -> Result<()> {
    if let Some(c) = classes.iter().find(|&&c| c >= count) {
        return Err(config_err!("{name}: class {c} must be < {count}"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        let classes = self.dataset.class_count();
        match &self.dataset {
            DatasetConfig::Synthetic(s) => {
                if s.classes < 2 {
                    return Err(config_err!("dataset.classes must be >= 2"));
                }
                if s.dims == 0 || s.per_class == 0 || s.test_per_class == 0 {
                    return Err(config_err!(
                        "dataset.dims, dataset.per_class and dataset.test_per_class must be >= 1"
                    ));
                }
                if !(s.spread >= 0.0) || !s.spread.is_finite() {
                    return Err(config_err!("dataset.spread must be finite and >= 0"));
                }
            }
            DatasetConfig::Mnist(m) => {
                if m.train_per_class == Some(0) || m.test_per_class == Some(0) {
                    return Err(config_err!("dataset per-class limits must be >= 1"));
                }
            }
        }
        match &self.partition {
            PartitionConfig::HubFocused(f) | PartitionConfig::EdgeFocused(f) => {
                if !(f.fraction > 0.0 && f.fraction <= 1.0) {
                    return Err(config_err!("partition.fraction must be in (0,1]"));
                }
                check_class_list("partition.g1_classes", &f.g1_classes, classes)?;
                check_class_list("partition.g2_classes", &f.g2_classes, classes)?;
                if let Some(c) = f.g1_classes.iter().find(|c| f.g2_classes.contains(c)) {
                    return Err(config_err!("partition: class {c} is in both g1 and g2"));
                }
                if f.per_node_per_class == Some(0) {
                    return Err(config_err!("partition.per_node_per_class must be >= 1"));
                }
            }
            PartitionConfig::Community(c) => {
                let Topology::Sbm { block_sizes, .. } = &self.topology else {
                    return Err(config_err!("partition.scheme community needs an sbm topology"));
                };
                if c.classes_per_block.len() != block_sizes.len() {
                    return Err(config_err!(
                        "partition.classes_per_block has {} entries for {} blocks",
                        c.classes_per_block.len(),
                        block_sizes.len()
                    ));
                }
                let mut seen = vec![false; classes];
                for list in &c.classes_per_block {
                    check_class_list("partition.classes_per_block", list, classes)?;
                    for &x in list {
                        if std::mem::replace(&mut seen[x], true) {
                            return Err(config_err!(
                                "partition.classes_per_block: class {x} assigned twice"
                            ));
                        }
                    }
                }
                if c.per_node_per_class == Some(0) {
                    return Err(config_err!("partition.per_node_per_class must be >= 1"));
                }
            }
        }
        let l = &self.learner;
        if l.hidden_layers.contains(&0) {
            return Err(config_err!("learner.hidden_layers entries must be >= 1"));
        }
        if !(l.lr > 0.0) || !l.lr.is_finite() {
            return Err(config_err!("learner.lr must be > 0"));
        }
        if !(0.0..1.0).contains(&l.momentum) {
            return Err(config_err!("learner.momentum must be in [0,1)"));
        }
        if l.batch_size == 0 {
            return Err(config_err!("learner.batch_size must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(config_err!("replicates must be >= 1"));
        }
        Ok(())
    }

    /// Canonical serialization: fixed field order, every default explicit.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical form, ignoring the replicate count and the
    /// output location, which do not change any replicate's results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.replicates = 1;
        c.output = PathBuf::new();
        let digest = Sha256::digest(c.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Layer sizes including input and output layers.
    pub fn layer_sizes(&self, input_dims: usize) -> Vec<usize> {
        let mut sizes = vec![input_dims];
        sizes.extend_from_slice(&self.learner.hidden_layers);
        sizes.push(self.dataset.class_count());
        sizes
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_json(&text)
}
