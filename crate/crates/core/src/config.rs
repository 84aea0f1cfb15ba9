//! Configuration file schema (TOML) with dotted-key overrides.
//!
//! Flags win over file values; the resolved snapshot is written into every
//! run directory before work starts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::age::AgeGroupPartition;
use crate::data::TargetAge;
use crate::error::{Error, Result};
use crate::loss::{AgeReduction, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    PfaEndToEnd,
    PfaIndependent,
    CganSingle,
}

impl Default for TrainMode {
    fn default() -> Self {
        TrainMode::PfaEndToEnd
    }
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::PfaEndToEnd => "pfa_end_to_end",
            TrainMode::PfaIndependent => "pfa_independent",
            TrainMode::CganSingle => "cgan_single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeNetMode {
    DexMultitask,
    ClassificationOnly,
}

impl Default for AgeNetMode {
    fn default() -> Self {
        AgeNetMode::DexMultitask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Aging,
    Rejuvenation,
}

impl Default for Direction {
    fn default() -> Self {
        Direction::Aging
    }
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Aging => "aging",
            Direction::Rejuvenation => "rejuvenation",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeGroupsSection {
    pub bounds: Vec<u32>,
}

impl Default for AgeGroupsSection {
    fn default() -> Self {
        AgeGroupsSection {
            bounds: vec![30, 40, 50],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub root: String,
    pub size: usize,
    pub seed: u64,
    pub flip_augment: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: "data".into(),
            size: 64,
            seed: 17,
            flip_augment: true,
        }
    }
}

/// `lambda_age` stays optional so the classification-only ablation can pick
/// its own default (8.0) when the user did not set one explicitly.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossSection {
    pub lambda_adv: Option<f64>,
    pub lambda_age: Option<f64>,
    pub lambda_ide: Option<f64>,
    pub alpha_ssim: Option<f64>,
    pub alpha_fea: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub max_iterations: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub mode: TrainMode,
    pub age_net: AgeNetMode,
    pub direction: Direction,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub d_steps_per_g: usize,
    pub target_age: TargetAge,
    pub age_reduction: AgeReduction,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            max_iterations: 200_000,
            batch_size: 12,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.99,
            mode: TrainMode::default(),
            age_net: AgeNetMode::default(),
            direction: Direction::default(),
            checkpoint_every: 500,
            seed: 17,
            d_steps_per_g: 1,
            target_age: TargetAge::default(),
            age_reduction: AgeReduction::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: 50,
            batch_size: 128,
            lr: 1e-4,
            lr_decay: 0.7,
            lr_decay_every: 15,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSection {
    pub seed: u64,
    /// Optional pretrained extractor checkpoint; empty means the seeded
    /// random stack.
    pub checkpoint: String,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            seed: 977,
            checkpoint: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub is_splits: usize,
    /// Cosine threshold; NaN-free sentinel: negative means "calibrate".
    pub identity_threshold: Option<f64>,
    pub identity_far: f64,
    pub embedder_seed: u64,
    pub max_eval_faces: usize,
    pub dump_grids: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            is_splits: 4,
            identity_threshold: None,
            identity_far: 1e-3,
            embedder_seed: 3141,
            max_eval_faces: 128,
            dump_grids: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub age_groups: AgeGroupsSection,
    pub data: DataSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub feature: FeatureSection,
    pub eval: EvalSection,
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn partition(&self) -> Result<AgeGroupPartition> {
        AgeGroupPartition::new(self.age_groups.bounds.clone())
    }

    /// Resolved loss weights; the age weight defaults to 8 under the
    /// classification-only ablation and to 0.4 otherwise.
    pub fn loss_weights(&self) -> Result<LossWeights> {
        let d = LossWeights::default();
        let lambda_age = self.loss.lambda_age.unwrap_or(match self.train.age_net {
            AgeNetMode::DexMultitask => d.lambda_age,
            AgeNetMode::ClassificationOnly => 8.0,
        });
        let w = LossWeights {
            lambda_adv: self.loss.lambda_adv.unwrap_or(d.lambda_adv),
            lambda_age,
            lambda_ide: self.loss.lambda_ide.unwrap_or(d.lambda_ide),
            alpha_ssim: self.loss.alpha_ssim.unwrap_or(d.alpha_ssim),
            alpha_fea: self.loss.alpha_fea.unwrap_or(d.alpha_fea),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.max_iterations == 0 {
            return Err(Error::Config("train.max_iterations must be positive".into()));
        }
        if self.train.batch_size == 0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.train.lr_g <= 0.0 || self.train.lr_d <= 0.0 || self.pretrain.lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.train.d_steps_per_g == 0 {
            return Err(Error::Config("train.d_steps_per_g must be positive".into()));
        }
        self.partition()?;
        self.loss_weights()?;
        Ok(())
    }

    /// Apply one `section.key=value` override (flags win over the file).
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("cannot parse override {k}={v}"));
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|_| bad(key, value))?
            };
        }
        match key {
            "age_groups.bounds" => {
                let bounds: std::result::Result<Vec<u32>, _> = value
                    .split(',')
                    .map(|s| s.trim().parse::<u32>())
                    .collect();
                self.age_groups.bounds = bounds.map_err(|_| bad(key, value))?;
            }
            "data.root" => self.data.root = value.to_string(),
            "data.size" => self.data.size = num!(usize),
            "data.seed" => self.data.seed = num!(u64),
            "data.flip_augment" => self.data.flip_augment = num!(bool),
            "loss.lambda_adv" => self.loss.lambda_adv = Some(num!(f64)),
            "loss.lambda_age" => self.loss.lambda_age = Some(num!(f64)),
            "loss.lambda_ide" => self.loss.lambda_ide = Some(num!(f64)),
            "loss.alpha_ssim" => self.loss.alpha_ssim = Some(num!(f64)),
            "loss.alpha_fea" => self.loss.alpha_fea = Some(num!(f64)),
            "train.max_iterations" => self.train.max_iterations = num!(u64),
            "train.batch_size" => self.train.batch_size = num!(usize),
            "train.lr_g" => self.train.lr_g = num!(f64),
            "train.lr_d" => self.train.lr_d = num!(f64),
            "train.adam_beta1" => self.train.adam_beta1 = num!(f64),
            "train.adam_beta2" => self.train.adam_beta2 = num!(f64),
            "train.checkpoint_every" => self.train.checkpoint_every = num!(u64),
            "train.seed" => self.train.seed = num!(u64),
            "train.d_steps_per_g" => self.train.d_steps_per_g = num!(usize),
            "train.mode" => {
                self.train.mode = match value {
                    "pfa_end_to_end" => TrainMode::PfaEndToEnd,
                    "pfa_independent" => TrainMode::PfaIndependent,
                    "cgan_single" => TrainMode::CganSingle,
                    _ => return Err(bad(key, value)),
                }
            }
            "train.age_net" => {
                self.train.age_net = match value {
                    "dex_multitask" => AgeNetMode::DexMultitask,
                    "classification_only" => AgeNetMode::ClassificationOnly,
                    _ => return Err(bad(key, value)),
                }
            }
            "train.direction" => {
                self.train.direction = match value {
                    "aging" => Direction::Aging,
                    "rejuvenation" => Direction::Rejuvenation,
                    _ => return Err(bad(key, value)),
                }
            }
            "train.target_age" => {
                self.train.target_age = match value {
                    "group_mean" => TargetAge::GroupMean,
                    "group_midpoint" => TargetAge::GroupMidpoint,
                    _ => return Err(bad(key, value)),
                }
            }
            "train.age_reduction" => {
                self.train.age_reduction = match value {
                    "mean_abs" => AgeReduction::MeanAbs,
                    "batch_l2" => AgeReduction::BatchL2,
                    _ => return Err(bad(key, value)),
                }
            }
            "pretrain.epochs" => self.pretrain.epochs = num!(usize),
            "pretrain.batch_size" => self.pretrain.batch_size = num!(usize),
            "pretrain.lr" => self.pretrain.lr = num!(f64),
            "pretrain.lr_decay" => self.pretrain.lr_decay = num!(f64),
            "pretrain.lr_decay_every" => self.pretrain.lr_decay_every = num!(usize),
            "pretrain.seed" => self.pretrain.seed = num!(u64),
            "feature.seed" => self.feature.seed = num!(u64),
            "feature.checkpoint" => self.feature.checkpoint = value.to_string(),
            "eval.is_splits" => self.eval.is_splits = num!(usize),
            "eval.identity_threshold" => self.eval.identity_threshold = Some(num!(f64)),
            "eval.identity_far" => self.eval.identity_far = num!(f64),
            "eval.embedder_seed" => self.eval.embedder_seed = num!(u64),
            "eval.max_eval_faces" => self.eval.max_eval_faces = num!(usize),
            "eval.dump_grids" => self.eval.dump_grids = num!(bool),
            _ => return Err(Error::Config(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    /// Flattened key-value view for the run manifest.
    pub fn flatten(&self) -> BTreeMap<String, String> {
        let toml_val = toml::Value::try_from(self).expect("config serializes");
        let mut out = BTreeMap::new();
        fn walk(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
            match v {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        let key = if prefix.is_empty() {
                            k.clone()
                        } else {
                            format!("{prefix}.{k}")
                        };
                        walk(&key, v, out);
                    }
                }
                other => {
                    out.insert(prefix.to_string(), other.to_string());
                }
            }
        }
        walk("", &toml_val, &mut out);
        out
    }
}
