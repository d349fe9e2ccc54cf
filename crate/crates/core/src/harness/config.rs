//! Experiment configuration and its `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::model::Activation;
use crate::moco::{Augmentation, MocoConfig};
use crate::optim::{self, Schedule};
use crate::trust::TrustConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    AucMax,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::AucMax => "auc_max",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "auc_max" | "auc" => Ok(LossKind::AucMax),
            other => Err(Error::Config(format!("unknown loss {other:?} (ce | auc_max)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Scratch,
    Pretrained(PathBuf),
}

impl Init {
    pub fn label(&self) -> &'static str {
        match self {
            Init::Scratch => "scratch",
            Init::Pretrained(_) => "pretrained",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, label_column: String },
}

/// Everything a run needs. Defaults follow the published recipes: AUC
/// path lr 0.1 decayed 10x at epoch 15, CE path lr 1e-3 cosine with
/// momentum 0.9 and weight decay 1e-4, 30 epochs, 5 folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub init: Init,
    pub data: DataSource,
    pub seed: u64,
    #[serde(skip)]
    pub output_dir: PathBuf,

    pub hidden: Vec<usize>,
    pub activation: Activation,

    pub epochs: usize,
    pub batch_size: usize,
    pub folds: usize,
    /// Fraction of each fold's training split that keeps its labels.
    pub label_fraction: f64,
    pub test_pos: usize,
    pub test_neg: usize,

    pub auc_lr: f64,
    pub auc_milestones: Vec<usize>,
    pub auc_decay: f64,
    /// Defaults to `auc_lr`; scaled by the same schedule.
    pub dual_lr: Option<f64>,
    pub auc_weight_decay: f64,
    pub margin: f64,
    pub gamma: f64,

    pub ce_lr: f64,
    pub ce_momentum: f64,
    pub ce_weight_decay: f64,

    pub trust_reward: f64,
    pub trust_penalty: f64,

    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_momentum: f64,
    pub pretrain_weight_decay: f64,
    pub moco: MocoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::AucMax,
            init: Init::Scratch,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            seed: 0,
            output_dir: PathBuf::from("out"),
            hidden: vec![16],
            activation: Activation::Relu,
            epochs: optim::EPOCHS,
            batch_size: 32,
            folds: 5,
            label_fraction: 1.0,
            test_pos: 100,
            test_neg: 100,
            auc_lr: optim::AUC_LR,
            auc_milestones: vec![optim::AUC_DECAY_EPOCH],
            auc_decay: optim::AUC_DECAY_FACTOR,
            dual_lr: None,
            auc_weight_decay: optim::CE_WEIGHT_DECAY,
            margin: crate::losses::DEFAULT_MARGIN,
            gamma: 0.0,
            ce_lr: optim::CE_LR,
            ce_momentum: optim::CE_MOMENTUM,
            ce_weight_decay: optim::CE_WEIGHT_DECAY,
            trust_reward: 1.0,
            trust_penalty: 1.0,
            pretrain_steps: 200,
            pretrain_lr: 0.05,
            pretrain_momentum: 0.9,
            // The encoder has no normalization layers; without this its hidden
            // activations grow during pretraining and saturate a fresh head.
            pretrain_weight_decay: 1e-2,
            moco: MocoConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() || value == "none" {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl ExperimentConfig {
    /// Every key accepted by [`ExperimentConfig::set`].
    pub const KEYS: &'static [&'static str] = &[
        "loss", "init", "checkpoint", "seed", "output_dir", "data", "csv_path", "label_column",
        "dim", "n_neg", "n_pos", "scale", "separation", "noise_std", "data_seed", "hidden",
        "activation", "epochs", "batch_size", "folds", "label_fraction", "test_pos", "test_neg",
        "auc_lr", "auc_milestones", "auc_decay", "dual_lr", "auc_weight_decay", "margin", "gamma",
        "ce_lr", "ce_momentum", "ce_weight_decay", "trust_reward", "trust_penalty",
        "pretrain_steps", "pretrain_lr", "pretrain_momentum", "pretrain_weight_decay",
        "pretrain_batch", "embed_dim", "queue_size", "key_momentum", "temperature",
        "augmentation", "aug_noise_std", "aug_mask_prob", "aug_flip_prob",
    ];

    fn synthetic_mut(&mut self, key: &str) -> Result<&mut SyntheticSpec> {
        match &mut self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Csv { .. } => Err(Error::Config(format!(
                "{key} only applies to synthetic data"
            ))),
        }
    }

    /// Applies one `key = value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "loss" => self.loss = value.parse()?,
            "init" => {
                self.init = match value {
                    "scratch" => Init::Scratch,
                    "pretrained" => match &self.init {
                        Init::Pretrained(p) => Init::Pretrained(p.clone()),
                        Init::Scratch => Init::Pretrained(PathBuf::new()),
                    },
                    other => {
                        return Err(Error::Config(format!(
                            "unknown init {other:?} (scratch | pretrained)"
                        )))
                    }
                }
            }
            "checkpoint" => self.init = Init::Pretrained(PathBuf::from(value)),
            "seed" => {
                let seed = parse(key, value)?;
                if let DataSource::Synthetic(s) = &mut self.data {
                    if s.seed == self.seed {
                        s.seed = seed;
                    }
                }
                self.seed = seed;
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "data" => {
                self.data = match (value, &self.data) {
                    ("synthetic", DataSource::Synthetic(_)) | ("csv", DataSource::Csv { .. }) => {
                        return Ok(())
                    }
                    ("synthetic", _) => DataSource::Synthetic(SyntheticSpec {
                        seed: self.seed,
                        ..SyntheticSpec::default()
                    }),
                    ("csv", _) => DataSource::Csv {
                        path: PathBuf::new(),
                        label_column: "label".into(),
                    },
                    (other, _) => {
                        return Err(Error::Config(format!("unknown data source {other:?}")))
                    }
                }
            }
            "csv_path" | "label_column" => {
                if let DataSource::Synthetic(_) = self.data {
                    self.data = DataSource::Csv {
                        path: PathBuf::new(),
                        label_column: "label".into(),
                    };
                }
                if let DataSource::Csv { path, label_column } = &mut self.data {
                    if key == "csv_path" {
                        *path = PathBuf::from(value);
                    } else {
                        *label_column = value.to_string();
                    }
                }
            }
            "dim" => self.synthetic_mut(key)?.dim = parse(key, value)?,
            "n_neg" => self.synthetic_mut(key)?.n_neg = parse(key, value)?,
            "n_pos" => self.synthetic_mut(key)?.n_pos = parse(key, value)?,
            "scale" => {
                let scale: f64 = parse(key, value)?;
                let s = self.synthetic_mut(key)?;
                let scaled = SyntheticSpec::scaled(scale);
                s.n_neg = scaled.n_neg;
                s.n_pos = scaled.n_pos;
            }
            "separation" => self.synthetic_mut(key)?.mean_separation = parse(key, value)?,
            "noise_std" => self.synthetic_mut(key)?.noise_std = parse(key, value)?,
            "data_seed" => self.synthetic_mut(key)?.seed = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "activation" => self.activation = value.parse()?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "label_fraction" => self.label_fraction = parse(key, value)?,
            "test_pos" => self.test_pos = parse(key, value)?,
            "test_neg" => self.test_neg = parse(key, value)?,
            "auc_lr" => self.auc_lr = parse(key, value)?,
            "auc_milestones" => self.auc_milestones = parse_list(key, value)?,
            "auc_decay" => self.auc_decay = parse(key, value)?,
            "dual_lr" => self.dual_lr = Some(parse(key, value)?),
            "auc_weight_decay" => self.auc_weight_decay = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "ce_lr" => self.ce_lr = parse(key, value)?,
            "ce_momentum" => self.ce_momentum = parse(key, value)?,
            "ce_weight_decay" => self.ce_weight_decay = parse(key, value)?,
            "trust_reward" => self.trust_reward = parse(key, value)?,
            "trust_penalty" => self.trust_penalty = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, value)?,
            "pretrain_momentum" => self.pretrain_momentum = parse(key, value)?,
            "pretrain_weight_decay" => self.pretrain_weight_decay = parse(key, value)?,
            "pretrain_batch" => self.moco.batch_size = parse(key, value)?,
            "embed_dim" => self.moco.embed_dim = parse(key, value)?,
            "queue_size" => self.moco.queue_size = parse(key, value)?,
            "key_momentum" => self.moco.momentum = parse(key, value)?,
            "temperature" => self.moco.temperature = parse(key, value)?,
            "augmentation" => {
                self.moco.augmentation = match value {
                    "vector_noise_mask" => Augmentation::default(),
                    "horizontal_flip" => Augmentation::horizontal_flip(),
                    other => {
                        return Err(Error::Config(format!("unknown augmentation {other:?}")))
                    }
                }
            }
            "aug_noise_std" | "aug_mask_prob" => {
                let v: f64 = parse(key, value)?;
                match &mut self.moco.augmentation {
                    Augmentation::VectorNoiseMask {
                        noise_std,
                        mask_prob,
                    } => {
                        if key == "aug_noise_std" {
                            *noise_std = v
                        } else {
                            *mask_prob = v
                        }
                    }
                    _ => return Err(Error::Config(format!("{key} needs vector_noise_mask augmentation"))),
                }
            }
            "aug_flip_prob" => match &mut self.moco.augmentation {
                Augmentation::HorizontalFlip { prob } => *prob = parse(key, value)?,
                _ => return Err(Error::Config(format!("{key} needs horizontal_flip augmentation"))),
            },
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies the lines of a config file: `key = value`, `#` comments,
    /// blank lines ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.folds < 2 {
            return bad(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        if self.test_pos < 1 || self.test_neg < 1 {
            return bad("test split needs at least one sample per class".into());
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        self.auc_schedule()?;
        self.ce_schedule()?;
        self.trust_config(0.5).validate()?;
        self.moco.validate()?;
        if let Init::Pretrained(p) = &self.init {
            if p.as_os_str().is_empty() {
                return bad("init = pretrained needs a checkpoint path".into());
            }
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Csv { path, .. } if path.as_os_str().is_empty() => {
                return bad("csv data source needs csv_path".into())
            }
            DataSource::Csv { .. } => {}
        }
        Ok(())
    }

    pub fn auc_schedule(&self) -> Result<Schedule> {
        Schedule::step_decay(self.auc_lr, self.auc_milestones.clone(), self.auc_decay)
    }

    pub fn ce_schedule(&self) -> Result<Schedule> {
        Schedule::cosine(self.ce_lr, self.epochs)
    }

    pub fn trust_config(&self, threshold: f64) -> TrustConfig {
        TrustConfig {
            reward_exponent: self.trust_reward,
            penalty_exponent: self.trust_penalty,
            threshold,
        }
    }

    /// Scorer widths for inputs of dimension `input_dim`.
    pub fn scorer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }

    /// Encoder widths: same body as the scorer, projection of `embed_dim`.
    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.moco.embed_dim);
        dims
    }
}
