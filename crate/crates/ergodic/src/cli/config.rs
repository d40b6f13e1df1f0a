//! The declarative experiment configuration: one TOML file describes a full
//! generate/train/evaluate pipeline.

use crate::dynsys::{SystemKind, SystemSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Rmse,
    SinkhornRmse,
    FeatureRmse,
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObjectiveKind::Rmse => write!(f, "rmse"),
            ObjectiveKind::SinkhornRmse => write!(f, "sinkhorn_rmse"),
            ObjectiveKind::FeatureRmse => write!(f, "feature_rmse"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSection {
    pub kind: SystemKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_domain_length")]
    pub domain_length: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_spinup")]
    pub spinup_steps: usize,
}

fn default_substeps() -> usize {
    5
}

fn default_dim() -> usize {
    40
}
fn default_domain_length() -> f64 {
    50.0
}
fn default_dt() -> f64 {
    0.1
}
fn default_spinup() -> usize {
    50
}

impl SystemSection {
    pub fn spec(&self) -> SystemSpec {
        SystemSpec {
            kind: self.kind,
            dim: self.dim,
            domain_length: self.domain_length,
            dt: self.dt,
            substeps: self.substeps,
            spinup_steps: self.spinup_steps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentsSection {
    #[serde(default = "default_env_count")]
    pub count: usize,
    pub range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

fn default_env_count() -> usize {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSection {
    #[serde(default)]
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default = "default_t_len")]
    pub t_len: usize,
}

fn default_t_len() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub modes: usize,
}

fn default_width() -> usize {
    64
}
fn default_blocks() -> usize {
    4
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width: default_width(),
            blocks: default_blocks(),
            modes: 0,
        }
    }
}

impl ModelSection {
    /// Retained modes default to 16 on Lorenz-96 and 32 on KS.
    pub fn modes_for(&self, kind: SystemKind) -> usize {
        if self.modes > 0 {
            self.modes
        } else {
            match kind {
                SystemKind::Lorenz96 => 16,
                SystemKind::KuramotoSivashinsky => 32,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    pub objective: ObjectiveKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_batches_per_epoch")]
    pub batches_per_epoch: usize,
    /// Window length K for the structural losses; the window spans K+1 frames.
    #[serde(default = "default_window_k")]
    pub window_k: usize,
    #[serde(default = "default_h")]
    pub h: usize,
    #[serde(default = "default_h")]
    pub h_rmse: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_seed_one")]
    pub seed: u64,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_val_windows")]
    pub val_windows: usize,
}

fn default_epochs() -> usize {
    500
}
fn default_batch() -> usize {
    6
}
fn default_batches_per_epoch() -> usize {
    1
}
fn default_window_k() -> usize {
    19
}
fn default_h() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    1e-5
}
fn default_seed_one() -> u64 {
    1
}
fn default_eval_interval() -> usize {
    25
}
fn default_val_windows() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_subsample_cap")]
    pub subsample_cap: usize,
    /// Standardize statistic channels by training-set moments before the
    /// transport cost.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_alpha() -> f64 {
    0.01
}
fn default_gamma() -> f64 {
    0.02
}
fn default_lambda() -> f64 {
    0.8
}
fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_subsample_cap() -> usize {
    2048
}
fn default_true() -> bool {
    true
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            alpha: default_alpha(),
            gamma: default_gamma(),
            lambda: default_lambda(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            subsample_cap: default_subsample_cap(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderSection {
    pub path: PathBuf,
    #[serde(default = "default_encoder_epochs")]
    pub epochs: usize,
    #[serde(default = "default_encoder_batch")]
    pub batch: usize,
    /// 0 selects the 5%-of-T default.
    #[serde(default)]
    pub crop_k: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_encoder_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_seed_one")]
    pub seed: u64,
}

fn default_encoder_epochs() -> usize {
    500
}
fn default_encoder_batch() -> usize {
    8
}
fn default_embed_dim() -> usize {
    32
}
fn default_channels() -> Vec<usize> {
    vec![8, 16, 32]
}
fn default_encoder_eval_interval() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationSection {
    #[serde(default)]
    pub horizon: usize,
    #[serde(default = "default_h")]
    pub rmse_horizon: usize,
    #[serde(default = "default_rmse_windows")]
    pub rmse_windows: usize,
}

fn default_rmse_windows() -> usize {
    16
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            horizon: 0,
            rmse_horizon: 1,
            rmse_windows: default_rmse_windows(),
        }
    }
}

impl EvaluationSection {
    /// Long-rollout default: 1500 steps on Lorenz-96, 1000 on KS.
    pub fn horizon_for(&self, kind: SystemKind) -> usize {
        if self.horizon > 0 {
            self.horizon
        } else {
            match kind {
                SystemKind::Lorenz96 => 1500,
                SystemKind::KuramotoSivashinsky => 1000,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub environments: EnvironmentsSection,
    #[serde(default = "default_noise")]
    pub noise: NoiseSection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub loss: LossSection,
    pub encoder: Option<EncoderSection>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    pub output: OutputSection,
}

fn default_noise() -> NoiseSection {
    NoiseSection { r: 0.0 }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.spec().validate()?;
        let [lo, hi] = self.environments.range;
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "environment range must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if self.noise.r < 0.0 {
            return Err(Error::Config(format!(
                "noise scale must be >= 0, got {}",
                self.noise.r
            )));
        }
        if self.dataset.t_len < 1 {
            return Err(Error::Config("trajectory length must be at least 1".into()));
        }
        let plan = crate::emulator::RolloutPlan {
            k: self.training.window_k,
            h: self.training.h,
            h_rmse: self.training.h_rmse,
        };
        plan.validate()?;
        if self.training.objective == ObjectiveKind::FeatureRmse && self.encoder.is_none() {
            return Err(Error::Config(
                "the feature objective needs an [encoder] section with a checkpoint path".into(),
            ));
        }
        if self.loss.alpha < 0.0 || self.loss.lambda < 0.0 || self.loss.gamma <= 0.0 {
            return Err(Error::Config(
                "loss weights must be >= 0 and gamma must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
