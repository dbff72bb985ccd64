use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cam::{CamConfig, Similarity};
use crate::dataio::{JitterConfig, DEFAULT_FOV_HALF_ANGLE_DEG, DEFAULT_HEIGHT_BOUNDS};
use crate::diff::nn::Activation;
use crate::error::{Error, Result};
use crate::lcm::LcmConfig;
use crate::pointops::BackboneConfig;

/// Network sizes and neighborhood settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Points kept per frame (N).
    pub n_points: usize,
    /// Synthetic points added per frame (M).
    pub m_complete: usize,
    /// Coarse-scale samples per cloud (W).
    pub w_coarse: usize,
    /// Clip-window length (L).
    pub window: usize,
    /// Feature width (C).
    pub channels: usize,
    pub backbone_radii: [f64; 2],
    pub backbone_k: usize,
    pub lcm_radius: f64,
    pub lcm_k: usize,
    pub k_fine: usize,
    pub k_coarse: usize,
    pub bi_blocks: usize,
    pub dense_ssm: bool,
    pub coord_scale: f64,
    pub activation: Activation,
    pub similarity: Similarity,
    pub max_range: f64,
    pub fov_half_angle_deg: f64,
    pub height_min: f64,
    pub height_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_points: 256,
            m_complete: 64,
            w_coarse: 64,
            window: 5,
            channels: 64,
            backbone_radii: [2.0, 4.0],
            backbone_k: 16,
            lcm_radius: 3.0,
            lcm_k: 8,
            k_fine: 8,
            k_coarse: 8,
            bi_blocks: 2,
            dense_ssm: false,
            coord_scale: 0.1,
            activation: Activation::Relu,
            similarity: Similarity::Channel,
            max_range: 50.0,
            fov_half_angle_deg: DEFAULT_FOV_HALF_ANGLE_DEG,
            height_min: DEFAULT_HEIGHT_BOUNDS.0,
            height_max: DEFAULT_HEIGHT_BOUNDS.1,
        }
    }
}

impl ModelConfig {
    /// Small sizes for gradient checks and quick tests.
    pub fn scaled() -> Self {
        ModelConfig {
            n_points: 32,
            m_complete: 8,
            w_coarse: 8,
            channels: 16,
            backbone_k: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_points == 0 || self.channels == 0 || self.window == 0 || self.bi_blocks == 0 {
            return bad("n_points, channels, window and bi_blocks must be positive");
        }
        if self.m_complete > self.n_points {
            return bad("m_complete must not exceed n_points");
        }
        if self.w_coarse == 0 || self.w_coarse > self.n_points + self.m_complete {
            return bad("w_coarse must lie in 1..=n_points + m_complete");
        }
        if self.k_fine > self.n_points + self.m_complete || self.k_coarse > self.w_coarse {
            return bad("matching k exceeds the target cloud size");
        }
        if !(self.coord_scale > 0.0) {
            return bad("coord_scale must be positive");
        }
        Ok(())
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            n_points: self.n_points,
            channels: self.channels,
            radii: self.backbone_radii,
            k: self.backbone_k,
            max_range: self.max_range,
            activation: self.activation,
        }
    }

    pub fn lcm(&self) -> LcmConfig {
        LcmConfig {
            m: self.m_complete,
            radius: self.lcm_radius,
            k: self.lcm_k,
            channels: self.channels,
            activation: self.activation,
        }
    }

    pub fn cam(&self) -> CamConfig {
        CamConfig {
            channels: self.channels,
            k_fine: self.k_fine,
            k_coarse: self.k_coarse,
            w: self.w_coarse,
            coord_scale: self.coord_scale,
            similarity: self.similarity,
            activation: self.activation,
            dense_ssm: self.dense_ssm,
        }
    }

    pub fn height_bounds(&self) -> (f64, f64) {
        (self.height_min, self.height_max)
    }
}

/// Optimization settings; defaults follow the published training recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    /// Clip windows accumulated per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub w_q_init: f64,
    pub w_t_init: f64,
    pub augment_flip: bool,
    pub augment_jitter: bool,
    pub jitter: JitterConfig,
    /// Visit clip windows in random order instead of sequence order.
    pub shuffle_windows: bool,
    /// Global gradient-norm clip; off when absent.
    pub grad_clip: Option<f64>,
    /// Stop after the first epoch that ends past this many seconds.
    pub time_budget_s: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-3,
            lr_decay: 0.9,
            batch_size: 1,
            seed: 0,
            w_q_init: -2.5,
            w_t_init: 0.0,
            augment_flip: true,
            augment_jitter: true,
            jitter: JitterConfig::default(),
            shuffle_windows: true,
            grad_clip: None,
            time_budget_s: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate used during epoch `e` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        self.model.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: TrainConfig = crate::error::read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
