//! Model and training configuration, including the four ablation switches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Four stride-2 stages widening to 256 channels before the projection;
    /// 320 channels at 1/16 resolution with the default sizes.
    #[serde(alias = "paper-backbone")]
    PaperBackbone,
    /// Narrow from-scratch encoder with the same output geometry.
    Tiny,
}

/// Which feature map supplies the attention queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOrientation {
    /// Queries from the current frame, keys/values from the fused previous frames.
    CurrentQueriesPrevious,
    /// Queries from the fused previous frames, keys/values from the current frame.
    PreviousQueriesCurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    pub feature_channels: usize,
    pub feature_grid: (usize, usize),
    pub n_prev_pool: usize,
    /// Number of previous frames fused per prediction. Zero runs the model
    /// image-only (the fused previous-frame map is identically zero).
    pub n_prev_pick: usize,
    pub attention_heads: usize,
    pub attention_depth: usize,
    pub attention_orientation: AttentionOrientation,
    pub use_tpe: bool,
    pub use_man: bool,
    pub use_dcn: bool,
    pub use_contour_loss: bool,
    /// Contour-loss coefficient, applied to diagonal-normalized distances.
    pub beta: f64,
    /// Contour sample count for the sampled distance.
    pub n_c: usize,
    pub encoder: EncoderKind,
    pub dcn_kernel: usize,
    pub gate_embed_dim: usize,
    pub spatial_kernel: usize,
    pub decoder_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (224, 224),
            feature_channels: 320,
            feature_grid: (14, 14),
            n_prev_pool: 4,
            n_prev_pick: 2,
            attention_heads: 4,
            attention_depth: 1,
            attention_orientation: AttentionOrientation::CurrentQueriesPrevious,
            use_tpe: true,
            use_man: true,
            use_dcn: true,
            use_contour_loss: true,
            beta: 1.0,
            n_c: 128,
            encoder: EncoderKind::PaperBackbone,
            dcn_kernel: 3,
            gate_embed_dim: 32,
            spatial_kernel: 7,
            decoder_channels: 64,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: 56x56 input, 16 channels on a 14x14 grid.
    pub fn tiny() -> Self {
        Self {
            input_size: (56, 56),
            feature_channels: 16,
            feature_grid: (14, 14),
            attention_heads: 2,
            encoder: EncoderKind::Tiny,
            gate_embed_dim: 16,
            spatial_kernel: 3,
            decoder_channels: 16,
            ..Self::default()
        }
    }

    /// Encoder downsampling factor (power of two).
    pub fn stride(&self) -> usize {
        self.input_size.0 / self.feature_grid.0
    }

    pub fn image_only(&self) -> bool {
        self.n_prev_pick == 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let (h, w) = self.input_size;
        let (gh, gw) = self.feature_grid;
        if h == 0 || w == 0 || gh == 0 || gw == 0 {
            return bad("input_size and feature_grid must be positive".into());
        }
        if h % gh != 0 || w % gw != 0 || h / gh != w / gw {
            return bad(format!(
                "input_size {:?} is not an isotropic multiple of feature_grid {:?}",
                self.input_size, self.feature_grid
            ));
        }
        if !self.stride().is_power_of_two() {
            return bad(format!("encoder stride {} is not a power of two", self.stride()));
        }
        if self.feature_channels == 0
            || self.attention_heads == 0
            || self.attention_depth == 0
            || self.n_prev_pool == 0
            || self.n_c == 0
            || self.gate_embed_dim == 0
            || self.decoder_channels == 0
        {
            return bad("all counts must be positive".into());
        }
        if self.n_prev_pick > self.n_prev_pool {
            return bad(format!(
                "n_prev_pick {} exceeds n_prev_pool {}",
                self.n_prev_pick, self.n_prev_pool
            ));
        }
        if self.feature_channels % self.attention_heads != 0 {
            return bad(format!(
                "{} attention heads do not divide {} channels",
                self.attention_heads, self.feature_channels
            ));
        }
        if self.gate_embed_dim % 2 != 0 {
            return bad("gate_embed_dim must be even".into());
        }
        if self.dcn_kernel % 2 == 0 || self.spatial_kernel % 2 == 0 {
            return bad("kernel sizes must be odd".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `gamma` every `every` iterations.
    Step { every: usize, gamma_permille: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 1e-4,
            batch_size: 4,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step {
                every,
                gamma_permille,
            } => {
                let drops = if every == 0 { 0 } else { iteration / every };
                self.learning_rate * (gamma_permille as f64 / 1000.0).powi(drops as i32)
            }
        }
    }
}

/// The JSON config file consumed by `train` and `ablate`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}
