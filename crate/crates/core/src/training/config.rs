use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::ModelConfig;
use crate::scm::NoiseKind;

/// Synthetic pretraining family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub d_min: usize,
    pub d_max: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub additive: bool,
    pub noise: NoiseKind,
    pub root_prob: f64,
    pub features: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            d_min: 4,
            d_max: 6,
            n_min: 128,
            n_max: 256,
            additive: true,
            noise: NoiseKind::Additive,
            root_prob: 0.0,
            features: crate::scm::DEFAULT_FEATURES,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_min == 0 || self.d_min > self.d_max {
            return Err(invalid("data: need 1 <= d_min <= d_max"));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            return Err(invalid("data: need 2 <= n_min <= n_max"));
        }
        if !(0.0..=1.0).contains(&self.root_prob) {
            return Err(invalid("data: root_prob outside [0, 1]"));
        }
        if self.features == 0 {
            return Err(invalid("data: features must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// Datasets per optimizer step.
    pub batch_size: usize,
    pub mask_rate: f64,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Loss-trace logging interval; every step is recorded in memory.
    pub eval_every: u64,
    /// Row subsample per step for tables larger than this.
    pub max_rows: Option<usize>,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            total_steps: 2000,
            batch_size: 2,
            mask_rate: 0.2,
            lr: 3e-3,
            warmup_ratio: 0.03,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 100,
            max_rows: None,
            data: DataConfig::default(),
        }
    }

    pub fn full() -> Self {
        Self {
            total_steps: 25_000,
            batch_size: 4,
            lr: 2e-4,
            data: DataConfig {
                d_min: 5,
                d_max: 10,
                n_min: 512,
                n_max: 1024,
                ..DataConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(invalid(format!("mask_rate {} outside (0, 1)", self.mask_rate)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(invalid("lr must be positive and weight_decay non-negative"));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(invalid("warmup_ratio outside [0, 1]"));
        }
        if self.max_rows.is_some_and(|m| m < 2) {
            return Err(invalid("max_rows must be at least 2"));
        }
        self.data.validate()
    }
}

/// The single JSON document accepted by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
