use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Linear annealing endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
}

impl Schedule {
    pub fn at(&self, fraction: f64) -> f64 {
        self.start + (self.end - self.start) * fraction
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub h: usize,
    pub heads: usize,
    pub blocks_ord: usize,
    pub blocks_pred: usize,
    pub ff_multiplier: usize,
    pub dropout: f64,
    pub tau_schedule: Schedule,
    pub beta_schedule: Schedule,
}

pub const TAU_SCHEDULE: Schedule = Schedule { start: 1.0, end: 0.1 };
pub const BETA_SCHEDULE: Schedule = Schedule { start: -5.0, end: -20.0 };

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small network that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            h: 32,
            heads: 4,
            blocks_ord: 2,
            blocks_pred: 2,
            ff_multiplier: 2,
            dropout: 0.0,
            tau_schedule: TAU_SCHEDULE,
            beta_schedule: BETA_SCHEDULE,
        }
    }

    /// Full-size network.
    pub fn full() -> Self {
        Self {
            h: 128,
            heads: 4,
            blocks_ord: 6,
            blocks_pred: 4,
            ff_multiplier: 2,
            dropout: 0.1,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.heads == 0 || self.h % self.heads != 0 {
            return Err(invalid(format!("h = {} must be a positive multiple of heads = {}", self.h, self.heads)));
        }
        if self.ff_multiplier == 0 {
            return Err(invalid("ff_multiplier must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let t = self.tau_schedule;
        if !(t.start > 0.0 && t.end > 0.0 && t.start.is_finite() && t.end.is_finite()) {
            return Err(invalid("tau schedule endpoints must be positive"));
        }
        let b = self.beta_schedule;
        if !(b.start < 0.0 && b.end < 0.0 && b.start.is_finite() && b.end.is_finite()) {
            return Err(invalid("beta schedule endpoints must be negative"));
        }
        Ok(())
    }
}
