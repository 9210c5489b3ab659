use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    WarmupCyclicCosine,
}

/// Epoch-level learning rate.
///
/// After a linear warmup of `warmup_epochs`, each period of `period` epochs
/// starts at `base_lr + delta` and follows half a cosine down toward
/// `base_lr`, then restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default = "one")]
    pub period: usize,
    #[serde(default)]
    pub delta: f64,
    pub total_epochs: usize,
}

fn one() -> usize {
    1
}

impl LrSchedule {
    pub fn fixed(base_lr: f64, total_epochs: usize) -> Self {
        Self { kind: ScheduleKind::Fixed, base_lr, warmup_epochs: 0, period: 1, delta: 0.0, total_epochs }
    }

    pub fn cyclic(base_lr: f64, warmup_epochs: usize, period: usize, delta: f64, total_epochs: usize) -> Self {
        Self { kind: ScheduleKind::WarmupCyclicCosine, base_lr, warmup_epochs, period, delta, total_epochs }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) || !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::config("learning rates must be finite and non-negative"));
        }
        if self.total_epochs == 0 || self.period == 0 {
            return Err(Error::config("total_epochs and period must be positive"));
        }
        match self.kind {
            ScheduleKind::Fixed if self.warmup_epochs != 0 || self.delta != 0.0 => {
                Err(Error::config("a fixed schedule has no warmup and no delta"))
            }
            ScheduleKind::WarmupCyclicCosine if self.warmup_epochs >= self.total_epochs => {
                Err(Error::config("warmup must end before the last epoch"))
            }
            _ => Ok(()),
        }
    }

    /// Same schedule over a different number of epochs.
    pub fn with_total_epochs(&self, total: usize) -> Self {
        Self { total_epochs: total, ..*self }
    }
}

pub fn lr_at(s: &LrSchedule, epoch: usize) -> Result<f64> {
    if epoch >= s.total_epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside a {}-epoch schedule", s.total_epochs)));
    }
    Ok(match s.kind {
        ScheduleKind::Fixed => s.base_lr,
        ScheduleKind::WarmupCyclicCosine => {
            let w = s.warmup_epochs;
            if epoch < w {
                s.base_lr * (epoch + 1) as f64 / w as f64
            } else {
                let phase = ((epoch - w) % s.period) as f64 / s.period as f64;
                s.base_lr + s.delta * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
            }
        }
    })
}
