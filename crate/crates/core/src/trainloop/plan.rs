use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LrSchedule, ScheduleKind};
use crate::error::{Error, Result};

/// Adam moments; only the learning rate varies between plans.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub epochs: usize,
    pub schedule: LrSchedule,
    /// Layer-group pattern of the groups trained in this phase; all others
    /// are frozen.
    pub trainable: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub phases: Vec<Phase>,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainPlan {
    /// One phase training every group.
    pub fn single(schedule: LrSchedule, batch_size: usize) -> Self {
        Self { phases: vec![Phase { epochs: schedule.total_epochs, schedule, trainable: "*".into() }], batch_size, seed: 0 }
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("a training plan needs at least one phase"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.epochs == 0 {
                return Err(Error::config(format!("phase {i} has no epochs")));
            }
            if p.schedule.total_epochs != p.epochs {
                return Err(Error::config(format!("phase {i}: schedule spans {} epochs, phase {}", p.schedule.total_epochs, p.epochs)));
            }
            p.schedule.validate()?;
        }
        Ok(())
    }

    /// Keeps every learning-rate parameter and rescales epoch counts so the
    /// plan totals at most `max_epochs`, each phase keeping at least one
    /// epoch and warmup staying shorter than its phase.
    pub fn capped(&self, max_epochs: usize) -> Self {
        let total = self.total_epochs();
        if total <= max_epochs {
            return self.clone();
        }
        let f = max_epochs as f64 / total as f64;
        let phases = self
            .phases
            .iter()
            .map(|p| {
                let epochs = ((p.epochs as f64 * f).round() as usize).max(1);
                let mut s = p.schedule.with_total_epochs(epochs);
                if s.kind == ScheduleKind::WarmupCyclicCosine {
                    s.warmup_epochs = ((s.warmup_epochs as f64 * f).round() as usize).min(epochs - 1);
                    s.period = ((s.period as f64 * f).round() as usize).max(1);
                }
                Phase { epochs, schedule: s, trainable: p.trainable.clone() }
            })
            .collect();
        Self { phases, ..self.clone() }
    }
}

/// Three phases for the two-view model: the final dense layer, then every
/// layer above the towers, then everything.
pub fn staged_plan_two_view_cv() -> TrainPlan {
    let phase =
        |lr: f64, epochs: usize, trainable: &str| Phase { epochs, schedule: LrSchedule::fixed(lr, epochs), trainable: trainable.into() };
    TrainPlan { phases: vec![phase(1e-3, 3, "fusion.dense"), phase(1e-4, 4, "fusion.*"), phase(1e-5, 8, "*")], batch_size: 2, seed: 0 }
}

/// Training plans by name.
pub fn named_schedules() -> BTreeMap<String, TrainPlan> {
    let mut m = BTreeMap::new();
    m.insert("patch_cv".into(), TrainPlan::single(LrSchedule::fixed(1e-4, 20), 40));
    m.insert("patch_od".into(), TrainPlan::single(LrSchedule::cyclic(1e-4, 4, 3, 2e-4, 30), 40));
    m.insert("single_cv".into(), TrainPlan::single(LrSchedule::fixed(1e-5, 50), 3));
    m.insert("single_od".into(), TrainPlan::single(LrSchedule::cyclic(1e-5, 4, 5, 2e-5, 50), 4));
    m.insert("two_view_cv".into(), staged_plan_two_view_cv());
    m.insert("two_view_od".into(), TrainPlan::single(LrSchedule::cyclic(2e-6, 5, 20, 2e-6, 100), 6));
    m
}

pub fn named_plan(name: &str) -> Result<TrainPlan> {
    named_schedules().remove(name).ok_or_else(|| Error::config(format!("unknown schedule {name:?}")))
}
