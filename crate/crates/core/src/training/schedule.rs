use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternation {
    /// A deobfuscator step then an obfuscator step on every batch.
    PerBatch,
    /// Even epochs train only the deobfuscator, odd epochs only the obfuscator.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    pub lr_obf_initial: f64,
    pub lr_deobf_initial: f64,
    pub milestone_period: usize,
    pub obf_decay_factor: f64,
    pub deobf_decay_factor: f64,
    pub weight_decay: f64,
    pub alternation: Alternation,
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 30,
            lr_obf_initial: 1e-2,
            lr_deobf_initial: 1e-3,
            milestone_period: 10,
            obf_decay_factor: 100.0,
            deobf_decay_factor: 10.0,
            weight_decay: 1e-4,
            alternation: Alternation::PerBatch,
            lambda: 1.0,
            batch_size: 16,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_epochs == 0 || self.batch_size == 0 {
            return bad("total_epochs and batch_size must be positive".into());
        }
        if !(self.lr_obf_initial > 0.0 && self.lr_deobf_initial > 0.0) {
            return bad("learning rates must be strictly positive".into());
        }
        if !(self.obf_decay_factor > 0.0 && self.deobf_decay_factor > 0.0) {
            return bad("decay factors must be strictly positive".into());
        }
        if !(self.lambda >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lambda and weight_decay must be non-negative".into());
        }
        if self.milestone_period == 0 || self.total_epochs % self.milestone_period != 0 {
            return bad(format!(
                "milestone period {} does not divide {} epochs",
                self.milestone_period, self.total_epochs
            ));
        }
        Ok(())
    }
}

/// Step decay: the initial rate divided by the role's factor once per completed milestone period.
pub fn lr_at_epoch(schedule: &TrainSchedule, epoch: usize, role: Role) -> Result<f64> {
    if epoch >= schedule.total_epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside 0..{}",
            schedule.total_epochs
        )));
    }
    let k = (epoch / schedule.milestone_period.max(1)) as i32;
    Ok(match role {
        Role::Obfuscator => schedule.lr_obf_initial / schedule.obf_decay_factor.powi(k),
        Role::Deobfuscator => schedule.lr_deobf_initial / schedule.deobf_decay_factor.powi(k),
    })
}
