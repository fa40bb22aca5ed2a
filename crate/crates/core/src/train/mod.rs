//! Metric learning: pose-distance triplet mining, the lazy triplet loss,
//! Adam, the step learning-rate schedule and the training loop.

mod adam;
mod loop_;
mod loss;
mod mining;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use loop_::{loss_csv, train, write_loss_csv, LossRecord, TrainOutcome};
pub use loss::{lazy_triplet_loss, lazy_triplet_loss_grad, TripletGrad};
pub use mining::{eligibility, mine_triplets, planar_distance, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning-rate factor applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    /// Triplet margin.
    pub beta: f64,
    pub k_pos: usize,
    pub k_neg: usize,
    /// Planar distance separating positives from negatives, meters.
    pub positive_radius: f64,
    pub epochs: usize,
    /// Triplet groups per optimizer step.
    pub batch_triplets: usize,
    /// Optional cap on the total number of optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
    /// Select the farthest positive and closest negative instead of the
    /// nearest positive and farthest negative.
    pub hard_mining: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            decay: 0.5,
            decay_every: 5,
            beta: 0.5,
            k_pos: 2,
            k_neg: 6,
            positive_radius: 9.0,
            epochs: 20,
            batch_triplets: 1,
            max_steps: None,
            seed: 0,
            hard_mining: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.decay_every == 0 {
            return bad("decay_every must be >= 1");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.k_pos == 0 || self.k_neg == 0 {
            return bad("k_pos and k_neg must be >= 1");
        }
        if self.batch_triplets == 0 {
            return bad("batch_triplets must be >= 1");
        }
        if !(self.positive_radius > 0.0) {
            return bad("positive_radius must be positive");
        }
        Ok(())
    }
}

/// `lr · decay^⌊epoch / decay_every⌋`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.decay.powi((epoch / cfg.decay_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &c), 1e-5);
        assert_eq!(lr_at_epoch(4, &c), 1e-5);
        assert_eq!(lr_at_epoch(5, &c), 5e-6);
        assert_eq!(lr_at_epoch(12, &c), 2.5e-6);
    }

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.k_pos, c.k_neg, c.beta), (2, 6, 0.5));
        assert!(TrainConfig { decay: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..c }.validate().is_err());
    }
}
