use serde::{Deserialize, Serialize};

use super::{Result, TrainingError};
use crate::architecture::ModelVariant;
use crate::tensor::AdamConfig;

/// Which label(s) supervise the heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetLabel {
    /// The single head regresses the apparent label.
    Apparent,
    /// The single head regresses the real age.
    Real,
    /// Apparent head on apparent labels, real head on real age.
    Dual,
}

/// Validation quantity driving early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// MAE of the apparent (or single) head against apparent labels.
    ApparentMae,
    /// MSE of the real head (or the single head) against real age.
    RealLoss,
    /// The weighted training loss evaluated on the validation set.
    DualLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub apparent: f64,
    pub real: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { apparent: 1.0, real: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub max_epochs_stage1: usize,
    pub max_epochs_stage2: usize,
    /// Non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub loss_weights: LossWeights,
    pub monitor: Monitor,
    /// Weight initialisation seed. Also seeds shuffling unless
    /// `shuffle_seed` is set.
    pub seed: u64,
    pub shuffle_seed: Option<u64>,
    pub target_label: TargetLabel,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_variant(ModelVariant::Case3)
    }
}

/// Minimum drop in the monitored value that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

impl TrainConfig {
    /// Defaults for a variant: lr 1e-6 for Case1 and 1e-4 otherwise, dual
    /// supervision for two-headed variants, apparent supervision for the
    /// rest.
    pub fn for_variant(variant: ModelVariant) -> Self {
        let lr = if variant == ModelVariant::Case1 { 1e-6 } else { 1e-4 };
        let adam = AdamConfig::default();
        let (target_label, monitor) = if variant.is_dual_head() {
            (TargetLabel::Dual, Monitor::DualLoss)
        } else {
            (TargetLabel::Apparent, Monitor::ApparentMae)
        };
        Self {
            lr_stage1: lr,
            lr_stage2: lr,
            max_epochs_stage1: 3000,
            max_epochs_stage2: 1500,
            patience: 50,
            batch_size: 32,
            loss_weights: LossWeights::default(),
            monitor,
            seed: 0,
            shuffle_seed: None,
            target_label,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainingError::InvalidConfig(m));
        for (name, lr) in [("lr_stage1", self.lr_stage1), ("lr_stage2", self.lr_stage2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs_stage1 == 0 || self.max_epochs_stage2 == 0 {
            return bad("epoch maxima must be at least 1".into());
        }
        let w = self.loss_weights;
        if !(w.apparent >= 0.0 && w.real >= 0.0 && w.apparent.is_finite() && w.real.is_finite()) {
            return bad(format!("loss weights must be finite and >= 0, got ({}, {})", w.apparent, w.real));
        }
        if w.apparent == 0.0 && w.real == 0.0 {
            return bad("loss weights must not both be zero".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        Ok(())
    }

    /// Checks that the supervision and monitor fit the variant's heads.
    pub fn validate_for(&self, variant: ModelVariant) -> Result<()> {
        self.validate()?;
        let dual = variant.is_dual_head();
        match (dual, self.target_label) {
            (true, TargetLabel::Dual) | (false, TargetLabel::Apparent | TargetLabel::Real) => {}
            (true, t) => {
                return Err(TrainingError::InvalidConfig(format!(
                    "{variant} has two heads and needs target_label dual, got {t:?}"
                )))
            }
            (false, TargetLabel::Dual) => {
                return Err(TrainingError::InvalidConfig(format!(
                    "{variant} has a single head; target_label dual needs two"
                )))
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, stage: u8) -> f64 {
        if stage == 1 {
            self.lr_stage1
        } else {
            self.lr_stage2
        }
    }

    pub fn max_epochs(&self, stage: u8) -> usize {
        if stage == 1 {
            self.max_epochs_stage1
        } else {
            self.max_epochs_stage2
        }
    }

    pub fn adam(&self, stage: u8) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate(stage),
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn shuffle_seed(&self) -> u64 {
        self.shuffle_seed.unwrap_or(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_defaults() {
        let c1 = TrainConfig::for_variant(ModelVariant::Case1);
        assert_eq!(c1.lr_stage1, 1e-6);
        assert_eq!(c1.lr_stage2, 1e-6);
        assert_eq!((c1.max_epochs_stage1, c1.max_epochs_stage2), (3000, 1500));
        assert_eq!(c1.target_label, TargetLabel::Apparent);
        let c3 = TrainConfig::for_variant(ModelVariant::Case3);
        assert_eq!(c3.lr_stage1, 1e-4);
        assert_eq!(c3.target_label, TargetLabel::Dual);
        assert_eq!(c3.loss_weights, LossWeights { apparent: 1.0, real: 1.0 });
        c3.validate_for(ModelVariant::Case3).unwrap();
        assert!(c3.validate_for(ModelVariant::Case2).is_err());
        assert!(c1.validate_for(ModelVariant::Case3).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let base = TrainConfig::default();
        let mut c = base.clone();
        c.lr_stage2 = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.patience = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.loss_weights = LossWeights { apparent: 0.0, real: 0.0 };
        assert!(c.validate().is_err());
        let mut c = base;
        c.loss_weights.real = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"patience": 3}"#).is_ok());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"patiense": 3}"#).is_err());
    }
}
