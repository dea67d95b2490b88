use super::config::{TargetLabel, TrainConfig};
use super::{Result, TrainingError};
use crate::architecture::TapeForward;
use crate::dataset::{normalize_age, AnnotationRecord, ObserverGender};
use crate::tensor::{Tape, Tensor, Var};

/// Normalised regression targets for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Targets {
    /// Apparent label: the pooled mean, or the observer's mean in observer
    /// mode.
    pub apparent: f64,
    pub real: f64,
}

impl Targets {
    pub fn from_record(record: &AnnotationRecord, observer: Option<ObserverGender>) -> Result<Self> {
        let apparent = record.apparent_label(observer).ok_or_else(|| TrainingError::MissingLabel {
            image_id: record.image_id.clone(),
            label: "apparent_by_observer",
        })?;
        Ok(Self {
            apparent: normalize_age(apparent)?,
            real: normalize_age(record.real_age)?,
        })
    }

    /// Target of the single head under `label`.
    pub fn single(&self, label: TargetLabel) -> f64 {
        match label {
            TargetLabel::Real => self.real,
            TargetLabel::Apparent | TargetLabel::Dual => self.apparent,
        }
    }
}

/// Records the training loss on `tape`: `w_a·mse(apparent) + w_r·mse(real)`
/// for dual supervision, a single unweighted MSE term otherwise.
pub fn compute_loss(tape: &mut Tape, out: &TapeForward, targets: Targets, config: &TrainConfig) -> Result<Var> {
    let term = |tape: &mut Tape, pred: Var, target: f64| {
        let t = tape.constant(Tensor::scalar(target));
        tape.mse(pred, t)
    };
    match (config.target_label, out.real) {
        (TargetLabel::Dual, Some(real)) => {
            let w = config.loss_weights;
            let a = term(tape, out.apparent, targets.apparent)?;
            let r = term(tape, real, targets.real)?;
            let a = tape.scale(a, w.apparent)?;
            let r = tape.scale(r, w.real)?;
            Ok(tape.add(a, r)?)
        }
        (TargetLabel::Dual, None) => Err(TrainingError::InvalidConfig(
            "dual supervision needs a network with two heads".into(),
        )),
        (label, None) => Ok(term(tape, out.apparent, targets.single(label))?),
        (label, Some(_)) => Err(TrainingError::InvalidConfig(format!(
            "two-headed network needs dual supervision, got {label:?}"
        ))),
    }
}

/// Value of [`compute_loss`] for already computed head outputs in `[0, 1]`.
pub fn loss_value(apparent_unit: f64, real_unit: Option<f64>, targets: Targets, config: &TrainConfig) -> Result<f64> {
    let sq = |p: f64, t: f64| (p - t) * (p - t);
    match (config.target_label, real_unit) {
        (TargetLabel::Dual, Some(r)) => {
            let w = config.loss_weights;
            Ok(w.apparent * sq(apparent_unit, targets.apparent) + w.real * sq(r, targets.real))
        }
        (label, None) if label != TargetLabel::Dual => Ok(sq(apparent_unit, targets.single(label))),
        (label, _) => Err(TrainingError::InvalidConfig(format!(
            "target label {label:?} does not fit the network's heads"
        ))),
    }
}
