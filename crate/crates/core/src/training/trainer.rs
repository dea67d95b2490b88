use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Monitor, TargetLabel, TrainConfig};
use super::early_stop::EarlyStopping;
use super::log::{EpochRecord, TrainLog};
use super::loss::{compute_loss, loss_value, Targets};
use super::{Result, TrainingError};
use crate::architecture::{
    backbone_features, build, forward, forward_on_tape, freeze_mask, ArchitectureError, Inputs, ModelParams,
    ModelVariant, NetworkSpec, Scale,
};
use crate::dataset::{encode_attributes, select_split, Category, ImageSample, ObserverGender, Split, AGE_MAX};
use crate::tensor::{Adam, Tape, Tensor, TensorError};

/// Quantity the best checkpoint is selected on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ApparentMae,
    RealMae,
}

impl SelectionMetric {
    pub fn for_monitor(monitor: Monitor) -> Self {
        match monitor {
            Monitor::ApparentMae => Self::ApparentMae,
            Monitor::RealLoss | Monitor::DualLoss => Self::RealMae,
        }
    }
}

/// Best parameters seen during a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stage: u8,
    pub epoch: usize,
    /// Validation MAE in years under `metric` when the snapshot was taken.
    pub val_mae: f64,
    pub metric: SelectionMetric,
}

impl Checkpoint {
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "stage": self.stage,
            "epoch": self.epoch,
            "val_mae": self.val_mae,
            "metric": self.metric,
        })
    }
}

/// Aggregate validation statistics. Loss in normalised units, MAEs in
/// years.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValStats {
    pub loss: f64,
    pub mae_apparent: f64,
    pub mae_real: f64,
    /// Mean squared error of the real (or single) head on real age,
    /// normalised.
    pub real_loss: f64,
}

impl ValStats {
    pub fn monitored(&self, monitor: Monitor) -> f64 {
        match monitor {
            Monitor::ApparentMae => self.mae_apparent / AGE_MAX,
            Monitor::RealLoss => self.real_loss,
            Monitor::DualLoss => self.loss,
        }
    }

    pub fn selection_mae(&self, metric: SelectionMetric) -> f64 {
        match metric {
            SelectionMetric::ApparentMae => self.mae_apparent,
            SelectionMetric::RealMae => self.mae_real,
        }
    }
}

/// Result of [`train_stage`]: the parameters after the last epoch, the
/// epoch log and the best checkpoint.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub params: ModelParams,
    pub log: TrainLog,
    pub checkpoint: Checkpoint,
}

/// Result of [`run_case`].
#[derive(Clone, Debug)]
pub struct CaseOutcome {
    pub spec: NetworkSpec,
    pub stage1: Checkpoint,
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// One network input/target pair. Observer variants see every sample once
/// per observer gender.
struct Example<'a> {
    image: &'a Tensor,
    features: Option<Tensor>,
    attributes: Option<Tensor>,
    targets: Targets,
}

impl Example<'_> {
    fn inputs(&self) -> Inputs<'_> {
        Inputs {
            image: self.image,
            attributes: self.attributes.as_ref(),
            backbone_features: self.features.as_ref(),
        }
    }
}

fn observers(spec: &NetworkSpec) -> Vec<Option<ObserverGender>> {
    if spec.variant.uses_observer() {
        ObserverGender::ALL.iter().copied().map(Some).collect()
    } else {
        vec![None]
    }
}

fn prepare<'a>(
    spec: &NetworkSpec,
    params: &ModelParams,
    samples: &'a [ImageSample],
    cache_backbone: bool,
) -> Result<Vec<Example<'a>>> {
    let observers = observers(spec);
    let mut out = Vec::with_capacity(samples.len() * observers.len());
    for s in samples {
        let features = if cache_backbone {
            Some(backbone_features(spec, params, &s.pixels)?)
        } else {
            None
        };
        for &observer in &observers {
            out.push(Example {
                image: &s.pixels,
                features: features.clone(),
                attributes: spec
                    .attribute_len
                    .map(|_| encode_attributes(&s.record, observer).to_tensor()),
                targets: Targets::from_record(&s.record, observer)?,
            });
        }
    }
    Ok(out)
}

fn evaluate_examples(spec: &NetworkSpec, params: &ModelParams, examples: &[Example<'_>], config: &TrainConfig) -> Result<ValStats> {
    let (mut loss, mut mae_a, mut mae_r, mut real_loss) = (0.0, 0.0, 0.0, 0.0);
    for ex in examples {
        let out = forward(spec, params, ex.inputs())?;
        let real_unit = out.real_unit.unwrap_or(out.apparent_unit);
        loss += loss_value(out.apparent_unit, out.real_unit, ex.targets, config)?;
        mae_a += (out.apparent_unit - ex.targets.apparent).abs();
        mae_r += (real_unit - ex.targets.real).abs();
        real_loss += (real_unit - ex.targets.real).powi(2);
    }
    let n = examples.len() as f64;
    Ok(ValStats {
        loss: loss / n,
        mae_apparent: mae_a / n * AGE_MAX,
        mae_real: mae_r / n * AGE_MAX,
        real_loss: real_loss / n,
    })
}

/// Validation statistics of `params` on `samples`, computed exactly as
/// during training.
pub fn evaluate(spec: &NetworkSpec, params: &ModelParams, samples: &[ImageSample], config: &TrainConfig) -> Result<ValStats> {
    if samples.is_empty() {
        return Err(TrainingError::EmptyDataset("evaluation"));
    }
    let examples = prepare(spec, params, samples, false)?;
    evaluate_examples(spec, params, &examples, config)
}

fn is_non_finite(e: &TrainingError) -> bool {
    matches!(
        e,
        TrainingError::Tensor(TensorError::NonFinite { .. })
            | TrainingError::Architecture(ArchitectureError::Tensor(TensorError::NonFinite { .. }))
    )
}

fn shuffle_rng(config: &TrainConfig, stage: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed());
    rng.set_stream(0x7368_7566_666c_6500 | stage as u64);
    rng
}

/// One epoch of mini-batch Adam. Returns the mean per-sample loss.
fn run_epoch(
    spec: &NetworkSpec,
    params: &mut ModelParams,
    examples: &[Example<'_>],
    trainable: &std::collections::BTreeSet<String>,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
    config: &TrainConfig,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let scale = 1.0 / batch.len() as f64;
        let mut acc: BTreeMap<String, Tensor> = BTreeMap::new();
        for &i in batch {
            let ex = &examples[i];
            let mut tape = Tape::new();
            let fwd = forward_on_tape(&mut tape, spec, params, ex.inputs(), trainable)?;
            let loss = compute_loss(&mut tape, &fwd, ex.targets, config)?;
            total += tape.value(loss).item().expect("scalar loss");
            let grads = tape.backward(loss)?;
            for (name, var) in &fwd.params {
                let Some(g) = grads.get(*var) else { continue };
                let slot = acc
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape()));
                for (a, &d) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * d;
                }
            }
        }
        for name in trainable {
            if !acc.contains_key(name) {
                let shape = params.get(name).expect("trainable param exists").shape().to_vec();
                acc.insert(name.clone(), Tensor::zeros(&shape));
            }
        }
        adam.step(
            params
                .iter_mut()
                .filter_map(|(name, p)| acc.get(name).map(|g| (name, p, g))),
        )?;
        if params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(TrainingError::Tensor(TensorError::NonFinite { op: "adam" }));
        }
    }
    Ok(total / examples.len() as f64)
}

/// Trains one stage. Stage 1 updates only the new layers and reuses cached
/// backbone outputs; stage 2 updates everything. Stops at the epoch limit
/// or when the monitored validation value has not improved for `patience`
/// epochs.
pub fn train_stage(
    spec: &NetworkSpec,
    params: ModelParams,
    stage: u8,
    train: &[ImageSample],
    val: &[ImageSample],
    config: &TrainConfig,
) -> Result<StageOutcome> {
    config.validate_for(spec.variant)?;
    if train.is_empty() {
        return Err(TrainingError::EmptyDataset("training"));
    }
    if val.is_empty() {
        return Err(TrainingError::EmptyDataset("validation"));
    }
    let trainable = freeze_mask(spec, stage)?;
    let cache = stage == 1 && spec.frozen_prefix_len() > 0;
    let train_ex = prepare(spec, &params, train, cache)?;
    let val_ex = prepare(spec, &params, val, cache)?;

    let mut params = params;
    let mut adam = Adam::new(config.adam(stage));
    let mut rng = shuffle_rng(config, stage);
    let mut stopper = EarlyStopping::new(config.patience);
    let metric = SelectionMetric::for_monitor(config.monitor);
    let mut best: Option<Checkpoint> = None;
    let mut log = TrainLog::default();
    let started = Instant::now();

    for epoch in 1..=config.max_epochs(stage) {
        let diverged = |e: TrainingError| {
            if is_non_finite(&e) {
                TrainingError::Diverged { stage, epoch }
            } else {
                e
            }
        };
        let train_loss =
            run_epoch(spec, &mut params, &train_ex, &trainable, &mut adam, &mut rng, config).map_err(diverged)?;
        let stats = evaluate_examples(spec, &params, &val_ex, config).map_err(diverged)?;
        let monitored = stats.monitored(config.monitor);
        let mae = stats.selection_mae(metric);
        if best.as_ref().is_none_or(|b| mae < b.val_mae) {
            best = Some(Checkpoint {
                params: params.clone(),
                stage,
                epoch,
                val_mae: mae,
                metric,
            });
        }
        log.push(EpochRecord {
            stage,
            epoch,
            train_loss,
            val_loss: stats.loss,
            val_mae_apparent: stats.mae_apparent,
            val_mae_real: stats.mae_real,
            monitored,
            wall_secs: started.elapsed().as_secs_f64(),
        })?;
        log::info!(
            "stage {stage} epoch {epoch}: train {train_loss:.6} val {:.6} mae app {:.3} real {:.3}",
            stats.loss,
            stats.mae_apparent,
            stats.mae_real
        );
        if stopper.observe(epoch, monitored) {
            break;
        }
    }
    Ok(StageOutcome {
        params,
        log,
        checkpoint: best.expect("at least one epoch runs"),
    })
}

/// Runs both stages for a variant: stage 1 from a fresh initialisation,
/// stage 2 from the best stage-1 snapshot. Returns the best stage-2
/// checkpoint.
pub fn run_case(variant: ModelVariant, scale: Scale, samples: &[ImageSample], config: &TrainConfig) -> Result<CaseOutcome> {
    config.validate_for(variant)?;
    let train = select_split(samples, Split::Train);
    let val = select_split(samples, Split::Validation);
    let (spec, params) = build(variant, scale, config.seed);
    let s1 = train_stage(&spec, params, 1, &train, &val, config)?;
    let s2 = train_stage(&spec, s1.checkpoint.params.clone(), 2, &train, &val, config)?;
    let mut log = s1.log;
    log.extend(s2.log)?;
    Ok(CaseOutcome {
        spec,
        stage1: s1.checkpoint,
        checkpoint: s2.checkpoint,
        log,
    })
}

/// Single-head supervision with `label` targets and the matching stopping
/// rule: apparent MAE when predicting apparent age, real loss when
/// predicting real age.
pub fn single_head_config(variant: ModelVariant, label: TargetLabel, predict_real: bool) -> TrainConfig {
    let mut c = TrainConfig::for_variant(variant);
    c.target_label = label;
    c.monitor = if predict_real { Monitor::RealLoss } else { Monitor::ApparentMae };
    c
}
