use std::collections::{BTreeMap, BTreeSet};

use super::params::ModelParams;
use super::spec::{bias_name, kernel_name, Activation, LayerKind, LayerSpec, NetworkSpec, ATTRIBUTE_INPUT, IMAGE_INPUT};
use super::{ArchitectureError, Result};
use crate::dataset::AGE_MAX;
use crate::tensor::{Tape, Tensor, Var};

/// Head outputs of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Sigmoid output of the apparent (or only) head, in `[0, 1]`.
    pub apparent_unit: f64,
    pub real_unit: Option<f64>,
    /// `apparent_unit` in years.
    pub apparent_pred: f64,
    pub real_pred: Option<f64>,
}

impl ForwardOutput {
    fn from_units(apparent_unit: f64, real_unit: Option<f64>) -> Self {
        Self {
            apparent_unit,
            real_unit,
            apparent_pred: apparent_unit * AGE_MAX,
            real_pred: real_unit.map(|u| u * AGE_MAX),
        }
    }
}

/// Handles to the interesting values of a forward pass recorded on a tape.
#[derive(Debug)]
pub struct TapeForward {
    pub apparent: Var,
    pub real: Option<Var>,
    /// Tape handles of the parameters registered as trainable.
    pub params: BTreeMap<String, Var>,
}

impl TapeForward {
    pub fn output(&self, tape: &Tape) -> ForwardOutput {
        let unit = |v: Var| tape.value(v).item().expect("scalar head");
        ForwardOutput::from_units(unit(self.apparent), self.real.map(unit))
    }
}

/// Network inputs for one sample.
#[derive(Clone, Copy, Debug)]
pub struct Inputs<'a> {
    pub image: &'a Tensor,
    pub attributes: Option<&'a Tensor>,
    /// Output of the frozen backbone prefix (see
    /// [`NetworkSpec::frozen_prefix_len`]). When set, those layers are
    /// skipped and `image` is not read.
    pub backbone_features: Option<&'a Tensor>,
}

impl<'a> Inputs<'a> {
    pub fn new(image: &'a Tensor, attributes: Option<&'a Tensor>) -> Self {
        Self {
            image,
            attributes,
            backbone_features: None,
        }
    }
}

fn check_inputs(spec: &NetworkSpec, inputs: &Inputs<'_>) -> Result<()> {
    if inputs.backbone_features.is_none() && inputs.image.shape() != spec.image_shape {
        return Err(ArchitectureError::Input(format!(
            "image shape {:?}, {} {} expects {:?}",
            inputs.image.shape(),
            spec.variant,
            spec.scale,
            spec.image_shape
        )));
    }
    match (spec.attribute_len, inputs.attributes) {
        (None, None) => Ok(()),
        (None, Some(_)) => Err(ArchitectureError::Input(format!("{} takes no attribute vector", spec.variant))),
        (Some(n), None) => Err(ArchitectureError::Input(format!("{} needs a {n}-D attribute vector", spec.variant))),
        (Some(n), Some(a)) if a.shape() != [n] => Err(ArchitectureError::Input(format!(
            "{} needs a {n}-D attribute vector, got {:?}",
            spec.variant,
            a.shape()
        ))),
        _ => Ok(()),
    }
}

/// Records a forward pass on `tape`. Parameters named in `trainable` are
/// registered as gradient-requiring leaves; the rest are constants.
pub fn forward_on_tape(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ModelParams,
    inputs: Inputs<'_>,
    trainable: &BTreeSet<String>,
) -> Result<TapeForward> {
    check_inputs(spec, &inputs)?;
    let mut values: BTreeMap<&str, Var> = BTreeMap::new();
    let mut param_vars = BTreeMap::new();

    let skip = match inputs.backbone_features {
        Some(features) => {
            let prefix = spec.frozen_prefix_len();
            let Some(last) = prefix.checked_sub(1).map(|i| &spec.layers[i]) else {
                return Err(ArchitectureError::Input("variant has no frozen backbone prefix".into()));
            };
            if features.shape() != last.output_shape {
                return Err(ArchitectureError::Input(format!(
                    "backbone features {:?}, expected {:?}",
                    features.shape(),
                    last.output_shape
                )));
            }
            values.insert(&last.name, tape.constant(features.clone()));
            prefix
        }
        None => {
            values.insert(IMAGE_INPUT, tape.constant(inputs.image.clone()));
            0
        }
    };
    if let Some(a) = inputs.attributes {
        values.insert(ATTRIBUTE_INPUT, tape.constant(a.clone()));
    }

    let mut param = |tape: &mut Tape, name: String| -> Result<Var> {
        let t = params
            .get(&name)
            .ok_or_else(|| ArchitectureError::ParamMismatch(format!("missing `{name}`")))?;
        let var = tape.leaf(t.clone(), trainable.contains(&name));
        if trainable.contains(&name) {
            param_vars.insert(name, var);
        }
        Ok(var)
    };
    run_layers(tape, &spec.layers[skip..], &mut values, &mut param)?;

    Ok(TapeForward {
        apparent: values[spec.apparent_head.as_str()],
        real: spec.real_head.as_ref().map(|h| values[h.as_str()]),
        params: param_vars,
    })
}

fn run_layers<'s>(
    tape: &mut Tape,
    layers: &'s [LayerSpec],
    values: &mut BTreeMap<&'s str, Var>,
    param: &mut dyn FnMut(&mut Tape, String) -> Result<Var>,
) -> Result<()> {
    for layer in layers {
        let ins: Vec<Var> = layer.inputs.iter().map(|i| values[i.as_str()]).collect();
        let pre = match &layer.kind {
            LayerKind::Conv2d { stride, padding, .. } => {
                let k = param(tape, kernel_name(&layer.name))?;
                let b = layer.bias.then(|| param(tape, bias_name(&layer.name))).transpose()?;
                tape.conv2d(ins[0], k, b, *stride, *padding)?
            }
            LayerKind::Dense { .. } => {
                let w = param(tape, kernel_name(&layer.name))?;
                let b = layer.bias.then(|| param(tape, bias_name(&layer.name))).transpose()?;
                tape.dense(ins[0], w, b)?
            }
            LayerKind::MaxPool2 => tape.maxpool2(ins[0])?,
            LayerKind::Flatten => tape.flatten(ins[0])?,
            LayerKind::Concat => tape.concat(&ins)?,
        };
        let out = match layer.activation {
            Activation::Linear => pre,
            Activation::Relu => tape.relu(pre)?,
            Activation::Sigmoid => tape.sigmoid(pre)?,
        };
        values.insert(&layer.name, out);
    }
    Ok(())
}

/// Inference-only forward pass.
pub fn forward(spec: &NetworkSpec, params: &ModelParams, inputs: Inputs<'_>) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let out = forward_on_tape(&mut tape, spec, params, inputs, &BTreeSet::new())?;
    Ok(out.output(&tape))
}

/// Output of the frozen backbone prefix for one image.
pub fn backbone_features(spec: &NetworkSpec, params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    let prefix = spec.frozen_prefix_len();
    if prefix == 0 {
        return Err(ArchitectureError::Input("variant has no frozen backbone prefix".into()));
    }
    if image.shape() != spec.image_shape {
        return Err(ArchitectureError::Input(format!(
            "image shape {:?}, expected {:?}",
            image.shape(),
            spec.image_shape
        )));
    }
    let layers = &spec.layers[..prefix];
    let mut tape = Tape::new();
    let mut values = BTreeMap::from([(IMAGE_INPUT, tape.constant(image.clone()))]);
    let mut param = |tape: &mut Tape, name: String| -> Result<Var> {
        let t = params
            .get(&name)
            .ok_or_else(|| ArchitectureError::ParamMismatch(format!("missing `{name}`")))?;
        Ok(tape.constant(t.clone()))
    };
    run_layers(&mut tape, layers, &mut values, &mut param)?;
    Ok(tape.value(values[layers[prefix - 1].name.as_str()]).clone())
}
