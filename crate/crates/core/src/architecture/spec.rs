use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ArchitectureError, Result};
use crate::dataset::{BASE_ATTRIBUTE_LEN, OBSERVER_ATTRIBUTE_LEN};
use crate::tensor::Padding;

pub const IMAGE_INPUT: &str = "input_1";
pub const ATTRIBUTE_INPUT: &str = "input_2";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// VGG16 with its classifier replaced by a single sigmoid regressor.
    Case1,
    /// Reduction conv and fusion layer, image only.
    Case2Prime,
    /// [`ModelVariant::Case2Prime`] plus the attribute path; one head.
    Case2,
    /// Apparent head followed by the attribute-conditioned real head.
    Case3,
    /// [`ModelVariant::Case3`] with the observer-gender block in the
    /// attribute input.
    Case3Observer,
}

impl ModelVariant {
    pub const ALL: [Self; 5] = [Self::Case1, Self::Case2Prime, Self::Case2, Self::Case3, Self::Case3Observer];

    pub fn name(self) -> &'static str {
        match self {
            Self::Case1 => "case1",
            Self::Case2Prime => "case2_prime",
            Self::Case2 => "case2",
            Self::Case3 => "case3",
            Self::Case3Observer => "case3_observer",
        }
    }

    /// Length of the attribute input, if the variant takes one.
    pub fn attribute_len(self) -> Option<usize> {
        match self {
            Self::Case1 | Self::Case2Prime => None,
            Self::Case2 | Self::Case3 => Some(BASE_ATTRIBUTE_LEN),
            Self::Case3Observer => Some(OBSERVER_ATTRIBUTE_LEN),
        }
    }

    pub fn is_dual_head(self) -> bool {
        matches!(self, Self::Case3 | Self::Case3Observer)
    }

    pub fn uses_observer(self) -> bool {
        self == Self::Case3Observer
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm = s.to_ascii_lowercase().replace(['-', '\''], "_");
        Self::ALL
            .into_iter()
            .find(|v| v.name() == norm || (norm == "case2_" && *v == Self::Case2Prime))
            .ok_or_else(|| format!("unknown variant `{s}` (case1, case2_prime, case2, case3, case3_observer)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// VGG16 dimensions on 224×224×3 input.
    #[serde(rename = "full")]
    FullVgg16,
    /// Three-block CNN on 32×32×1 input.
    Desk,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Self::FullVgg16 => "full",
            Self::Desk => "desk",
        }
    }

    pub fn image_shape(self) -> [usize; 3] {
        match self {
            Self::FullVgg16 => [224, 224, 3],
            Self::Desk => [32, 32, 1],
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "full_vgg16" | "vgg16" => Ok(Self::FullVgg16),
            "desk" => Ok(Self::Desk),
            _ => Err(format!("unknown scale `{s}` (full, desk)")),
        }
    }
}

/// Which training stage may update a layer's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezeGroup {
    /// Feature extractor; trained only in stage 2.
    Backbone,
    /// Layers added on top of the extractor; trained in both stages.
    NewLayers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerKind {
    Conv2d {
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool2,
    Flatten,
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Producers of this layer's inputs: graph inputs or earlier layers.
    pub inputs: Vec<String>,
    pub activation: Activation,
    pub bias: bool,
    pub group: FreezeGroup,
    pub output_shape: Vec<usize>,
}

impl LayerSpec {
    /// Kernel shape for parameterised layers.
    pub fn kernel_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2d { kh, kw, c_in, c_out, .. } => Some(vec![kh, kw, c_in, c_out]),
            LayerKind::Dense { n_in, n_out } => Some(vec![n_in, n_out]),
            _ => None,
        }
    }

    /// `(fan_in, fan_out)` for Glorot-uniform initialisation.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match self.kind {
            LayerKind::Conv2d { kh, kw, c_in, c_out, .. } => Some((kh * kw * c_in, kh * kw * c_out)),
            LayerKind::Dense { n_in, n_out } => Some((n_in, n_out)),
            _ => None,
        }
    }
}

/// One named parameter tensor of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub layer: String,
    pub shape: Vec<usize>,
    pub group: FreezeGroup,
    pub is_bias: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn kernel_name(layer: &str) -> String {
    format!("{layer}/kernel")
}

pub fn bias_name(layer: &str) -> String {
    format!("{layer}/bias")
}

/// Declarative layer graph of one model variant at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: ModelVariant,
    pub scale: Scale,
    pub image_shape: [usize; 3],
    pub attribute_len: Option<usize>,
    /// Layers in execution order.
    pub layers: Vec<LayerSpec>,
    /// Layer producing the (apparent, or only) sigmoid head.
    pub apparent_head: String,
    pub real_head: Option<String>,
}

impl NetworkSpec {
    pub fn new(variant: ModelVariant, scale: Scale) -> Self {
        let mut b = GraphBuilder::new(scale.image_shape(), variant.attribute_len());
        let features = match scale {
            Scale::FullVgg16 => b.vgg16_features(),
            Scale::Desk => b.desk_features(),
        };
        let dims = Dims::for_scale(scale);

        let (apparent_head, real_head) = if variant == ModelVariant::Case1 {
            b.set_group(FreezeGroup::Backbone);
            let flat = b.flatten("flatten", &features);
            let fc1 = b.dense("fc1", &flat, dims.classifier, Activation::Relu);
            let fc2 = b.dense("fc2", &fc1, dims.classifier, Activation::Relu);
            b.set_group(FreezeGroup::NewLayers);
            (b.dense("predictions", &fc2, 1, Activation::Sigmoid), None)
        } else {
            b.set_group(FreezeGroup::NewLayers);
            let [h, w, _] = b.shape_of(&features).try_into().expect("rank-3 features");
            let reduced = b.conv("reduction_conv", &features, h, w, dims.reduction, 1, Padding::Valid, Activation::Relu);
            let flat = b.flatten("flatten_1", &reduced);
            let fused_input = if variant.attribute_len().is_some() {
                let hidden = b.dense("hidden_layer", ATTRIBUTE_INPUT, 10, Activation::Relu);
                b.concat("concatenate_1", &[&flat, &hidden])
            } else {
                flat
            };
            let fc2 = b.dense("fc2", &fused_input, dims.fusion, Activation::Relu);
            let apparent = b.dense("predict_app", &fc2, 1, Activation::Sigmoid);
            let real = variant.is_dual_head().then(|| {
                let hidden2 = b.dense("hidden_layer_2", ATTRIBUTE_INPUT, 5, Activation::Relu);
                let joined = b.concat("concatenate_2", &[&apparent, &hidden2]);
                let fc3 = b.dense("fc3", &joined, 6, Activation::Relu);
                b.dense("predict_real", &fc3, 1, Activation::Sigmoid)
            });
            (apparent, real)
        };

        let spec = Self {
            variant,
            scale,
            image_shape: scale.image_shape(),
            attribute_len: variant.attribute_len(),
            layers: b.layers,
            apparent_head,
            real_head,
        };
        debug_assert!(spec.validate().is_ok());
        spec
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// All parameter tensors, in layer order (kernel before bias).
    pub fn params(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let Some(kernel) = layer.kernel_shape() else { continue };
            let n_out = *kernel.last().expect("non-empty kernel shape");
            out.push(ParamSpec {
                name: kernel_name(&layer.name),
                layer: layer.name.clone(),
                shape: kernel,
                group: layer.group,
                is_bias: false,
            });
            if layer.bias {
                out.push(ParamSpec {
                    name: bias_name(&layer.name),
                    layer: layer.name.clone(),
                    shape: vec![n_out],
                    group: layer.group,
                    is_bias: true,
                });
            }
        }
        out
    }

    /// Longest prefix of layers that belong to the backbone and depend only
    /// on the image. Its last layer's output is constant while the
    /// backbone is frozen.
    pub fn frozen_prefix_len(&self) -> usize {
        let mut seen = BTreeSet::from([IMAGE_INPUT.to_owned()]);
        let mut len = 0;
        for layer in &self.layers {
            if layer.group != FreezeGroup::Backbone || !layer.inputs.iter().all(|i| seen.contains(i)) {
                break;
            }
            seen.insert(layer.name.clone());
            len += 1;
        }
        len
    }

    /// Checks that every layer reads existing values and that declared
    /// shapes agree with the layer arithmetic.
    pub fn validate(&self) -> Result<()> {
        let mut shapes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        shapes.insert(IMAGE_INPUT, self.image_shape.to_vec());
        if let Some(n) = self.attribute_len {
            shapes.insert(ATTRIBUTE_INPUT, vec![n]);
        }
        for layer in &self.layers {
            let inputs: Vec<&Vec<usize>> = layer
                .inputs
                .iter()
                .map(|i| {
                    shapes.get(i.as_str()).ok_or_else(|| ArchitectureError::InvalidSpec(format!(
                        "layer `{}` reads unknown value `{i}`",
                        layer.name
                    )))
                })
                .collect::<Result<_>>()?;
            let out = infer_shape(&layer.kind, &inputs)
                .map_err(|m| ArchitectureError::InvalidSpec(format!("layer `{}`: {m}", layer.name)))?;
            if out != layer.output_shape {
                return Err(ArchitectureError::InvalidSpec(format!(
                    "layer `{}` declares output {:?} but computes {:?}",
                    layer.name, layer.output_shape, out
                )));
            }
            if shapes.insert(&layer.name, out).is_some() {
                return Err(ArchitectureError::InvalidSpec(format!("duplicate layer `{}`", layer.name)));
            }
        }
        for head in std::iter::once(&self.apparent_head).chain(&self.real_head) {
            if shapes.get(head.as_str()) != Some(&vec![1]) {
                return Err(ArchitectureError::InvalidSpec(format!("head `{head}` must output one value")));
            }
        }
        Ok(())
    }
}

fn infer_shape(kind: &LayerKind, inputs: &[&Vec<usize>]) -> std::result::Result<Vec<usize>, String> {
    let single = || match inputs {
        [one] => Ok(*one),
        _ => Err(format!("expected one input, got {}", inputs.len())),
    };
    match kind {
        LayerKind::Conv2d {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            padding,
        } => {
            let x = single()?;
            if x.len() != 3 || x[2] != *c_in {
                return Err(format!("conv expects h×w×{c_in}, got {x:?}"));
            }
            let (oh, ow) = crate::tensor::conv_output_hw(x[0], x[1], *kh, *kw, *stride, *padding)
                .map_err(|e| e.to_string())?;
            Ok(vec![oh, ow, *c_out])
        }
        LayerKind::MaxPool2 => {
            let x = single()?;
            if x.len() != 3 || x[0] % 2 != 0 || x[1] % 2 != 0 {
                return Err(format!("maxpool2 expects even h×w×c, got {x:?}"));
            }
            Ok(vec![x[0] / 2, x[1] / 2, x[2]])
        }
        LayerKind::Flatten => Ok(vec![single()?.iter().product()]),
        LayerKind::Dense { n_in, n_out } => {
            let x = single()?;
            if x != &vec![*n_in] {
                return Err(format!("dense expects [{n_in}], got {x:?}"));
            }
            Ok(vec![*n_out])
        }
        LayerKind::Concat => {
            if inputs.is_empty() || inputs.iter().any(|s| s.len() != 1) {
                return Err("concat expects rank-1 inputs".into());
            }
            Ok(vec![inputs.iter().map(|s| s[0]).sum()])
        }
    }
}

struct Dims {
    /// Width of the two fully connected layers kept in case 1.
    classifier: usize,
    reduction: usize,
    fusion: usize,
}

impl Dims {
    fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::FullVgg16 => Self {
                classifier: 4096,
                reduction: 512,
                fusion: 256,
            },
            Scale::Desk => Self {
                classifier: 64,
                reduction: 64,
                fusion: 32,
            },
        }
    }
}

struct GraphBuilder {
    layers: Vec<LayerSpec>,
    shapes: BTreeMap<String, Vec<usize>>,
    group: FreezeGroup,
}

impl GraphBuilder {
    fn new(image_shape: [usize; 3], attribute_len: Option<usize>) -> Self {
        let mut shapes = BTreeMap::from([(IMAGE_INPUT.to_owned(), image_shape.to_vec())]);
        if let Some(n) = attribute_len {
            shapes.insert(ATTRIBUTE_INPUT.to_owned(), vec![n]);
        }
        Self {
            layers: Vec::new(),
            shapes,
            group: FreezeGroup::Backbone,
        }
    }

    fn set_group(&mut self, group: FreezeGroup) {
        self.group = group;
    }

    fn shape_of(&self, name: &str) -> Vec<usize> {
        self.shapes[name].clone()
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: &[&str], activation: Activation, bias: bool) -> String {
        let input_shapes: Vec<&Vec<usize>> = inputs.iter().map(|i| &self.shapes[*i]).collect();
        let output_shape = infer_shape(&kind, &input_shapes).expect("builder produces consistent graphs");
        self.shapes.insert(name.to_owned(), output_shape.clone());
        self.layers.push(LayerSpec {
            name: name.to_owned(),
            kind,
            inputs: inputs.iter().map(|s| (*s).to_owned()).collect(),
            activation,
            bias,
            group: self.group,
            output_shape,
        });
        name.to_owned()
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        input: &str,
        kh: usize,
        kw: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> String {
        let c_in = self.shapes[input][2];
        let kind = LayerKind::Conv2d {
            kh,
            kw,
            c_in,
            c_out,
            stride,
            padding,
        };
        self.push(name, kind, &[input], activation, true)
    }

    fn pool(&mut self, name: &str, input: &str) -> String {
        self.push(name, LayerKind::MaxPool2, &[input], Activation::Linear, false)
    }

    fn flatten(&mut self, name: &str, input: &str) -> String {
        self.push(name, LayerKind::Flatten, &[input], Activation::Linear, false)
    }

    fn dense(&mut self, name: &str, input: &str, n_out: usize, activation: Activation) -> String {
        let n_in = self.shapes[input][0];
        self.push(name, LayerKind::Dense { n_in, n_out }, &[input], activation, true)
    }

    fn concat(&mut self, name: &str, inputs: &[&str]) -> String {
        self.push(name, LayerKind::Concat, inputs, Activation::Linear, false)
    }

    /// VGG16 convolutional stack through `block5_pool`.
    fn vgg16_features(&mut self) -> String {
        let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let mut x = IMAGE_INPUT.to_owned();
        for (b, &(channels, convs)) in blocks.iter().enumerate() {
            for c in 1..=convs {
                x = self.conv(&format!("block{}_conv{c}", b + 1), &x, 3, 3, channels, 1, Padding::Same, Activation::Relu);
            }
            x = self.pool(&format!("block{}_pool", b + 1), &x);
        }
        x
    }

    /// Three conv(3×3, same) + ReLU + 2×2 pool blocks with 8/16/32 channels.
    fn desk_features(&mut self) -> String {
        let mut x = IMAGE_INPUT.to_owned();
        for (b, channels) in [8, 16, 32].into_iter().enumerate() {
            x = self.conv(&format!("block{}_conv", b + 1), &x, 3, 3, channels, 1, Padding::Same, Activation::Relu);
            x = self.pool(&format!("block{}_pool", b + 1), &x);
        }
        x
    }
}

/// Total number of trainable scalars: kernel plus bias elements.
pub fn count_trainable_params(spec: &NetworkSpec) -> usize {
    spec.params().iter().map(ParamSpec::numel).sum()
}

/// Names of the parameters updated in the given training stage: the new
/// layers in stage 1, everything in stage 2.
pub fn freeze_mask(spec: &NetworkSpec, stage: u8) -> Result<BTreeSet<String>> {
    let params = spec.params();
    match stage {
        1 => Ok(params
            .into_iter()
            .filter(|p| p.group == FreezeGroup::NewLayers)
            .map(|p| p.name)
            .collect()),
        2 => Ok(params.into_iter().map(|p| p.name).collect()),
        other => Err(ArchitectureError::InvalidStage(other)),
    }
}
