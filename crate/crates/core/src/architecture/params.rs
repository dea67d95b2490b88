use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{ModelVariant, NetworkSpec, Scale};
use super::{ArchitectureError, Result};
use crate::tensor::Tensor;

/// Weights and biases of one network, keyed `<layer>/kernel` and
/// `<layer>/bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub variant: ModelVariant,
    pub scale: Scale,
    pub seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

/// FNV-1a, used to give every layer its own random stream.
fn stream_id(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ModelParams {
    /// Glorot-uniform kernels, zero biases. Each layer draws from its own
    /// stream derived from `seed` and the layer name, so layers shared by
    /// two variants start identical.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut tensors = BTreeMap::new();
        for p in spec.params() {
            let tensor = if p.is_bias {
                Tensor::zeros(&p.shape)
            } else {
                let layer = spec.layer(&p.layer).expect("param belongs to a layer");
                let (fan_in, fan_out) = layer.fans().expect("parameterised layer");
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_id(&p.layer));
                let data = (0..p.numel()).map(|_| rng.random_range(-limit..limit)).collect();
                Tensor::new(p.shape.clone(), data).expect("shape from spec")
            };
            tensors.insert(p.name, tensor);
        }
        Self {
            variant: spec.variant,
            scale: spec.scale,
            seed,
            tensors,
        }
    }

    /// Assembles parameters from loaded tensors, checking them against the
    /// spec.
    pub fn from_tensors(spec: &NetworkSpec, seed: u64, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let params = Self {
            variant: spec.variant,
            scale: spec.scale,
            seed,
            tensors,
        };
        params.check_against(spec)?;
        Ok(params)
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.params();
        if expected.len() != self.tensors.len() {
            return Err(ArchitectureError::ParamMismatch(format!(
                "spec has {} tensors, params have {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for p in expected {
            match self.tensors.get(&p.name) {
                None => return Err(ArchitectureError::ParamMismatch(format!("missing `{}`", p.name))),
                Some(t) if t.shape() != p.shape => {
                    return Err(ArchitectureError::ParamMismatch(format!(
                        "`{}` has shape {:?}, expected {:?}",
                        p.name,
                        t.shape(),
                        p.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of scalars held, counted tensor by tensor.
    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Spec and freshly initialised parameters for a variant.
pub fn build(variant: ModelVariant, scale: Scale, seed: u64) -> (NetworkSpec, ModelParams) {
    let spec = NetworkSpec::new(variant, scale);
    let params = ModelParams::init(&spec, seed);
    (spec, params)
}
