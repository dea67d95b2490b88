use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Adam hyperparameters. Everything but the learning rate defaults to the
/// conventional values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    shape: Vec<usize>,
}

/// Adam with bias-corrected moment estimates, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(name, param, grad)` triple. Moment
    /// buffers are created on first sight of a name; a later shape change
    /// for that name is an error.
    pub fn step<'a, I>(&mut self, updates: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>,
    {
        let updates: Vec<_> = updates.into_iter().collect();
        for (name, param, grad) in &updates {
            if param.shape() != grad.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    detail: format!("{name}: param {:?} vs grad {:?}", param.shape(), grad.shape()),
                });
            }
            if let Some(m) = self.moments.get(*name) {
                if m.shape != param.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam",
                        detail: format!("{name}: moments {:?} vs param {:?}", m.shape, param.shape()),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for (name, param, grad) in updates {
            let m = self.moments.entry(name.to_owned()).or_insert_with(|| Moments {
                first: vec![0.0; param.numel()],
                second: vec![0.0; param.numel()],
                shape: param.shape().to_vec(),
            });
            for (((p, &g), m1), m2) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.first.iter_mut())
                .zip(m.second.iter_mut())
            {
                *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                let m_hat = *m1 / correction1;
                let v_hat = *m2 / correction2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1));
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        for _ in 0..5 {
            adam.step([("p", &mut p, &g)]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001 after one step; bias correction restores both
        // to 1, so the step is lr / (1 + eps).
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1));
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        adam.step([("p", &mut p, &g)]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.01));
        let mut p = Tensor::scalar(0.0);
        let mut converged_at = None;
        for step in 1..=5000 {
            let g = Tensor::scalar(2.0 * (p.data()[0] - 3.0));
            adam.step([("p", &mut p, &g)]).unwrap();
            if (p.data()[0] - 3.0).abs() < 1e-3 {
                converged_at = Some(step);
                break;
            }
        }
        assert!(converged_at.is_some(), "final p = {}", p.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        assert!(adam.step([("p", &mut p, &g)]).is_err());
        assert_eq!(adam.steps(), 0);

        let g2 = Tensor::zeros(&[2]);
        adam.step([("p", &mut p, &g2)]).unwrap();
        let mut q = Tensor::zeros(&[4]);
        let g4 = Tensor::zeros(&[4]);
        assert!(adam.step([("p", &mut q, &g4)]).is_err());
    }
}
