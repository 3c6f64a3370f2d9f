use serde::{Deserialize, Serialize};

use super::{Grads, Graph, Tensor, Var};

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copy every tensor into `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    /// Gradients for bound parameters, zero where nothing flowed.
    pub fn collect_grads(&self, grads: &mut Grads, bound: &[Var]) -> Vec<Tensor> {
        bound
            .iter()
            .zip(&self.tensors)
            .map(|(&v, t)| grads.take_or_zeros(v, t.shape))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params(p: &ParamSet) -> Self {
        Self {
            step: 0,
            m: p.tensors.iter().map(|t| Tensor::zeros(t.shape)).collect(),
            v: p.tensors.iter().map(|t| Tensor::zeros(t.shape)).collect(),
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            state: AdamState::for_params(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.tensors[i].data;
            let m = &mut self.state.m[i].data;
            let v = &mut self.state.v[i].data;
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g.data[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g.data[k] * g.data[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
