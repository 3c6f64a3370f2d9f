use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use crate::autograd::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    /// Conditioning image plus candidate image.
    pub in_channels: usize,
    pub base_width: usize,
    /// Stride-2 layers; each discriminator has `n_layers + 2` feature taps.
    pub n_layers: usize,
    pub scales: usize,
    pub leak: f64,
    pub norm_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            base_width: 64,
            n_layers: 3,
            scales: 4,
            leak: 0.2,
            norm_eps: 1e-5,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.n_layers == 0 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::InvalidParam(format!("degenerate discriminator config {self:?}")));
        }
        Ok(())
    }

    /// Feature taps per discriminator, including the logit map.
    pub fn taps(&self) -> usize {
        self.n_layers + 2
    }
}

#[derive(Debug, Clone)]
struct Layer {
    conv: Conv,
    norm: bool,
    act: bool,
}

/// One patch discriminator: 4×4 convolutions, stride 2 for the first
/// `n_layers`, then two stride-1 layers, the last emitting logits.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub params: ParamSet,
    layers: Vec<Layer>,
}

impl PatchDiscriminator {
    fn new(cfg: &DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Self {
        const K: usize = 4;
        const PAD: usize = 2;
        let mut ps = ParamSet::default();
        let mut layers = Vec::with_capacity(cfg.taps());
        let mut c = cfg.base_width;
        layers.push(Layer {
            conv: Conv::new(&mut ps, "l0", cfg.in_channels, c, K, 2, PAD, 1.0, rng),
            norm: false,
            act: true,
        });
        for i in 1..cfg.n_layers {
            let next = (c * 2).min(cfg.base_width * 8);
            layers.push(Layer {
                conv: Conv::new(&mut ps, &format!("l{i}"), c, next, K, 2, PAD, 1.0, rng),
                norm: true,
                act: true,
            });
            c = next;
        }
        let next = (c * 2).min(cfg.base_width * 8);
        layers.push(Layer {
            conv: Conv::new(&mut ps, &format!("l{}", cfg.n_layers), c, next, K, 1, PAD, 1.0, rng),
            norm: true,
            act: true,
        });
        layers.push(Layer {
            conv: Conv::new(&mut ps, &format!("l{}", cfg.n_layers + 1), next, 1, K, 1, PAD, 1.0, rng),
            norm: false,
            act: false,
        });
        Self { params: ps, layers }
    }

    /// Activations after every layer; the last entry is the logit map.
    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, cfg: &DiscriminatorConfig) -> Vec<Var> {
        let mut feats = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            h = l.conv.forward(g, p, h);
            if l.norm {
                h = g.instance_norm(h, cfg.norm_eps);
            }
            if l.act {
                h = g.leaky_relu(h, cfg.leak);
            }
            feats.push(h);
        }
        feats
    }
}

/// Output of one discriminator scale.
#[derive(Debug, Clone)]
pub struct ScaleOutput {
    /// All feature taps; the last one is the logit map.
    pub features: Vec<Var>,
    /// Scalar count per sample of each feature tensor.
    pub element_counts: Vec<usize>,
}

impl ScaleOutput {
    pub fn logits(&self) -> Var {
        *self.features.last().expect("at least one tap")
    }
}

/// Structurally identical discriminators, one per pyramid scale; scale `k`
/// sees the conditioning/candidate pair average-pooled `k` times.
#[derive(Debug, Clone)]
pub struct DiscriminatorBank {
    pub config: DiscriminatorConfig,
    pub scales: Vec<PatchDiscriminator>,
}

impl DiscriminatorBank {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales = (0..config.scales)
            .map(|_| PatchDiscriminator::new(&config, &mut rng))
            .collect();
        Ok(Self { config, scales })
    }

    pub fn param_count(&self) -> usize {
        self.scales.iter().map(|d| d.params.count()).sum()
    }

    /// Bind every scale's parameters into `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Vec<Var>> {
        self.scales.iter().map(|d| d.params.bind(g, trainable)).collect()
    }

    pub fn check_inputs(&self, a: [usize; 4], b: [usize; 4]) -> Result<()> {
        if a != b {
            return Err(Error::Shape(format!("conditioning {a:?} vs candidate {b:?}")));
        }
        let f = 1usize << (self.config.scales - 1);
        if a[2] % f != 0 || a[3] % f != 0 {
            return Err(Error::Shape(format!(
                "{}x{} is not divisible by {f} for {} scales",
                a[2], a[3], self.config.scales
            )));
        }
        if a[1] * 2 != self.config.in_channels {
            return Err(Error::Shape(format!(
                "pair has {} channels, discriminator expects {}",
                a[1] * 2,
                self.config.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, bound: &[Vec<Var>], cond: Var, candidate: Var) -> Vec<ScaleOutput> {
        self.check_inputs(g.value(cond).shape, g.value(candidate).shape)
            .expect("discriminator input shapes");
        let mut x = g.concat_channels(cond, candidate);
        let mut out = Vec::with_capacity(self.scales.len());
        for (k, d) in self.scales.iter().enumerate() {
            if k > 0 {
                x = g.avg_pool2(x);
            }
            let features = d.forward(g, &bound[k], x, &self.config);
            let element_counts = features.iter().map(|&f| g.value(f).item_len()).collect();
            out.push(ScaleOutput {
                features,
                element_counts,
            });
        }
        out
    }
}

/// Concrete per-scale results, detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleValues {
    pub logits: Tensor,
    pub features: Vec<Tensor>,
    pub element_counts: Vec<usize>,
}

pub fn discriminator_forward(bank: &DiscriminatorBank, cond: &Tensor, candidate: &Tensor) -> Result<Vec<ScaleValues>> {
    bank.check_inputs(cond.shape, candidate.shape)?;
    let mut g = Graph::new();
    let p = bank.bind(&mut g, false);
    let c = g.constant(cond.clone());
    let x = g.constant(candidate.clone());
    let outs = bank.forward(&mut g, &p, c, x);
    Ok(outs
        .into_iter()
        .map(|o| ScaleValues {
            logits: g.value(o.logits()).clone(),
            features: o.features.iter().map(|&f| g.value(f).clone()).collect(),
            element_counts: o.element_counts,
        })
        .collect())
}
