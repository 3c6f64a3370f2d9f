use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Conv;
use crate::autograd::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::imaging::SpectrogramImage;
use crate::matrix::Matrix;

/// Inputs within this distance of the pixel-range edges are pulled inward
/// before the inverse squash so the skip path stays finite.
const SKIP_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    /// Resolution levels including the bottleneck.
    pub depth: usize,
    pub residual_blocks_per_level: usize,
    pub long_skip: bool,
    pub value_range: (f64, f64),
    pub norm_eps: f64,
    /// Multiplier on the output projection's initial weights.
    pub head_init_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_width: 64,
            depth: 4,
            residual_blocks_per_level: 1,
            long_skip: true,
            value_range: (-1.0, 1.0),
            norm_eps: 1e-5,
            head_init_gain: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 {
            return Err(Error::InvalidParam("generator takes single-channel images".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidParam(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_width < 4 {
            return Err(Error::InvalidParam(format!(
                "base_width must be >= 4, got {}",
                self.base_width
            )));
        }
        if self.residual_blocks_per_level == 0 {
            return Err(Error::InvalidParam("need at least one residual block per level".into()));
        }
        if !self.long_skip {
            return Err(Error::InvalidParam("the long skip connection is always enabled".into()));
        }
        if !(self.value_range.0 < self.value_range.1) {
            return Err(Error::InvalidParam("value range must satisfy lo < hi".into()));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }
}

/// Pre-activation residual unit: `x ↦ conv(relu(norm(conv(relu(norm(x)))))) + shortcut(x)`.
/// A strided unit downsamples in its first convolution; the shortcut is a
/// 1×1 projection whenever the shape changes.
#[derive(Debug, Clone)]
struct ResUnit {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

impl ResUnit {
    fn new(ps: &mut ParamSet, name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv1 = Conv::new(ps, &format!("{name}.conv1"), c_in, c_out, 3, stride, 1, 1.0, rng);
        let conv2 = Conv::new(ps, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, 1.0, rng);
        let shortcut = (c_in != c_out || stride != 1)
            .then(|| Conv::new(ps, &format!("{name}.skip"), c_in, c_out, 1, stride, 0, 1.0, rng));
        Self {
            conv1,
            conv2,
            shortcut,
        }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, eps: f64) -> Var {
        let h = g.instance_norm(x, eps);
        let h = g.relu(h);
        let h = self.conv1.forward(g, p, h);
        let h = g.instance_norm(h, eps);
        let h = g.relu(h);
        let h = self.conv2.forward(g, p, h);
        let s = match &self.shortcut {
            Some(c) => c.forward(g, p, x),
            None => x,
        };
        g.add(h, s)
    }
}

/// Residual U-Net local enhancer with a long skip from input to output.
#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    stem: Conv,
    encoder: Vec<Vec<ResUnit>>,
    decoder: Vec<Vec<ResUnit>>,
    head: Conv,
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        let r = config.residual_blocks_per_level;
        let stem = Conv::new(&mut ps, "stem", config.in_channels, config.width(0), 3, 1, 1, 1.0, &mut rng);

        let mut encoder = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let w = config.width(level);
            let (c_in, stride) = if level == 0 { (w, 1) } else { (config.width(level - 1), 2) };
            let mut units = vec![ResUnit::new(&mut ps, &format!("enc{level}.0"), c_in, w, stride, &mut rng)];
            for i in 1..r {
                units.push(ResUnit::new(&mut ps, &format!("enc{level}.{i}"), w, w, 1, &mut rng));
            }
            encoder.push(units);
        }

        // decoder[l] produces level l from level l+1 plus the level-l skip
        let mut decoder = Vec::with_capacity(config.depth - 1);
        for level in 0..config.depth - 1 {
            let w = config.width(level);
            let c_in = config.width(level + 1) + w;
            let mut units = vec![ResUnit::new(&mut ps, &format!("dec{level}.0"), c_in, w, 1, &mut rng)];
            for i in 1..r {
                units.push(ResUnit::new(&mut ps, &format!("dec{level}.{i}"), w, w, 1, &mut rng));
            }
            decoder.push(units);
        }
        let head = Conv::new(
            &mut ps,
            "head",
            config.width(0),
            config.in_channels,
            1,
            1,
            0,
            config.head_init_gain,
            &mut rng,
        );
        Ok(Self {
            config,
            params: ps,
            stem,
            encoder,
            decoder,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Maps a pixel value to the pre-squash domain (inverse of [`Self::squash`]).
    fn unsquash(&self, v: f64) -> f64 {
        let (lo, hi) = self.config.value_range;
        let u = (2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0 + SKIP_MARGIN, 1.0 - SKIP_MARGIN);
        u.atanh()
    }

    fn squash(&self, g: &mut Graph, z: Var) -> Var {
        let (lo, hi) = self.config.value_range;
        let t = g.tanh(z);
        g.affine(t, 0.5 * (hi - lo), 0.5 * (hi + lo))
    }

    /// The residual branch `f(x)` before it joins the long skip.
    pub fn residual(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        let eps = self.config.norm_eps;
        let mut h = self.stem.forward(g, p, x);
        let mut skips = Vec::with_capacity(self.config.depth);
        for units in &self.encoder {
            for u in units {
                h = u.forward(g, p, h, eps);
            }
            skips.push(h);
        }
        for level in (0..self.config.depth - 1).rev() {
            let up = g.upsample_nearest2(h);
            h = g.concat_channels(up, skips[level]);
            for u in &self.decoder[level] {
                h = u.forward(g, p, h, eps);
            }
        }
        let h = g.instance_norm(h, eps);
        let h = g.relu(h);
        self.head.forward(g, p, h)
    }

    /// `squash(f(x) + skip(x))`, where the skip path inverts the squash so a
    /// zero residual reproduces the input.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        self.check_input(g.value(x).shape).expect("generator input shape");
        let xv = g.value(x);
        let skip = Tensor::from_vec(xv.shape, xv.data.iter().map(|&v| self.unsquash(v)).collect());
        let skip = g.constant(skip);
        let r = self.residual(g, p, x);
        let z = g.add(r, skip);
        self.squash(g, z)
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let m = self.config.size_multiple();
        if c != self.config.in_channels || h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "generator expects [N, {}, H, W] with H, W multiples of {m}; got {shape:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    /// Inference on a batch tensor.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape)?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv);
        Ok(g.value(y).clone())
    }
}

pub fn image_to_tensor(img: &SpectrogramImage) -> Tensor {
    let (h, w) = img.shape();
    Tensor::from_vec([1, 1, h, w], img.pixels.data.clone())
}

/// Run the generator on one coarse image; the result carries the input's
/// scaling metadata so it inverts back to a mel of the same shape.
pub fn generator_forward(g: &GeneratorNet, coarse: &SpectrogramImage) -> Result<SpectrogramImage> {
    let (h, w) = coarse.shape();
    if coarse.meta.value_range != g.config.value_range {
        return Err(Error::Shape(format!(
            "image value range {:?} differs from generator range {:?}",
            coarse.meta.value_range, g.config.value_range
        )));
    }
    let out = g.infer(&image_to_tensor(coarse))?;
    Ok(SpectrogramImage {
        pixels: Matrix::from_vec(h, w, out.data),
        meta: coarse.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            base_width: 4,
            depth: 2,
            ..Default::default()
        }
    }

    #[test]
    fn shape_preserved_and_bounded() {
        let g = GeneratorNet::new(
            GeneratorConfig {
                base_width: 4,
                depth: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn([2, 1, 16, 24], 5.0, &mut rng);
        let y = g.infer(&x).unwrap();
        assert_eq!(y.shape, x.shape);
        assert!(y.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(g.infer(&x).unwrap(), y);
    }

    #[test]
    fn zeroed_head_is_near_identity() {
        let mut g = GeneratorNet::new(tiny(), 3).unwrap();
        for name in ["head.weight", "head.bias"] {
            let i = g.params.index_of(name).unwrap();
            g.params.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_vec([1, 1, 8, 8], (0..64).map(|_| rng.gen_range(-0.95..0.95)).collect());
        let y = g.infer(&x).unwrap();
        for (a, b) in x.data.iter().zip(&y.data) {
            assert!((a - b).abs() < 1e-12);
        }
        // values at the range edges land within the skip margin
        let edge = Tensor::from_vec([1, 1, 8, 8], vec![-1.0; 64]);
        let y = g.infer(&edge).unwrap();
        assert!(y.data.iter().all(|v| (v + 1.0).abs() <= SKIP_MARGIN + 1e-12));
    }

    #[test]
    fn tiny_generator_is_small() {
        let g = GeneratorNet::new(tiny(), 0).unwrap();
        assert!(g.param_count() < 5000, "{}", g.param_count());
        let d = GeneratorNet::new(GeneratorConfig::default(), 0).unwrap();
        assert!(d.param_count() > 1_000_000);
    }

    #[test]
    fn bad_configs_and_shapes() {
        assert!(GeneratorNet::new(GeneratorConfig { depth: 1, ..tiny() }, 0).is_err());
        assert!(GeneratorNet::new(GeneratorConfig { base_width: 2, ..tiny() }, 0).is_err());
        assert!(GeneratorNet::new(GeneratorConfig { long_skip: false, ..tiny() }, 0).is_err());
        let g = GeneratorNet::new(tiny(), 0).unwrap();
        assert!(matches!(g.infer(&Tensor::zeros([1, 1, 7, 8])), Err(Error::Shape(_))));
        assert!(matches!(g.infer(&Tensor::zeros([1, 2, 8, 8])), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let a = GeneratorNet::new(tiny(), 9).unwrap();
        let b = GeneratorNet::new(tiny(), 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = GeneratorNet::new(tiny(), 10).unwrap();
        assert_ne!(a.params, c.params);
    }
}
