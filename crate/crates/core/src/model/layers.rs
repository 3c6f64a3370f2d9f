use rand::Rng;

use crate::autograd::{Graph, ParamSet, Tensor, Var};

/// Convolution layer whose weights live in a [`ParamSet`].
#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub w: usize,
    pub b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    /// He-normal weights scaled by `gain`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let std = gain * (2.0 / fan_in).sqrt();
        let w = ps.push(format!("{name}.weight"), Tensor::randn([c_out, c_in, k, k], std, rng));
        let b = ps.push(format!("{name}.bias"), Tensor::zeros([c_out, 1, 1, 1]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Var {
        g.conv2d(x, p[self.w], Some(p[self.b]), self.stride, self.pad)
    }
}
