use super::kernels::{blur_valid_backward, blur_valid_forward, conv2d_backward, conv2d_forward};
use super::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    UpsampleNearest2(Var),
    AvgPool2(Var),
    /// Per-(item, channel) normalisation; caches `1/σ` per plane. The node's
    /// own value is `x̂`.
    InstanceNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    ConcatChannels(Var, Var),
    Mean(Var),
    Sum(Var),
    BlurValid {
        x: Var,
        kernel: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run computation tape.
///
/// Leaves are either trainable (gradients are produced for them) or
/// constants. Nodes whose inputs are all constant are themselves constant and
/// skipped on the backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed to it.
    pub fn take_or_zeros(&mut self, v: Var, like: [usize; 4]) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item_value()
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Conv2d { x, w, b, stride, pad }, ng)
    }

    pub fn upsample_nearest2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape;
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out.data[(p * 2 * h + y) * 2 * w + xx] = t.data[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::UpsampleNearest2(x), ng)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape;
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, ho, wo]);
        for p in 0..n * c {
            for y in 0..ho {
                for xx in 0..wo {
                    let i = (p * h + 2 * y) * w + 2 * xx;
                    out.data[(p * ho + y) * wo + xx] =
                        0.25 * (t.data[i] + t.data[i + 1] + t.data[i + w] + t.data[i + w + 1]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::AvgPool2(x), ng)
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape;
        let plane = h * w;
        let mut out = t.clone();
        let mut inv_std = Vec::with_capacity(n * c);
        for p in out.data.chunks_mut(plane) {
            let mean = p.iter().sum::<f64>() / plane as f64;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + eps).sqrt();
            p.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let ng = self.ng(x);
        self.push(out, Op::InstanceNorm { x, inv_std }, ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.map(x, |v| if v > 0.0 { v } else { slope * v });
        let ng = self.ng(x);
        self.push(out, Op::LeakyRelu { x, slope }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0) + (-v.abs()).exp().ln_1p());
        let ng = self.ng(x);
        self.push(out, Op::Softplus(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.map(x, f64::abs);
        let ng = self.ng(x);
        self.push(out, Op::Abs(x), ng)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v * v);
        let ng = self.ng(x);
        self.push(out, Op::Square(x), ng)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::from_vec(t.shape, t.data.iter().map(|&v| f(v)).collect())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "elementwise op shape mismatch");
        Tensor::from_vec(
            ta.shape,
            ta.data.iter().zip(&tb.data).map(|(&p, &q)| f(p, q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p + q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p - q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p * q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |p, q| p / q);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Div(a, b), ng)
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.map(x, |v| scale * v + shift);
        let ng = self.ng(x);
        self.push(out, Op::Affine { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, 1.0, k)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape;
        let [nb, cb, hb, wb] = tb.shape;
        assert_eq!((n, h, w), (nb, hb, wb), "concat shape mismatch");
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for i in 0..n {
            data.extend_from_slice(ta.item(i));
            data.extend_from_slice(tb.item(i));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatChannels(a, b), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data.iter().sum::<f64>() / t.len() as f64;
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Mean(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().sum::<f64>();
        let ng = self.ng(x);
        self.push(Tensor::scalar(v), Op::Sum(x), ng)
    }

    /// Valid (unpadded) separable filtering with `kernel ⊗ kernel`.
    pub fn blur_valid(&mut self, x: Var, kernel: &[f64]) -> Var {
        let out = blur_valid_forward(self.value(x), kernel);
        let ng = self.ng(x);
        self.push(
            out,
            Op::BlurValid {
                x,
                kernel: kernel.to_vec(),
            },
            ng,
        )
    }

    /// Reverse-mode sweep from scalar `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let contribs = self.local_grads(node, &gy);
            for (v, g) in contribs {
                if !self.ng(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(gy);
        }
        Grads { grads }
    }

    fn local_grads(&self, node: &Node, gy: &Tensor) -> Vec<(Var, Tensor)> {
        let y = &node.value;
        let like = |v: Var, f: &dyn Fn(usize) -> f64| -> Tensor {
            let t = self.value(v);
            Tensor::from_vec(t.shape, (0..t.len()).map(f).collect())
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, stride, pad } => {
                let g = conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    *stride,
                    *pad,
                    self.ng(*x),
                    self.ng(*w),
                    b.is_some_and(|b| self.ng(b)),
                );
                let mut out = vec![];
                if let Some(dx) = g.dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = g.dw {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    let shape = self.value(*b).shape;
                    out.push((*b, Tensor::from_vec(shape, db.data)));
                }
                out
            }
            Op::UpsampleNearest2(x) => {
                let [n, c, h, w] = self.value(*x).shape;
                let mut dx = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dx.data[(p * h + yy / 2) * w + xx / 2] += gy.data[(p * 2 * h + yy) * 2 * w + xx];
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::AvgPool2(x) => {
                let [n, c, h, w] = self.value(*x).shape;
                let (ho, wo) = (h / 2, w / 2);
                let mut dx = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    for yy in 0..ho {
                        for xx in 0..wo {
                            let g = 0.25 * gy.data[(p * ho + yy) * wo + xx];
                            let i = (p * h + 2 * yy) * w + 2 * xx;
                            dx.data[i] += g;
                            dx.data[i + 1] += g;
                            dx.data[i + w] += g;
                            dx.data[i + w + 1] += g;
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::InstanceNorm { x, inv_std } => {
                let [_, _, h, w] = y.shape;
                let plane = h * w;
                let m = plane as f64;
                let mut dx = Tensor::zeros(y.shape);
                for (p, is) in inv_std.iter().enumerate() {
                    let r = p * plane..(p + 1) * plane;
                    let xh = &y.data[r.clone()];
                    let g = &gy.data[r.clone()];
                    let sg: f64 = g.iter().sum();
                    let sgx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
                    for (k, d) in dx.data[r].iter_mut().enumerate() {
                        *d = is / m * (m * g[k] - sg - xh[k] * sgx);
                    }
                }
                vec![(*x, dx)]
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                vec![(*x, like(*x, &|i| if xv.data[i] > 0.0 { gy.data[i] } else { slope * gy.data[i] }))]
            }
            Op::Tanh(x) => vec![(*x, like(*x, &|i| gy.data[i] * (1.0 - y.data[i] * y.data[i])))],
            Op::Softplus(x) => {
                let xv = self.value(*x);
                vec![(*x, like(*x, &|i| gy.data[i] / (1.0 + (-xv.data[i]).exp())))]
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                vec![(*x, like(*x, &|i| gy.data[i] * sign(xv.data[i])))]
            }
            Op::Square(x) => {
                let xv = self.value(*x);
                vec![(*x, like(*x, &|i| 2.0 * xv.data[i] * gy.data[i]))]
            }
            Op::Add(a, b) => vec![(*a, gy.clone()), (*b, gy.clone())],
            Op::Sub(a, b) => vec![(*a, gy.clone()), (*b, like(*b, &|i| -gy.data[i]))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                vec![
                    (*a, like(*a, &|i| gy.data[i] * vb.data[i])),
                    (*b, like(*b, &|i| gy.data[i] * va.data[i])),
                ]
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                vec![
                    (*a, like(*a, &|i| gy.data[i] / vb.data[i])),
                    (*b, like(*b, &|i| -gy.data[i] * y.data[i] / vb.data[i])),
                ]
            }
            Op::Affine { x, scale } => vec![(*x, like(*x, &|i| gy.data[i] * scale))],
            Op::ConcatChannels(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (la, lb) = (ta.item_len(), tb.item_len());
                let mut da = Vec::with_capacity(ta.len());
                let mut db = Vec::with_capacity(tb.len());
                for item in gy.data.chunks(la + lb) {
                    da.extend_from_slice(&item[..la]);
                    db.extend_from_slice(&item[la..]);
                }
                vec![
                    (*a, Tensor::from_vec(ta.shape, da)),
                    (*b, Tensor::from_vec(tb.shape, db)),
                ]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let g = gy.item_value() / n;
                vec![(*x, like(*x, &|_| g))]
            }
            Op::Sum(x) => {
                let g = gy.item_value();
                vec![(*x, like(*x, &|_| g))]
            }
            Op::BlurValid { x, kernel } => {
                vec![(*x, blur_valid_backward(self.value(*x).shape, kernel, gy))]
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(build(x))/dx for a scalar-valued builder.
    fn check(shape: [usize; 4], seed: u64, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = Tensor::randn(shape, 1.0, &mut rng);
        let eval = |t: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(t.clone());
            let y = build(&mut g, x);
            g.scalar(y)
        };
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let y = build(&mut g, x);
        let grads = g.backward(y);
        let analytic = grads.get(x).expect("gradient").clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut p = x0.clone();
            p.data[i] += h;
            let mut m = x0.clone();
            m.data[i] -= h;
            let fd = (eval(&p) - eval(&m)) / (2.0 * h);
            let a = analytic.data[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs().max(a.abs())),
                "elem {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::randn(g.value(y).shape, 1.0, &mut rng);
        let wv = g.constant(w);
        let p = g.mul(y, wv);
        g.sum(p)
    }

    #[test]
    fn grad_conv_strided() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::randn([3, 2, 4, 4], 0.5, &mut rng);
        let b = Tensor::randn([3, 1, 1, 1], 0.5, &mut rng);
        check([2, 2, 6, 6], 2, |g, x| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let y = g.conv2d(x, wv, Some(bv), 2, 2);
            weighted_sum(g, y, 9)
        });
    }

    #[test]
    fn grad_conv_wrt_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn([2, 2, 5, 5], 1.0, &mut rng);
        check([4, 2, 3, 3], 4, |g, w| {
            let xv = g.constant(x.clone());
            let y = g.conv2d(xv, w, None, 1, 1);
            weighted_sum(g, y, 10)
        });
    }

    #[test]
    fn grad_instance_norm_and_activations() {
        check([2, 3, 4, 4], 5, |g, x| {
            let y = g.instance_norm(x, 1e-5);
            let y = g.leaky_relu(y, 0.2);
            let y = g.tanh(y);
            weighted_sum(g, y, 11)
        });
    }

    #[test]
    fn grad_pool_upsample_concat() {
        check([1, 2, 4, 6], 6, |g, x| {
            let p = g.avg_pool2(x);
            let u = g.upsample_nearest2(p);
            let c = g.concat_channels(u, x);
            weighted_sum(g, c, 12)
        });
    }

    #[test]
    fn grad_elementwise_and_reductions() {
        check([1, 1, 3, 5], 7, |g, x| {
            let s = g.square(x);
            let d = g.add_scalar(s, 1.5);
            let q = g.div(x, d);
            let sp = g.softplus(q);
            let m = g.mul(sp, x);
            let a = g.sub(m, q);
            let y = g.affine(a, -0.7, 0.3);
            let ab = g.abs(y);
            g.mean(ab)
        });
    }

    #[test]
    fn grad_blur() {
        check([1, 2, 7, 8], 8, |g, x| {
            let y = g.blur_valid(x, &[0.25, 0.5, 0.25]);
            let y2 = g.square(y);
            g.sum(y2)
        });
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.param(Tensor::scalar(3.0));
        let c = g.mul(a, b);
        let grads = g.backward(c);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(b).unwrap().item_value(), 2.0);
    }

    #[test]
    fn reused_nodes_accumulate() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        let z = g.add(y, x);
        let grads = g.backward(z);
        assert_eq!(grads.get(x).unwrap().item_value(), 7.0);
    }
}
