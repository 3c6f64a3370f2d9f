//! Numeric kernels behind the graph ops. Batch items are processed through
//! [`crate::par`], and per-item partial results are reduced in item order.

use super::Tensor;
use crate::par;

/// `C ← α·op(A)·op(B) + β·C` for row-major buffers, with transposes expressed
/// through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    // A is m×k (or k×m stored when transposed); B is k×n (or n×k).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly m·k, k·n and m·n elements
    // within the asserted slice lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "kernel larger than padded input");
        Self {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfold one item (`c_in × h × w`) into `(c_in·k·k) × (h_out·w_out)`.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    for c in 0..g.c_in {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back into an item.
fn col2im(cols_buf: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.cols();
    let mut x = vec![0.0; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let xc = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            xc[base + ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded 2-D convolution (cross-correlation). `w` is `[c_out, c_in, k, k]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let [n, c_in, h, wd] = x.shape;
    let [c_out, wc, k, k2] = w.shape;
    assert_eq!(wc, c_in, "conv input channels");
    assert_eq!(k, k2, "square kernels only");
    let g = ConvGeom::new(c_in, h, wd, k, stride, pad);
    let cols = g.cols();
    let items = par::map_range(n, |i| {
        let col = im2col(x.item(i), &g);
        let mut out = vec![0.0; c_out * cols];
        if let Some(b) = b {
            for (o, chunk) in out.chunks_mut(cols).enumerate() {
                chunk.fill(b.data[o]);
            }
        }
        gemm(c_out, g.rows(), cols, &w.data, false, &col, false, if b.is_some() { 1.0 } else { 0.0 }, &mut out);
        out
    });
    Tensor::from_vec([n, c_out, g.h_out, g.w_out], items.concat())
}

pub struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let [n, c_in, h, wd] = x.shape;
    let [c_out, _, k, _] = w.shape;
    let g = ConvGeom::new(c_in, h, wd, k, stride, pad);
    let cols = g.cols();
    let rows = g.rows();
    let items = par::map_range(n, |i| {
        let dyi = dy.item(i);
        let dw_i = need_dw.then(|| {
            let col = im2col(x.item(i), &g);
            let mut dw = vec![0.0; c_out * rows];
            gemm(c_out, cols, rows, dyi, false, &col, true, 0.0, &mut dw);
            dw
        });
        let dx_i = need_dx.then(|| {
            let mut dcol = vec![0.0; rows * cols];
            gemm(rows, c_out, cols, &w.data, true, dyi, false, 0.0, &mut dcol);
            col2im(&dcol, &g)
        });
        (dx_i, dw_i)
    });
    let mut dw = need_dw.then(|| Tensor::zeros(w.shape));
    let mut dx_data = need_dx.then(|| Vec::with_capacity(x.len()));
    for (dx_i, dw_i) in items {
        if let (Some(acc), Some(d)) = (dw.as_mut(), dw_i) {
            acc.data.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
        if let (Some(acc), Some(d)) = (dx_data.as_mut(), dx_i) {
            acc.extend(d);
        }
    }
    let db = need_db.then(|| {
        let mut db = Tensor::zeros([c_out, 1, 1, 1]);
        for i in 0..n {
            for (o, chunk) in dy.item(i).chunks(cols).enumerate() {
                db.data[o] += chunk.iter().sum::<f64>();
            }
        }
        db
    });
    ConvGrads {
        dx: dx_data.map(|d| Tensor::from_vec(x.shape, d)),
        dw,
        db,
    }
}

/// Separable valid filtering of every channel with `kernel ⊗ kernel`.
pub fn blur_valid_forward(x: &Tensor, kernel: &[f64]) -> Tensor {
    let [n, c, h, w] = x.shape;
    let k = kernel.len();
    assert!(h >= k && w >= k, "blur window larger than image");
    let (ho, wo) = (h - k + 1, w - k + 1);
    let planes = par::map_range(n * c, |p| {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let mut tmp = vec![0.0; h * wo];
        for r in 0..h {
            for j in 0..wo {
                tmp[r * wo + j] = (0..k).map(|b| kernel[b] * src[r * w + j + b]).sum();
            }
        }
        let mut out = vec![0.0; ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                out[i * wo + j] = (0..k).map(|a| kernel[a] * tmp[(i + a) * wo + j]).sum();
            }
        }
        out
    });
    Tensor::from_vec([n, c, ho, wo], planes.concat())
}

pub fn blur_valid_backward(x_shape: [usize; 4], kernel: &[f64], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let planes = par::map_range(n * c, |p| {
        let d = &dy.data[p * ho * wo..(p + 1) * ho * wo];
        let mut dtmp = vec![0.0; h * wo];
        for i in 0..ho {
            for j in 0..wo {
                let g = d[i * wo + j];
                for a in 0..k {
                    dtmp[(i + a) * wo + j] += kernel[a] * g;
                }
            }
        }
        let mut dx = vec![0.0; h * w];
        for r in 0..h {
            for j in 0..wo {
                let g = dtmp[r * wo + j];
                for b in 0..k {
                    dx[r * w + j + b] += kernel[b] * g;
                }
            }
        }
        dx
    });
    Tensor::from_vec(x_shape, planes.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, c_in, h, wd] = x.shape;
        let [c_out, _, k, _] = w.shape;
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros([n, c_out, ho, wo]);
        for i in 0..n {
            for o in 0..c_out {
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut s = b.data[o];
                        for c in 0..c_in {
                            for a in 0..k {
                                for bb in 0..k {
                                    let iy = (y * stride + a) as isize - pad as isize;
                                    let ix = (xx * stride + bb) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at(i, c, iy as usize, ix as usize) * w.at(o, c, a, bb);
                                    }
                                }
                            }
                        }
                        out.data[((i * c_out + o) * ho + y) * wo + xx] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 2), (1, 1, 0), (3, 2, 1)] {
            let x = Tensor::randn([2, 3, 9, 7], 1.0, &mut rng);
            let w = Tensor::randn([4, 3, k, k], 1.0, &mut rng);
            let b = Tensor::randn([4, 1, 1, 1], 1.0, &mut rng);
            let got = conv2d_forward(&x, &w, Some(&b), s, p);
            let want = naive_conv(&x, &w, &b, s, p);
            assert_eq!(got.shape, want.shape);
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), dy> = <x, conv_x^T(dy)> and likewise for w.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn([2, 2, 8, 8], 1.0, &mut rng);
        let w = Tensor::randn([3, 2, 4, 4], 1.0, &mut rng);
        let y = conv2d_forward(&x, &w, None, 2, 2);
        let dy = Tensor::randn(y.shape, 1.0, &mut rng);
        let g = conv2d_backward(&x, &w, &dy, 2, 2, true, true, true);
        let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&y, &dy);
        assert!((lhs - dot(&x, g.dx.as_ref().unwrap())).abs() < 1e-9);
        assert!((lhs - dot(&w, g.dw.as_ref().unwrap())).abs() < 1e-9);
        let total: f64 = dy.data.iter().sum();
        assert!((g.db.unwrap().data.iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn blur_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn([1, 2, 12, 10], 1.0, &mut rng);
        let k = [0.2, 0.5, 0.3];
        let y = blur_valid_forward(&x, &k);
        assert_eq!(y.shape, [1, 2, 10, 8]);
        let dy = Tensor::randn(y.shape, 1.0, &mut rng);
        let dx = blur_valid_backward(x.shape, &k, &dy);
        let dot = |a: &Tensor, b: &Tensor| a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>();
        assert!((dot(&y, &dy) - dot(&x, &dx)).abs() < 1e-10);
    }
}
