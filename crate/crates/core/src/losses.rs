//! Training objectives.
//!
//! Each loss has a graph form (used by the trainer, differentiable) and a
//! value form taking plain tensors. The value forms build a throwaway graph
//! from constants, so both share one implementation.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialForm {
    /// `(D(s,x) − 1)²` / `D(s,G(s))²`.
    #[default]
    LeastSquares,
    /// Binary cross-entropy on logits; non-saturating generator term.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub fm_weight: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
    pub adversarial: AdversarialForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::for_range_width(2.0)
    }
}

impl LossWeights {
    /// Defaults with the SSIM constants derived from a pixel range of width `l`.
    pub fn for_range_width(l: f64) -> Self {
        Self {
            alpha: 0.5,
            fm_weight: 10.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_c1: (0.01 * l).powi(2),
            ssim_c2: (0.03 * l).powi(2),
            adversarial: AdversarialForm::LeastSquares,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParam(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.fm_weight >= 0.0 && self.fm_weight.is_finite()) {
            return Err(Error::InvalidParam(format!("fm_weight {} must be >= 0", self.fm_weight)));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidParam(format!(
                "ssim_window {} must be odd and >= 3",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0 && self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidParam("ssim sigma and constants must be positive".into()));
        }
        Ok(())
    }

    /// Normalised 1-D Gaussian taps.
    pub fn ssim_kernel(&self) -> Vec<f64> {
        gaussian_window(self.ssim_window, self.ssim_sigma)
    }
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Per-batch loss scalars. `ssim` holds the SSIM loss `1 − mean SSIM`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g: f64,
    pub adv_d: f64,
    pub fm: f64,
    pub ssim: f64,
    pub mse: f64,
    pub total_g: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("adv_g", self.adv_g),
            ("adv_d", self.adv_d),
            ("fm", self.fm),
            ("ssim", self.ssim),
            ("mse", self.mse),
            ("total_g", self.total_g),
        ]
    }

    /// First non-finite term, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.terms().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite { term: name.to_string() }),
            None => Ok(()),
        }
    }
}

/// `α(adv_g + fm_weight·fm) + (1 − α)(ssim + mse)`.
pub fn combine(adv_g: f64, fm: f64, ssim: f64, mse: f64, w: &LossWeights) -> f64 {
    w.alpha * (adv_g + w.fm_weight * fm) + (1.0 - w.alpha) * (ssim + mse)
}

/// Build a full report from the individual terms.
pub fn total_generator_loss(adv_g: f64, adv_d: f64, fm: f64, ssim: f64, mse: f64, w: &LossWeights) -> LossReport {
    LossReport {
        adv_g,
        adv_d,
        fm,
        ssim,
        mse,
        total_g: combine(adv_g, fm, ssim, mse, w),
    }
}

fn check_scales(real: usize, fake: usize) -> Result<()> {
    if real != fake {
        return Err(Error::Shape(format!("{real} real scales vs {fake} fake scales")));
    }
    if real == 0 {
        return Err(Error::EmptyInput("discriminator scales"));
    }
    Ok(())
}

/// Generator adversarial term summed over scales.
pub fn adv_g_graph(g: &mut Graph, fake: &[Var], form: AdversarialForm) -> Var {
    let mut acc: Option<Var> = None;
    for &f in fake {
        let t = match form {
            AdversarialForm::LeastSquares => {
                let d = g.add_scalar(f, -1.0);
                g.square(d)
            }
            AdversarialForm::Log => {
                let n = g.scale(f, -1.0);
                g.softplus(n)
            }
        };
        let m = g.mean(t);
        acc = Some(match acc {
            Some(a) => g.add(a, m),
            None => m,
        });
    }
    acc.expect("at least one scale")
}

/// Discriminator term summed over scales.
pub fn adv_d_graph(g: &mut Graph, real: &[Var], fake: &[Var], form: AdversarialForm) -> Var {
    let mut acc: Option<Var> = None;
    for (&r, &f) in real.iter().zip(fake) {
        let (tr, tf) = match form {
            AdversarialForm::LeastSquares => {
                let d = g.add_scalar(r, -1.0);
                (g.square(d), g.square(f))
            }
            AdversarialForm::Log => {
                let n = g.scale(r, -1.0);
                (g.softplus(n), g.softplus(f))
            }
        };
        let (mr, mf) = (g.mean(tr), g.mean(tf));
        let s = g.add(mr, mf);
        let h = g.scale(s, 0.5);
        acc = Some(match acc {
            Some(a) => g.add(a, h),
            None => h,
        });
    }
    acc.expect("at least one scale")
}

/// Σ over scales and layers of the per-layer mean absolute difference.
pub fn feature_matching_graph(g: &mut Graph, real: &[Vec<Var>], fake: &[Vec<Var>]) -> Result<Var> {
    check_scales(real.len(), fake.len())?;
    let mut acc: Option<Var> = None;
    for (k, (rs, fs)) in real.iter().zip(fake).enumerate() {
        if rs.len() != fs.len() || rs.is_empty() {
            return Err(Error::Shape(format!(
                "scale {k}: {} real layers vs {} fake layers",
                rs.len(),
                fs.len()
            )));
        }
        for (i, (&r, &f)) in rs.iter().zip(fs).enumerate() {
            if g.value(r).shape != g.value(f).shape {
                return Err(Error::Shape(format!(
                    "scale {k} layer {i}: {:?} vs {:?}",
                    g.value(r).shape,
                    g.value(f).shape
                )));
            }
            let d = g.sub(r, f);
            let a = g.abs(d);
            let m = g.mean(a);
            acc = Some(match acc {
                Some(x) => g.add(x, m),
                None => m,
            });
        }
    }
    Ok(acc.expect("nonempty"))
}

fn check_pair(g: &Graph, x: Var, y: Var, w: &LossWeights) -> Result<()> {
    let (a, b) = (g.value(x).shape, g.value(y).shape);
    if a != b {
        return Err(Error::Shape(format!("{a:?} vs {b:?}")));
    }
    if a[2] < w.ssim_window || a[3] < w.ssim_window {
        return Err(Error::Shape(format!(
            "SSIM window {} larger than {}x{} image",
            w.ssim_window, a[2], a[3]
        )));
    }
    Ok(())
}

/// Per-pixel SSIM over the valid region (each side shrinks by `window − 1`).
pub fn ssim_map_graph(g: &mut Graph, x: Var, y: Var, w: &LossWeights) -> Result<Var> {
    check_pair(g, x, y, w)?;
    let k = w.ssim_kernel();
    let mx = g.blur_valid(x, &k);
    let my = g.blur_valid(y, &k);
    let xx = g.mul(x, x);
    let yy = g.mul(y, y);
    let xy = g.mul(x, y);
    let exx = g.blur_valid(xx, &k);
    let eyy = g.blur_valid(yy, &k);
    let exy = g.blur_valid(xy, &k);
    let mx2 = g.mul(mx, mx);
    let my2 = g.mul(my, my);
    let mxy = g.mul(mx, my);
    let sxx = g.sub(exx, mx2);
    let syy = g.sub(eyy, my2);
    let sxy = g.sub(exy, mxy);

    let l_num = g.affine(mxy, 2.0, w.ssim_c1);
    let c_num = g.affine(sxy, 2.0, w.ssim_c2);
    let num = g.mul(l_num, c_num);
    let m_sum = g.add(mx2, my2);
    let l_den = g.add_scalar(m_sum, w.ssim_c1);
    let s_sum = g.add(sxx, syy);
    let c_den = g.add_scalar(s_sum, w.ssim_c2);
    let den = g.mul(l_den, c_den);
    Ok(g.div(num, den))
}

pub fn ssim_loss_graph(g: &mut Graph, x: Var, y: Var, w: &LossWeights) -> Result<Var> {
    let m = ssim_map_graph(g, x, y, w)?;
    let mean = g.mean(m);
    Ok(g.affine(mean, -1.0, 1.0))
}

pub fn mse_graph(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let (a, b) = (g.value(x).shape, g.value(y).shape);
    if a != b {
        return Err(Error::Shape(format!("{a:?} vs {b:?}")));
    }
    let d = g.sub(x, y);
    let s = g.square(d);
    Ok(g.mean(s))
}

fn constants(g: &mut Graph, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| g.constant(t.clone())).collect()
}

/// `(g_term, d_term)` from per-scale logit maps.
pub fn adversarial_loss(real: &[Tensor], fake: &[Tensor], form: AdversarialForm) -> Result<(f64, f64)> {
    check_scales(real.len(), fake.len())?;
    for (k, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.shape != f.shape {
            return Err(Error::Shape(format!("scale {k}: {:?} vs {:?}", r.shape, f.shape)));
        }
    }
    let mut g = Graph::new();
    let r = constants(&mut g, real);
    let f = constants(&mut g, fake);
    let gt = adv_g_graph(&mut g, &f, form);
    let dt = adv_d_graph(&mut g, &r, &f, form);
    Ok((g.scalar(gt), g.scalar(dt)))
}

pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<f64> {
    let mut g = Graph::new();
    let r: Vec<Vec<Var>> = real.iter().map(|s| constants(&mut g, s)).collect();
    let f: Vec<Vec<Var>> = fake.iter().map(|s| constants(&mut g, s)).collect();
    let v = feature_matching_graph(&mut g, &r, &f)?;
    Ok(g.scalar(v))
}

pub fn ssim_map(x: &Tensor, y: &Tensor, w: &LossWeights) -> Result<Tensor> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let m = ssim_map_graph(&mut g, a, b, w)?;
    Ok(g.value(m).clone())
}

pub fn ssim_mean(x: &Tensor, y: &Tensor, w: &LossWeights) -> Result<f64> {
    let m = ssim_map(x, y, w)?;
    Ok(m.data.iter().sum::<f64>() / m.len() as f64)
}

pub fn ssim_loss(x: &Tensor, y: &Tensor, w: &LossWeights) -> Result<f64> {
    Ok(1.0 - ssim_mean(x, y, w)?)
}

pub fn mse_loss(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    let m = mse_graph(&mut g, a, b)?;
    Ok(g.scalar(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 0.5, &mut rng)
    }

    #[test]
    fn adversarial_optima() {
        let ones: Vec<Tensor> = (0..4).map(|_| Tensor::filled([2, 1, 3, 3], 1.0)).collect();
        let zeros: Vec<Tensor> = (0..4).map(|_| Tensor::zeros([2, 1, 3, 3])).collect();
        let (g_term, _) = adversarial_loss(&ones, &ones, AdversarialForm::LeastSquares).unwrap();
        assert_eq!(g_term, 0.0);
        let (_, d_term) = adversarial_loss(&ones, &zeros, AdversarialForm::LeastSquares).unwrap();
        assert_eq!(d_term, 0.0);
        assert!(adversarial_loss(&ones[..3], &ones, AdversarialForm::LeastSquares).is_err());
    }

    #[test]
    fn log_form_matches_cross_entropy() {
        let r = vec![Tensor::from_vec([1, 1, 1, 2], vec![0.3, -1.2])];
        let f = vec![Tensor::from_vec([1, 1, 1, 2], vec![2.0, -0.5])];
        let (gt, dt) = adversarial_loss(&r, &f, AdversarialForm::Log).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let g_ref = -(sig(2.0).ln() + sig(-0.5).ln()) / 2.0;
        let d_ref = 0.5
            * (-(sig(0.3).ln() + sig(-1.2).ln()) / 2.0 - ((1.0 - sig(2.0)).ln() + (1.0 - sig(-0.5)).ln()) / 2.0);
        assert!((gt - g_ref).abs() < 1e-12);
        assert!((dt - d_ref).abs() < 1e-12);
    }

    #[test]
    fn feature_matching_offset_counts_layers() {
        let real: Vec<Vec<Tensor>> = (0..4)
            .map(|k| (0..5).map(|i| rand_t([2, 3, 4 + i, 4], k * 10 + i as u64)).collect())
            .collect();
        let fake: Vec<Vec<Tensor>> = real
            .iter()
            .map(|s| {
                s.iter()
                    .map(|t| Tensor::from_vec(t.shape, t.data.iter().map(|v| v + 1.0).collect()))
                    .collect()
            })
            .collect();
        assert_eq!(feature_matching_loss(&real, &real).unwrap(), 0.0);
        assert!((feature_matching_loss(&real, &fake).unwrap() - 20.0).abs() < 1e-12);
        let mut short = fake.clone();
        short[1].pop();
        assert!(feature_matching_loss(&real, &short).is_err());
    }

    #[test]
    fn ssim_identity_symmetry_and_anticorrelation() {
        let w = LossWeights::default();
        let x = rand_t([1, 1, 16, 16], 1);
        let y = rand_t([1, 1, 16, 16], 2);
        assert!((ssim_mean(&x, &x, &w).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim_loss(&x, &x, &w).unwrap().abs() < 1e-12, true);
        let a = ssim_mean(&x, &y, &w).unwrap();
        let b = ssim_mean(&y, &x, &w).unwrap();
        assert!((a - b).abs() < 1e-12);
        // pixels in [0, 1] against the intensity-inverted image
        let pos = Tensor::from_vec(x.shape, x.data.iter().map(|v| v.abs().min(1.0)).collect());
        let inv = Tensor::from_vec(x.shape, pos.data.iter().map(|v| 1.0 - v).collect());
        assert!(ssim_mean(&pos, &inv, &w).unwrap() < 0.2);
        let l = ssim_loss(&x, &y, &w).unwrap();
        assert!((0.0..2.0).contains(&l));
        let small = rand_t([1, 1, 8, 8], 3);
        assert!(ssim_map(&small, &small, &w).is_err());
    }

    #[test]
    fn mse_simple_cases() {
        let x = rand_t([1, 1, 5, 5], 4);
        let y = Tensor::from_vec(x.shape, x.data.iter().map(|v| v + 0.3).collect());
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        assert!((mse_loss(&x, &y).unwrap() - 0.09).abs() < 1e-12);
        assert!((mse_loss(&y, &x).unwrap() - mse_loss(&x, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn combination_endpoints() {
        let mut w = LossWeights {
            fm_weight: 1.0,
            ..Default::default()
        };
        assert_eq!(total_generator_loss(1.0, 1.0, 1.0, 1.0, 1.0, &w).total_g, 2.0);
        w.alpha = 0.0;
        assert_eq!(combine(3.0, 5.0, 0.25, 0.5, &w), 0.75);
        w.alpha = 1.0;
        assert_eq!(combine(3.0, 5.0, 0.25, 0.5, &w), 8.0);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = [
            LossWeights {
                alpha: 1.5,
                ..Default::default()
            },
            LossWeights {
                ssim_window: 4,
                ..Default::default()
            },
            LossWeights {
                ssim_c1: 0.0,
                ..Default::default()
            },
            LossWeights {
                fm_weight: -1.0,
                ..Default::default()
            },
        ];
        for b in bad {
            assert!(b.validate().is_err(), "{b:?}");
        }
        let k = LossWeights::default().ssim_kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((LossWeights::default().ssim_c1 - 4e-4).abs() < 1e-18);
    }

    #[test]
    fn report_names_offending_term() {
        let r = LossReport {
            fm: f64::NAN,
            ..Default::default()
        };
        match r.check_finite() {
            Err(Error::NonFinite { term }) => assert_eq!(term, "fm"),
            other => panic!("{other:?}"),
        }
    }
}
