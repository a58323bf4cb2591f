//! Matting and adversarial objectives.
//!
//! Each loss exists twice: a plain `f64` evaluation on rasters, and a
//! batched graph version over `[n, c, h, w]` tensors used for training.
//! Both restrict the matting terms to the trimap's unknown region and
//! average per sample before averaging over the batch.

use serde::{Deserialize, Serialize};

use crate::datapipe::{self, TrainingSample};
use crate::error::{Error, Result};
use crate::imgcore::{AlphaMatte, RegionMask};
use crate::tensor::ops;
use crate::tensor::{Scalar, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_EPS_LOG: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub comp: f64,
    pub gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            comp: 1.0,
            gan: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Charbonnier smoothing constant.
    pub eps: f64,
    /// Probabilities are clamped to `[eps_log, 1 - eps_log]` before logs.
    pub eps_log: f64,
    pub weights: LossWeights,
    /// Generator minimizes `log(1 - D(fake))` instead of `-log D(fake)`.
    pub saturating: bool,
    /// Apply the adversarial log to every patch score rather than to the
    /// per-sample mean score.
    pub per_patch: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            eps: DEFAULT_EPS,
            eps_log: DEFAULT_EPS_LOG,
            weights: LossWeights::default(),
            saturating: false,
            per_patch: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("loss eps must be > 0, got {}", self.eps)));
        }
        if !(self.eps_log > 0.0 && self.eps_log < 0.5) {
            return Err(Error::Config(format!("eps_log must be in (0, 0.5), got {}", self.eps_log)));
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_alpha: f64,
    pub l_comp: f64,
    pub l_gan_g: f64,
    pub l_gan_d: f64,
    pub total_g: f64,
}

fn charbonnier(d: f64, eps: f64) -> f64 {
    (d * d + eps * eps).sqrt()
}

fn check_region(pred: &AlphaMatte, gt_dims: (usize, usize), unknown: &RegionMask) -> Result<()> {
    if pred.dims() != gt_dims || unknown.dims() != gt_dims {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?}, ground truth {gt_dims:?}, region {:?}",
            pred.dims(),
            unknown.dims()
        )));
    }
    if unknown.is_empty() {
        return Err(Error::EmptyUnknown);
    }
    Ok(())
}

/// Mean Charbonnier distance between mattes over the unknown region.
pub fn alpha_prediction_loss(pred: &AlphaMatte, gt: &AlphaMatte, unknown: &RegionMask, eps: f64) -> Result<f64> {
    check_region(pred, gt.dims(), unknown)?;
    let sum: f64 = unknown
        .bits()
        .iter()
        .zip(pred.data().iter().zip(gt.data()))
        .filter(|(&u, _)| u)
        .map(|(_, (&p, &g))| charbonnier(p as f64 - g as f64, eps))
        .sum();
    Ok(sum / unknown.count() as f64)
}

/// Mean Charbonnier distance between the sample's composite and the one
/// rebuilt from `pred`, over unknown pixels and all three channels.
pub fn composition_loss(pred: &AlphaMatte, sample: &TrainingSample, unknown: &RegionMask, eps: f64) -> Result<f64> {
    check_region(pred, sample.dims(), unknown)?;
    let rebuilt = datapipe::composite(&sample.foreground, &sample.background, pred)?;
    let mut sum = 0.0;
    for c in 0..3 {
        let (p, target) = (rebuilt.plane(c), sample.composite.plane(c));
        for (i, _) in unknown.bits().iter().enumerate().filter(|(_, &u)| u) {
            sum += charbonnier(p[i] as f64 - target[i] as f64, eps);
        }
    }
    Ok(sum / (3 * unknown.count()) as f64)
}

fn clamp_prob(p: f64, eps_log: f64) -> f64 {
    p.clamp(eps_log, 1.0 - eps_log)
}

/// Discriminator loss: the negated log-likelihood of classifying real as
/// real and fake as fake.
pub fn gan_loss_d(d_real: f64, d_fake: f64, eps_log: f64) -> f64 {
    -(clamp_prob(d_real, eps_log).ln() + (1.0 - clamp_prob(d_fake, eps_log)).ln())
}

/// Generator adversarial term.
pub fn gan_loss_g(d_fake: f64, eps_log: f64, saturating: bool) -> f64 {
    let p = clamp_prob(d_fake, eps_log);
    if saturating {
        (1.0 - p).ln()
    } else {
        -p.ln()
    }
}

/// Combine the generator terms with the configured weights.
pub fn total_generator_loss(l_alpha: f64, l_comp: f64, l_gan_g: f64, l_gan_d: f64, weights: &LossWeights) -> LossReport {
    LossReport {
        l_alpha,
        l_comp,
        l_gan_g,
        l_gan_d,
        total_g: weights.alpha * l_alpha + weights.comp * l_comp + weights.gan * l_gan_g,
    }
}

/// Batched Charbonnier loss restricted to `mask` (`[n, 1, h, w]`, 0/1).
/// `pred` and `target` are `[n, c, h, w]`; each sample's value is the mean
/// over its masked pixels and channels, and the result is the batch mean.
pub fn masked_charbonnier<T: Scalar>(
    pred: &Var<T>,
    target: &Tensor<T>,
    mask: &Tensor<T>,
    eps: f64,
) -> Result<Var<T>> {
    if pred.shape() != target.shape() || pred.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "charbonnier: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, c, h, w) = pred.value().dims4();
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!("charbonnier: mask {:?}", mask.shape())));
    }
    let p = h * w;
    let md = mask.data();
    let counts: Vec<f64> = (0..n)
        .map(|i| md[i * p..(i + 1) * p].iter().filter(|&&m| m > T::zero()).count() as f64)
        .collect();
    if counts.iter().any(|&k| k == 0.0) {
        return Err(Error::EmptyUnknown);
    }
    let (pd, td) = (pred.value().data(), target.data());
    let eps2 = eps * eps;
    let mut total = 0.0;
    let mut grad = vec![T::zero(); pd.len()];
    for i in 0..n {
        let scale = 1.0 / (counts[i] * c as f64 * n as f64);
        for ch in 0..c {
            let base = (i * c + ch) * p;
            for j in 0..p {
                if md[i * p + j] <= T::zero() {
                    continue;
                }
                let d = pd[base + j].as_f64() - td[base + j].as_f64();
                let r = (d * d + eps2).sqrt();
                total += r * scale;
                grad[base + j] = T::lit(d / r * scale);
            }
        }
    }
    let shape = pred.shape().to_vec();
    Ok(Var::from_op(Tensor::scalar(T::lit(total)), &[pred], move |g| {
        let s = g.item();
        let d = grad.iter().map(|&v| v * s).collect();
        vec![Some(Tensor::new(shape.clone(), d).expect("grad shape"))]
    }))
}

pub fn alpha_loss_var<T: Scalar>(pred: &Var<T>, gt: &Tensor<T>, mask: &Tensor<T>, eps: f64) -> Result<Var<T>> {
    masked_charbonnier(pred, gt, mask, eps)
}

/// `fg`, `bg` and `composite` are `[n, 3, h, w]`.
pub fn composition_loss_var<T: Scalar>(
    pred: &Var<T>,
    fg: &Tensor<T>,
    bg: &Tensor<T>,
    composite: &Tensor<T>,
    mask: &Tensor<T>,
    eps: f64,
) -> Result<Var<T>> {
    let rebuilt = ops::blend(pred, fg, bg)?;
    masked_charbonnier(&rebuilt, composite, mask, eps)
}

/// Mean over all elements of `f(clamp(x))`, where `df` is the derivative of
/// `f`; clamped elements get zero gradient.
fn mean_of_clamped<T: Scalar>(x: &Var<T>, eps_log: f64, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var<T> {
    let count = x.value().numel() as f64;
    let xs: Vec<f64> = x.value().data().iter().map(|v| v.as_f64()).collect();
    let total: f64 = xs.iter().map(|&v| f(clamp_prob(v, eps_log))).sum::<f64>() / count;
    let shape = x.shape().to_vec();
    Var::from_op(Tensor::scalar(T::lit(total)), &[x], move |g| {
        let s = g.item().as_f64() / count;
        let d = xs
            .iter()
            .map(|&v| {
                if v < eps_log || v > 1.0 - eps_log {
                    T::zero()
                } else {
                    T::lit(df(v) * s)
                }
            })
            .collect();
        vec![Some(Tensor::new(shape.clone(), d).expect("grad shape"))]
    })
}

fn neg_log(p: f64) -> f64 {
    -p.ln()
}
fn d_neg_log(p: f64) -> f64 {
    -1.0 / p
}
fn neg_log1m(p: f64) -> f64 {
    -(1.0 - p).ln()
}
fn d_neg_log1m(p: f64) -> f64 {
    1.0 / (1.0 - p)
}
fn log1m(p: f64) -> f64 {
    (1.0 - p).ln()
}
fn d_log1m(p: f64) -> f64 {
    -1.0 / (1.0 - p)
}

/// Batched discriminator loss over scores of any (matching) shape.
pub fn gan_loss_d_var<T: Scalar>(d_real: &Var<T>, d_fake: &Var<T>, eps_log: f64) -> Result<Var<T>> {
    let real = mean_of_clamped(d_real, eps_log, neg_log, d_neg_log);
    let fake = mean_of_clamped(d_fake, eps_log, neg_log1m, d_neg_log1m);
    Ok(ops::weighted_sum(&[(&real, 1.0), (&fake, 1.0)]))
}

pub fn gan_loss_g_var<T: Scalar>(d_fake: &Var<T>, eps_log: f64, saturating: bool) -> Var<T> {
    if saturating {
        mean_of_clamped(d_fake, eps_log, log1m, d_log1m)
    } else {
        mean_of_clamped(d_fake, eps_log, neg_log, d_neg_log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::{RgbImage, Trimap, TrimapLabel};

    fn region(h: usize, w: usize) -> RegionMask {
        RegionMask::full(h, w)
    }

    #[test]
    fn identical_mattes_hit_the_eps_floor() {
        let a = AlphaMatte::from_fn(3, 3, |y, x| (y + x) as f32 / 4.0).unwrap();
        assert_eq!(alpha_prediction_loss(&a, &a, &region(3, 3), 1e-6).unwrap(), 1e-6);
    }

    #[test]
    fn constant_offset_of_half() {
        let p = AlphaMatte::filled(2, 2, 0.75).unwrap();
        let g = AlphaMatte::filled(2, 2, 0.25).unwrap();
        let l = alpha_prediction_loss(&p, &g, &region(2, 2), 1e-6).unwrap();
        assert!((l - (0.25f64 + 1e-12).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_region_is_an_error() {
        let a = AlphaMatte::filled(2, 2, 0.5).unwrap();
        let empty = RegionMask::new(2, 2, vec![false; 4]).unwrap();
        assert!(matches!(alpha_prediction_loss(&a, &a, &empty, 1e-6), Err(Error::EmptyUnknown)));
    }

    #[test]
    fn composition_single_pixel() {
        let fg = RgbImage::filled(1, 1, [1.0; 3]).unwrap();
        let bg = RgbImage::filled(1, 1, [0.0; 3]).unwrap();
        let gt = AlphaMatte::filled(1, 1, 0.5).unwrap();
        let t = Trimap::filled(1, 1, TrimapLabel::Unknown).unwrap();
        let s = TrainingSample::from_parts(fg, bg, gt, t).unwrap();
        let p = AlphaMatte::filled(1, 1, 0.7).unwrap();
        let l = composition_loss(&p, &s, &s.unknown(), 1e-6).unwrap();
        assert!((l - 0.2).abs() < 1e-6);
        assert_eq!(composition_loss(&s.alpha_gt, &s, &s.unknown(), 1e-6).unwrap(), 1e-6);
    }

    #[test]
    fn gan_fixed_points() {
        assert!((gan_loss_d(0.5, 0.5, 1e-7) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(gan_loss_d(1.0, 0.0, 1e-7) < 1e-6);
        assert!((gan_loss_g(0.5, 1e-7, false) - 2f64.ln()).abs() < 1e-12);
        assert!(gan_loss_d(0.0, 1.0, 1e-7).is_finite());
    }

    #[test]
    fn report_total_is_sum_of_parts() {
        let r = total_generator_loss(0.1, 0.2, 0.3, 0.9, &LossWeights::default());
        assert!((r.total_g - 0.6).abs() < 1e-12);
        let no_gan = LossWeights {
            gan: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_generator_loss(0.1, 0.2, 5.0, 0.0, &no_gan).total_g, 0.1 + 0.2);
    }

    #[test]
    fn graph_losses_match_plain_versions() {
        let p = AlphaMatte::from_fn(4, 4, |y, x| ((y * 5 + x * 3) % 7) as f32 / 6.0).unwrap();
        let fg = RgbImage::from_fn(4, 4, |c, y, x| ((c + y + x) % 4) as f32 / 3.0).unwrap();
        let bg = RgbImage::from_fn(4, 4, |c, y, x| ((2 * c + y * x) % 5) as f32 / 4.0).unwrap();
        let gt = AlphaMatte::from_fn(4, 4, |y, x| ((y + 2 * x) % 5) as f32 / 4.0).unwrap();
        let t = Trimap::from_fn(4, 4, |y, x| if (y + x) % 3 == 0 { TrimapLabel::Foreground } else { TrimapLabel::Unknown })
            .unwrap();
        let s = TrainingSample::from_parts(fg, bg, gt, t).unwrap();
        let unk = s.unknown();
        let t4 = |d: &[f32], c| Tensor::<f64>::new(vec![1, c, 4, 4], d.iter().map(|&v| v as f64).collect()).unwrap();
        let mask: Vec<f32> = unk.bits().iter().map(|&b| b as u8 as f32).collect();
        let pv = Var::leaf(t4(p.data(), 1));
        let la = alpha_loss_var(&pv, &t4(s.alpha_gt.data(), 1), &t4(&mask, 1), 1e-6).unwrap();
        let lc = composition_loss_var(
            &pv,
            &t4(s.foreground.data(), 3),
            &t4(s.background.data(), 3),
            &t4(s.composite.data(), 3),
            &t4(&mask, 1),
            1e-6,
        )
        .unwrap();
        let plain_a = alpha_prediction_loss(&p, &s.alpha_gt, &unk, 1e-6).unwrap();
        let plain_c = composition_loss(&p, &s, &unk, 1e-6).unwrap();
        assert!((la.value().item() - plain_a).abs() < 1e-12);
        assert!((lc.value().item() - plain_c).abs() < 1e-6);
    }

    #[test]
    fn graph_gan_losses_match_plain_versions() {
        let r = Var::leaf(Tensor::new(vec![2], vec![0.8f64, 0.6]).unwrap());
        let f = Var::leaf(Tensor::new(vec![2], vec![0.3f64, 0.1]).unwrap());
        let d = gan_loss_d_var(&r, &f, 1e-7).unwrap();
        let expect = (gan_loss_d(0.8, 0.3, 1e-7) + gan_loss_d(0.6, 0.1, 1e-7)) / 2.0;
        assert!((d.value().item() - expect).abs() < 1e-12);
        let g = gan_loss_g_var(&f, 1e-7, false);
        assert!((g.value().item() - (gan_loss_g(0.3, 1e-7, false) + gan_loss_g(0.1, 1e-7, false)) / 2.0).abs() < 1e-12);
    }
}
