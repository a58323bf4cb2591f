use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Batch statistics produced by a training-mode pass, for running-stat updates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance.
    pub var_unbiased: Vec<f64>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!("batch_norm expects NCHW, got {:?}", x.shape())));
    }
    let c = x.shape()[1];
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::Shape(format!(
            "batch_norm affine params {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(c)
}

/// Normalization with batch statistics. Returns the output and the
/// statistics used, so the caller can update its running averages.
pub fn batch_norm_train<T: Scalar>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    eps: f64,
) -> Result<(Var<T>, BatchStats)> {
    let c = check(x.value(), gamma.value(), beta.value())?;
    let (n, _, h, w) = x.value().dims4();
    let p = h * w;
    let m = (n * p) as f64;
    let xd = x.value().data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += xd[(i * c + ch) * p..(i * c + ch + 1) * p]
                .iter()
                .map(|v| v.as_f64())
                .sum::<f64>();
        }
        let mu = s / m;
        let mut ss = 0.0;
        for i in 0..n {
            ss += xd[(i * c + ch) * p..(i * c + ch + 1) * p]
                .iter()
                .map(|v| (v.as_f64() - mu).powi(2))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = ss / m;
    }
    let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let g = gamma.value().data();
    let b = beta.value().data();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for i in 0..n {
        for ch in 0..c {
            let (mu, is) = (mean[ch], invstd[ch]);
            let (gc, bc) = (g[ch].as_f64(), b[ch].as_f64());
            let range = (i * c + ch) * p..(i * c + ch + 1) * p;
            for j in range {
                let xh = (xd[j].as_f64() - mu) * is;
                xhat[j] = T::lit(xh);
                out[j] = T::lit(xh * gc + bc);
            }
        }
    }
    let shape = x.value().shape().to_vec();
    let xhat = Tensor::new(shape.clone(), xhat)?;
    let value = Tensor::new(shape, out)?;
    let gamma_v = gamma.value().clone();
    let result = Var::from_op(value, &[x, gamma, beta], move |dy| {
        let dyd = dy.data();
        let xh = xhat.data();
        let gd = gamma_v.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                    dbeta[ch] += dyd[j].as_f64();
                    dgamma[ch] += dyd[j].as_f64() * xh[j].as_f64();
                }
            }
        }
        let mut dx = vec![T::zero(); dyd.len()];
        for i in 0..n {
            for ch in 0..c {
                let k = gd[ch].as_f64() * invstd[ch] / m;
                for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                    let v = m * dyd[j].as_f64() - dbeta[ch] - xh[j].as_f64() * dgamma[ch];
                    dx[j] = T::lit(k * v);
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::new(vec![c], v.into_iter().map(T::lit).collect());
        vec![
            Some(Tensor::new(dy.shape().to_vec(), dx).expect("dx shape")),
            Some(to_t(dgamma).expect("dgamma shape")),
            Some(to_t(dbeta).expect("dbeta shape")),
        ]
    });
    let var_unbiased = if m > 1.0 {
        var.iter().map(|v| v * m / (m - 1.0)).collect()
    } else {
        var.clone()
    };
    Ok((result, BatchStats { mean, var_unbiased }))
}

/// Normalization with stored running statistics (an affine map per channel).
pub fn batch_norm_eval<T: Scalar>(
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Var<T>> {
    let c = check(x.value(), gamma.value(), beta.value())?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::Shape("running statistics do not match channels".into()));
    }
    let (n, _, h, w) = x.value().dims4();
    let p = h * w;
    let invstd: Vec<f64> = running_var
        .data()
        .iter()
        .map(|v| 1.0 / (v.as_f64() + eps).sqrt())
        .collect();
    let rm: Vec<f64> = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let xd = x.value().data();
    let g = gamma.value().data();
    let b = beta.value().data();
    let mut out = vec![T::zero(); xd.len()];
    for i in 0..n {
        for ch in 0..c {
            let scale = g[ch].as_f64() * invstd[ch];
            let shift = b[ch].as_f64() - rm[ch] * scale;
            for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                out[j] = T::lit(xd[j].as_f64() * scale + shift);
            }
        }
    }
    let value = Tensor::new(x.value().shape().to_vec(), out)?;
    let xv = x.value().clone();
    let gamma_v = gamma.value().clone();
    Ok(Var::from_op(value, &[x, gamma, beta], move |dy| {
        let dyd = dy.data();
        let xd = xv.data();
        let gd = gamma_v.data();
        let mut dx = vec![T::zero(); dyd.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let scale = gd[ch].as_f64() * invstd[ch];
                for j in (i * c + ch) * p..(i * c + ch + 1) * p {
                    let d = dyd[j].as_f64();
                    dx[j] = T::lit(d * scale);
                    dbeta[ch] += d;
                    dgamma[ch] += d * (xd[j].as_f64() - rm[ch]) * invstd[ch];
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::new(vec![c], v.into_iter().map(T::lit).collect());
        vec![
            Some(Tensor::new(dy.shape().to_vec(), dx).expect("dx shape")),
            Some(to_t(dgamma).expect("dgamma shape")),
            Some(to_t(dbeta).expect("dbeta shape")),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_output_is_standardized() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0).collect();
        let x = Var::constant(Tensor::new(vec![2, 3, 4, 4], data).unwrap());
        let gamma = Var::constant(Tensor::full(&[3], 1.0));
        let beta = Var::constant(Tensor::full(&[3], 0.0));
        let (y, stats) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let yd = y.value().data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| yd[(n * 3 + ch) * 16..(n * 3 + ch + 1) * 16].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
            assert!(stats.var_unbiased[ch] > 0.0);
        }
    }
}
