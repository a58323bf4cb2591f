pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

pub use conv::{conv2d, conv_transpose2d, ConvGeom};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use pool::{max_pool2d_with_indices, max_unpool2d, PoolIndices};
pub use resize::resize_bilinear;

/// Elementwise map with a derivative expressed through input and output.
fn unary<T: Scalar>(
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let value = x.value().map(f);
    let (xv, yv) = (x.value().clone(), value.clone());
    Var::from_op(value, &[x], move |g| {
        let d = g
            .data()
            .iter()
            .zip(xv.data())
            .zip(yv.data())
            .map(|((&gi, &xi), &yi)| gi * df(xi, yi))
            .collect();
        vec![Some(Tensor::new(g.shape().to_vec(), d).expect("grad shape"))]
    })
}

pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |xi, _| if xi > T::zero() { T::one() } else { T::zero() },
    )
}

pub fn leaky_relu<T: Scalar>(x: &Var<T>, slope: f64) -> Var<T> {
    let s = T::lit(slope);
    unary(
        x,
        move |v| if v > T::zero() { v } else { v * s },
        move |xi, _| if xi > T::zero() { T::one() } else { s },
    )
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(
        x,
        |v| T::one() / (T::one() + (-v).exp()),
        |_, y| y * (T::one() - y),
    )
}

pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let value = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(Var::from_op(value, &[a, b], |g| {
        vec![Some(g.clone()), Some(g.clone())]
    }))
}

/// Per-pixel blend `alpha * a + (1 - alpha) * b`, with `alpha` of shape
/// `[n, 1, h, w]` broadcast over the channels of `a` and `b` (`[n, c, h, w]`).
/// Only `alpha` is differentiated.
pub fn blend<T: Scalar>(alpha: &Var<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Var<T>> {
    let (n, one, h, w) = alpha.value().dims4();
    if one != 1 || a.shape() != b.shape() || a.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "blend: alpha {:?}, a {:?}, b {:?}",
            alpha.shape(),
            a.shape(),
            b.shape()
        )));
    }
    let (an, c, ah, aw) = a.dims4();
    if (an, ah, aw) != (n, h, w) {
        return Err(Error::Shape(format!(
            "blend: alpha {:?} vs planes {:?}",
            alpha.shape(),
            a.shape()
        )));
    }
    let p = h * w;
    let al = alpha.value().data();
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n * c * p);
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * p;
            out.extend((0..p).map(|j| {
                let t = al[i * p + j];
                t * ad[base + j] + (T::one() - t) * bd[base + j]
            }));
        }
    }
    let value = Tensor::new(a.shape().to_vec(), out)?;
    let (a, b) = (a.clone(), b.clone());
    Ok(Var::from_op(value, &[alpha], move |g| {
        let gd = g.data();
        let (ad, bd) = (a.data(), b.data());
        let mut d = vec![T::zero(); n * p];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * p;
                for j in 0..p {
                    d[i * p + j] = d[i * p + j] + gd[base + j] * (ad[base + j] - bd[base + j]);
                }
            }
        }
        vec![Some(Tensor::new(vec![n, 1, h, w], d).expect("blend grad shape"))]
    }))
}

/// `x` where `keep` is positive, `fill` elsewhere. Gradient flows to `x`
/// only through kept elements.
pub fn select<T: Scalar>(keep: &Tensor<T>, x: &Var<T>, fill: &Tensor<T>) -> Result<Var<T>> {
    if keep.shape() != x.shape() || fill.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "select: keep {:?}, x {:?}, fill {:?}",
            keep.shape(),
            x.shape(),
            fill.shape()
        )));
    }
    let value = Tensor::new(
        x.shape().to_vec(),
        keep.data()
            .iter()
            .zip(x.value().data().iter().zip(fill.data()))
            .map(|(&k, (&v, &f))| if k > T::zero() { v } else { f })
            .collect(),
    )?;
    let keep = keep.clone();
    Ok(Var::from_op(value, &[x], move |g| {
        vec![Some(g.zip_map(&keep, |gi, k| if k > T::zero() { gi } else { T::zero() }))]
    }))
}

/// Concatenate NCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[&Var<T>]) -> Result<Var<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let (n, _, h, w) = first.value().dims4();
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.shape().len() != 4 {
            return Err(Error::Shape(format!("concat expects NCHW, got {:?}", p.shape())));
        }
        let (pn, pc, ph, pw) = p.value().dims4();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat: {:?} incompatible with {:?}",
                p.shape(),
                first.shape()
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for i in 0..n {
        for p in parts {
            out.extend_from_slice(p.value().sample(i));
        }
    }
    let value = Tensor::new(vec![n, total, h, w], out)?;
    Ok(Var::from_op(value, parts, move |g| {
        let gd = g.data();
        let mut offset = 0;
        widths
            .iter()
            .map(|&c| {
                let mut d = Vec::with_capacity(n * c * plane);
                for i in 0..n {
                    let base = i * total * plane + offset * plane;
                    d.extend_from_slice(&gd[base..base + c * plane]);
                }
                offset += c;
                Some(Tensor::new(vec![n, c, h, w], d).expect("concat grad shape"))
            })
            .collect()
    }))
}

/// Spatial mean per channel: `[n, c, h, w] -> [n, c, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(x: &Var<T>) -> Var<T> {
    let (n, c, h, w) = x.value().dims4();
    let p = h * w;
    let xd = x.value().data();
    let means = (0..n * c)
        .map(|i| T::lit(xd[i * p..(i + 1) * p].iter().map(|v| v.as_f64()).sum::<f64>() / p as f64))
        .collect();
    let value = Tensor::new(vec![n, c, 1, 1], means).expect("pool shape");
    Var::from_op(value, &[x], move |g| {
        let inv = 1.0 / p as f64;
        let d = g
            .data()
            .iter()
            .flat_map(|&gi| std::iter::repeat_n(T::lit(gi.as_f64() * inv), p))
            .collect();
        vec![Some(Tensor::new(vec![n, c, h, w], d).expect("grad shape"))]
    })
}

/// Mean over everything but the leading axis: `[n, ...] -> [n]`.
pub fn mean_per_sample<T: Scalar>(x: &Var<T>) -> Var<T> {
    let shape = x.shape().to_vec();
    let n = shape[0];
    let per = x.value().numel() / n;
    let means = (0..n)
        .map(|i| T::lit(x.value().sample(i).iter().map(|v| v.as_f64()).sum::<f64>() / per as f64))
        .collect();
    let value = Tensor::new(vec![n], means).expect("mean shape");
    Var::from_op(value, &[x], move |g| {
        let inv = 1.0 / per as f64;
        let d = g
            .data()
            .iter()
            .flat_map(|&gi| std::iter::repeat_n(T::lit(gi.as_f64() * inv), per))
            .collect();
        vec![Some(Tensor::new(shape.clone(), d).expect("grad shape"))]
    })
}

/// Mean of all elements as a scalar.
pub fn mean_all<T: Scalar>(x: &Var<T>) -> Var<T> {
    let shape = x.shape().to_vec();
    let count = x.value().numel();
    let value = Tensor::scalar(T::lit(x.value().sum_f64() / count as f64));
    Var::from_op(value, &[x], move |g| {
        let gi = T::lit(g.item().as_f64() / count as f64);
        vec![Some(Tensor::full(&shape, gi))]
    })
}

/// Weighted sum of scalars.
pub fn weighted_sum<T: Scalar>(terms: &[(&Var<T>, f64)]) -> Var<T> {
    let total: f64 = terms
        .iter()
        .map(|(v, w)| v.value().item().as_f64() * w)
        .sum();
    let weights: Vec<f64> = terms.iter().map(|(_, w)| *w).collect();
    let parents: Vec<&Var<T>> = terms.iter().map(|(v, _)| *v).collect();
    Var::from_op(Tensor::scalar(T::lit(total)), &parents, move |g| {
        let gi = g.item().as_f64();
        weights
            .iter()
            .map(|w| Some(Tensor::scalar(T::lit(gi * w))))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_gradients() {
        let a = Var::leaf(Tensor::new(vec![2, 1, 1, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap());
        let b = Var::leaf(Tensor::new(vec![2, 2, 1, 2], (0..8).map(f64::from).collect()).unwrap());
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(&c.value().data()[..6], &[1.0, 2.0, 0.0, 1.0, 2.0, 3.0]);
        let seed = Tensor::new(vec![2, 3, 1, 2], (0..12).map(f64::from).collect()).unwrap();
        let grads = c.backward_with(seed);
        assert_eq!(grads.get(&a).unwrap().data(), &[0.0, 1.0, 6.0, 7.0]);
        assert_eq!(
            grads.get(&b).unwrap().data(),
            &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]
        );
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Var::constant(Tensor::zeros(&[3]));
        let y = sigmoid::<f32>(&x);
        assert!(y.value().data().iter().all(|&v| v == 0.5));
    }
}
