//! Max pooling with saved argmax indices and the matching max-unpooling.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::ops::conv::ConvGeom;
use crate::tensor::{Scalar, Tensor, Var};

/// Argmax positions recorded by [`max_pool2d_with_indices`]: one flat
/// `y * in_w + x` index into the source plane per pooled element.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    pub indices: Arc<Vec<u32>>,
    /// `[n, c, h_out, w_out]` of the pooled tensor.
    pub pooled_shape: [usize; 4],
    pub in_h: usize,
    pub in_w: usize,
}

/// Max pooling with implicit `-inf` padding. Ties resolve to the first
/// maximum in raster order.
pub fn max_pool2d_with_indices<T: Scalar>(
    x: &Var<T>,
    g: ConvGeom,
) -> Result<(Var<T>, PoolIndices)> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!("max_pool2d expects NCHW, got {:?}", x.shape())));
    }
    let (n, c, h, w) = x.value().dims4();
    let ho = g
        .out_size(h)
        .ok_or_else(|| Error::Shape("pooling window larger than input".into()))?;
    let wo = g
        .out_size(w)
        .ok_or_else(|| Error::Shape("pooling window larger than input".into()))?;
    let xd = x.value().data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut idx = vec![0u32; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &xd[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = T::neg_infinity();
                let mut best_i = u32::MAX;
                for ki in 0..g.kernel {
                    let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..g.kernel {
                        let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let flat = iy as usize * w + ix as usize;
                        let v = src[flat];
                        if best_i == u32::MAX || v > best {
                            best = v;
                            best_i = flat as u32;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                out[o] = best;
                idx[o] = best_i;
            }
        }
    }
    let indices = PoolIndices {
        indices: Arc::new(idx),
        pooled_shape: [n, c, ho, wo],
        in_h: h,
        in_w: w,
    };
    let value = Tensor::new(vec![n, c, ho, wo], out)?;
    let saved = indices.clone();
    let var = Var::from_op(value, &[x], move |dy| {
        let mut dx = vec![T::zero(); n * c * h * w];
        let per = ho * wo;
        for (o, (&i, &g)) in saved.indices.iter().zip(dy.data()).enumerate() {
            let plane = o / per;
            let d = &mut dx[plane * h * w + i as usize];
            *d = *d + g;
        }
        vec![Some(Tensor::new(vec![n, c, h, w], dx).expect("dx shape"))]
    });
    Ok((var, indices))
}

/// Place each element of `x` at its recorded argmax position in a zeroed
/// plane of the pre-pooling size. When two pooled elements share an
/// argmax, the later one in raster order is kept.
pub fn max_unpool2d<T: Scalar>(x: &Var<T>, indices: &PoolIndices) -> Result<Var<T>> {
    let [n, c, ho, wo] = indices.pooled_shape;
    if x.shape() != [n, c, ho, wo] {
        return Err(Error::Shape(format!(
            "unpool input {:?} does not match pooled shape {:?}",
            x.shape(),
            indices.pooled_shape
        )));
    }
    let (h, w) = (indices.in_h, indices.in_w);
    let per = ho * wo;
    let mut out = vec![T::zero(); n * c * h * w];
    // winner[o] is true when element o is the final writer of its target.
    let mut writer = vec![u32::MAX; n * c * h * w];
    let xd = x.value().data();
    for (o, &i) in indices.indices.iter().enumerate() {
        let target = (o / per) * h * w + i as usize;
        out[target] = xd[o];
        writer[target] = o as u32;
    }
    let winner: Vec<bool> = indices
        .indices
        .iter()
        .enumerate()
        .map(|(o, &i)| writer[(o / per) * h * w + i as usize] == o as u32)
        .collect();
    let value = Tensor::new(vec![n, c, h, w], out)?;
    let saved = Arc::clone(&indices.indices);
    Ok(Var::from_op(value, &[x], move |dy| {
        let dyd = dy.data();
        let dx = saved
            .iter()
            .enumerate()
            .map(|(o, &i)| {
                if winner[o] {
                    dyd[(o / per) * h * w + i as usize]
                } else {
                    T::zero()
                }
            })
            .collect();
        vec![Some(Tensor::new(vec![n, c, ho, wo], dx).expect("dx shape"))]
    }))
}
