//! Bilinear resampling with half-pixel centers (`align_corners = false`).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Source taps for one axis.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
    pub frac: Vec<f64>,
}

pub fn axis_taps(in_len: usize, out_len: usize) -> AxisTaps {
    let scale = in_len as f64 / out_len as f64;
    let mut taps = AxisTaps {
        i0: Vec::with_capacity(out_len),
        i1: Vec::with_capacity(out_len),
        frac: Vec::with_capacity(out_len),
    };
    for o in 0..out_len {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        taps.i0.push(i0);
        taps.i1.push(i1);
        taps.frac.push(if i1 == i0 { 0.0 } else { src - i0 as f64 });
    }
    taps
}

/// Resample one plane. Interpolates in lerp form so constant regions stay
/// exactly constant.
pub fn resize_plane<T: Scalar>(
    src: &[T],
    w: usize,
    dst: &mut [T],
    ys: &AxisTaps,
    xs: &AxisTaps,
) {
    let ow = xs.i0.len();
    for (oy, row) in dst.chunks_exact_mut(ow).enumerate() {
        let r0 = &src[ys.i0[oy] * w..ys.i0[oy] * w + w];
        let r1 = &src[ys.i1[oy] * w..ys.i1[oy] * w + w];
        let fy = T::lit(ys.frac[oy]);
        for (ox, out) in row.iter_mut().enumerate() {
            let fx = T::lit(xs.frac[ox]);
            let (a, b) = (r0[xs.i0[ox]], r0[xs.i1[ox]]);
            let (c, d) = (r1[xs.i0[ox]], r1[xs.i1[ox]]);
            let top = a + fx * (b - a);
            let bot = c + fx * (d - c);
            *out = top + fy * (bot - top);
        }
    }
}

fn resize_plane_adjoint<T: Scalar>(
    dy: &[T],
    w: usize,
    dx: &mut [T],
    ys: &AxisTaps,
    xs: &AxisTaps,
) {
    let ow = xs.i0.len();
    for (oy, row) in dy.chunks_exact(ow).enumerate() {
        let fy = ys.frac[oy];
        for (ox, &g) in row.iter().enumerate() {
            let fx = xs.frac[ox];
            let g = g.as_f64();
            let taps = [
                (ys.i0[oy], xs.i0[ox], (1.0 - fy) * (1.0 - fx)),
                (ys.i0[oy], xs.i1[ox], (1.0 - fy) * fx),
                (ys.i1[oy], xs.i0[ox], fy * (1.0 - fx)),
                (ys.i1[oy], xs.i1[ox], fy * fx),
            ];
            for (yy, xx, wt) in taps {
                let d = &mut dx[yy * w + xx];
                *d = *d + T::lit(g * wt);
            }
        }
    }
}

pub fn resize_bilinear<T: Scalar>(x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
    if x.shape().len() != 4 || out_h == 0 || out_w == 0 {
        return Err(Error::Shape(format!(
            "resize_bilinear: bad input {:?} or target {out_h}x{out_w}",
            x.shape()
        )));
    }
    let (n, c, h, w) = x.value().dims4();
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    let xd = x.value().data();
    for plane in 0..n * c {
        resize_plane(
            &xd[plane * h * w..(plane + 1) * h * w],
            w,
            &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w],
            &ys,
            &xs,
        );
    }
    let value = Tensor::new(vec![n, c, out_h, out_w], out)?;
    Ok(Var::from_op(value, &[x], move |dy| {
        let mut dx = vec![T::zero(); n * c * h * w];
        let dyd = dy.data();
        for plane in 0..n * c {
            resize_plane_adjoint(
                &dyd[plane * out_h * out_w..(plane + 1) * out_h * out_w],
                w,
                &mut dx[plane * h * w..(plane + 1) * h * w],
                &ys,
                &xs,
            );
        }
        vec![Some(Tensor::new(vec![n, c, h, w], dx).expect("dx shape"))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Var::constant(Tensor::full(&[1, 1, 5, 7], 0.3f32));
        let y = resize_bilinear(&x, 11, 3).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn single_pixel_broadcasts() {
        let x = Var::constant(Tensor::new(vec![1, 2, 1, 1], vec![0.25f64, -1.0]).unwrap());
        let y = resize_bilinear(&x, 4, 4).unwrap();
        assert!(y.value().data()[..16].iter().all(|&v| v == 0.25));
        assert!(y.value().data()[16..].iter().all(|&v| v == -1.0));
    }

    #[test]
    fn upsample_by_two_interpolates_half_pixel() {
        let x = Var::constant(Tensor::new(vec![1, 1, 1, 2], vec![0.0f64, 1.0]).unwrap());
        let y = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
