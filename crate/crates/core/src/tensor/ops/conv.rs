//! 2-D convolution and transposed convolution over NCHW tensors.
//!
//! Both lower to im2col + GEMM. The column buffer is built for a band of
//! output rows at a time so its size stays bounded for large inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Scalar, Tensor, Var};

/// Upper bound on column-buffer elements per band.
const COL_BUDGET: usize = 1 << 22;

/// Square kernel geometry shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            padding,
            dilation,
        }
    }

    /// Effective extent of the dilated kernel.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn out_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.span()).then(|| (padded - self.span()) / self.stride + 1)
    }

    /// Output size of the transposed convolution with this geometry.
    pub fn transposed_out_size(&self, input: usize, output_padding: usize) -> Option<usize> {
        if input == 0 {
            return None;
        }
        ((input - 1) * self.stride + self.span() + output_padding).checked_sub(2 * self.padding)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Range of output columns whose input column `ow*stride + off` is in `[0, w)`.
fn valid_range(off: isize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = w as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = (lo as usize).min(wo);
    let hi = (hi as usize).min(wo);
    (lo, hi.max(lo))
}

/// Image layout seen by im2col: the conv input plane stack and the output width.
#[derive(Clone, Copy)]
struct Layout {
    channels: usize,
    h: usize,
    w: usize,
    wo: usize,
    g: ConvGeom,
}

impl Layout {
    fn rows(&self) -> usize {
        self.channels * self.g.kernel * self.g.kernel
    }

    fn band_rows(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.wo).max(1)).max(1)
    }
}

/// Fill `col` (`rows × (oh1-oh0)*wo`) with patches of `x` for output rows `[oh0, oh1)`.
fn im2col<T: Scalar>(x: &[T], l: Layout, oh0: usize, oh1: usize, col: &mut [T]) {
    let k = l.g.kernel;
    let pc = (oh1 - oh0) * l.wo;
    let s = l.g.stride;
    for c in 0..l.channels {
        let plane = &x[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * pc..(row + 1) * pc];
                let off_w = (kj * l.g.dilation) as isize - l.g.padding as isize;
                let (lo, hi) = valid_range(off_w, s, l.w, l.wo);
                for (r, oh) in (oh0..oh1).enumerate() {
                    let out = &mut dst[r * l.wo..(r + 1) * l.wo];
                    let ih = (oh * s + ki * l.g.dilation) as isize - l.g.padding as isize;
                    if ih < 0 || ih >= l.h as isize || lo >= hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * l.w..(ih as usize + 1) * l.w];
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    let start = (lo * s) as isize + off_w;
                    if s == 1 {
                        let start = start as usize;
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (i, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[start as usize + i * s];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add `col` back into `dx`; adjoint of [`im2col`].
fn col2im<T: Scalar>(col: &[T], l: Layout, oh0: usize, oh1: usize, dx: &mut [T]) {
    let k = l.g.kernel;
    let pc = (oh1 - oh0) * l.wo;
    let s = l.g.stride;
    for c in 0..l.channels {
        let plane = &mut dx[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &col[row * pc..(row + 1) * pc];
                let off_w = (kj * l.g.dilation) as isize - l.g.padding as isize;
                let (lo, hi) = valid_range(off_w, s, l.w, l.wo);
                if lo >= hi {
                    continue;
                }
                for (r, oh) in (oh0..oh1).enumerate() {
                    let ih = (oh * s + ki * l.g.dilation) as isize - l.g.padding as isize;
                    if ih < 0 || ih >= l.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * l.w..(ih as usize + 1) * l.w];
                    let vals = &src_row[r * l.wo + lo..r * l.wo + hi];
                    let start = ((lo * s) as isize + off_w) as usize;
                    for (i, &v) in vals.iter().enumerate() {
                        let d = &mut dst[start + i * s];
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

fn bands(total: usize, per: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total)
        .step_by(per.max(1))
        .map(move |r0| (r0, (r0 + per).min(total)))
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects 4-D input and weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, kh, kw) = w.dims4();
    if wcin != cin || kh != g.kernel || kw != g.kernel {
        return Err(Error::Shape(format!(
            "conv2d weight {:?} incompatible with input {:?} and kernel {}",
            w.shape(),
            x.shape(),
            g.kernel
        )));
    }
    let ho = g.out_size(h).ok_or_else(|| {
        Error::Shape(format!("input height {h} smaller than kernel span {}", g.span()))
    })?;
    let wo = g.out_size(wd).ok_or_else(|| {
        Error::Shape(format!("input width {wd} smaller than kernel span {}", g.span()))
    })?;
    Ok((n, cin, h, wd, cout, ho, wo))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd, cout, ho, wo) = check_conv_shapes(x, w, g)?;
    let p = ho * wo;
    let l = Layout {
        channels: cin,
        h,
        w: wd,
        wo,
        g,
    };
    let ckk = l.rows();
    let mut out = vec![T::zero(); n * cout * p];
    let mut col = Vec::new();
    for i in 0..n {
        let xi = x.sample(i);
        let oi = &mut out[i * cout * p..(i + 1) * cout * p];
        if g.is_pointwise() {
            gemm(
                cout,
                cin,
                p,
                MatRef::row_major(w.data(), cin),
                MatRef::row_major(xi, p),
                T::zero(),
                oi,
                0,
                p,
            );
            continue;
        }
        for (r0, r1) in bands(ho, l.band_rows()) {
            let pc = (r1 - r0) * wo;
            col.resize(ckk * pc, T::zero());
            im2col(xi, l, r0, r1, &mut col);
            gemm(
                cout,
                ckk,
                pc,
                MatRef::row_major(w.data(), ckk),
                MatRef::row_major(&col, pc),
                T::zero(),
                oi,
                r0 * wo,
                p,
            );
        }
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), n, cout, p);
    }
    Tensor::new(vec![n, cout, ho, wo], out)
}

fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], n: usize, c: usize, p: usize) {
    for i in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(c) {
            for v in &mut out[(i * c + ch) * p..(i * c + ch + 1) * p] {
                *v = *v + b;
            }
        }
    }
}

fn channel_sums<T: Scalar>(dout: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = dout.dims4();
    let p = h * w;
    let d = dout.data();
    let sums = (0..c)
        .map(|ch| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += d[(i * c + ch) * p..(i * c + ch + 1) * p]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            T::lit(acc)
        })
        .collect();
    Tensor::new(vec![c], sums).expect("bias gradient shape")
}

/// Gradients of a convolution: `(dx, dw)`; `dx` only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (n, cin, h, wd, cout, ho, wo) = check_conv_shapes(x, w, g).expect("checked in forward");
    let p = ho * wo;
    let l = Layout {
        channels: cin,
        h,
        w: wd,
        wo,
        g,
    };
    let ckk = l.rows();
    let mut dw = vec![T::zero(); cout * ckk];
    let mut dx = need_dx.then(|| vec![T::zero(); n * cin * h * wd]);
    let mut col = Vec::new();
    for i in 0..n {
        let xi = x.sample(i);
        let di = dout.sample(i);
        if g.is_pointwise() {
            gemm(
                cout,
                p,
                cin,
                MatRef::row_major(di, p),
                MatRef::transposed(xi, p),
                T::one(),
                &mut dw,
                0,
                cin,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    cin,
                    cout,
                    p,
                    MatRef::transposed(w.data(), cin),
                    MatRef::row_major(di, p),
                    T::zero(),
                    &mut dx[i * cin * p..(i + 1) * cin * p],
                    0,
                    p,
                );
            }
            continue;
        }
        for (r0, r1) in bands(ho, l.band_rows()) {
            let pc = (r1 - r0) * wo;
            col.resize(ckk * pc, T::zero());
            im2col(xi, l, r0, r1, &mut col);
            let dchunk = MatRef {
                data: di,
                offset: r0 * wo,
                rs: p,
                cs: 1,
            };
            gemm(
                cout,
                pc,
                ckk,
                dchunk,
                MatRef::transposed(&col, pc),
                T::one(),
                &mut dw,
                0,
                ckk,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ckk,
                    cout,
                    pc,
                    MatRef::transposed(w.data(), ckk),
                    dchunk,
                    T::zero(),
                    &mut col,
                    0,
                    pc,
                );
                col2im(&col, l, r0, r1, &mut dx[i * cin * h * wd..(i + 1) * cin * h * wd]);
            }
        }
    }
    (
        dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
        Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
    )
}

fn check_transposed_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    output_padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "conv_transpose2d expects 4-D input and weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n, cin, hin, win) = x.dims4();
    let (wcin, cout, kh, kw) = w.dims4();
    if wcin != cin || kh != g.kernel || kw != g.kernel {
        return Err(Error::Shape(format!(
            "conv_transpose2d weight {:?} incompatible with input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    if output_padding >= g.stride.max(g.dilation) {
        return Err(Error::Shape("output padding must be below stride".into()));
    }
    let ho = g
        .transposed_out_size(hin, output_padding)
        .ok_or_else(|| Error::Shape("transposed conv output would be empty".into()))?;
    let wo = g
        .transposed_out_size(win, output_padding)
        .ok_or_else(|| Error::Shape("transposed conv output would be empty".into()))?;
    Ok((n, cin, hin, win, cout, ho, wo))
}

/// Fractionally-strided convolution; weight layout `[cin, cout, k, k]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeom,
    output_padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, hin, win, cout, ho, wo) = check_transposed_shapes(x, w, g, output_padding)?;
    // The adjoint view: a convolution from the output grid back to the input grid.
    let l = Layout {
        channels: cout,
        h: ho,
        w: wo,
        wo: win,
        g,
    };
    let rows = l.rows();
    let pin = hin * win;
    let mut out = vec![T::zero(); n * cout * ho * wo];
    let mut col = Vec::new();
    for i in 0..n {
        let xi = x.sample(i);
        let oi = &mut out[i * cout * ho * wo..(i + 1) * cout * ho * wo];
        for (r0, r1) in bands(hin, l.band_rows()) {
            let pc = (r1 - r0) * win;
            col.resize(rows * pc, T::zero());
            gemm(
                rows,
                cin,
                pc,
                MatRef::transposed(w.data(), rows),
                MatRef {
                    data: xi,
                    offset: r0 * win,
                    rs: pin,
                    cs: 1,
                },
                T::zero(),
                &mut col,
                0,
                pc,
            );
            col2im(&col, l, r0, r1, oi);
        }
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b.data(), n, cout, ho * wo);
    }
    Tensor::new(vec![n, cout, ho, wo], out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: ConvGeom,
    output_padding: usize,
    dout: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let (n, cin, hin, win, cout, ho, wo) =
        check_transposed_shapes(x, w, g, output_padding).expect("checked in forward");
    let l = Layout {
        channels: cout,
        h: ho,
        w: wo,
        wo: win,
        g,
    };
    let rows = l.rows();
    let pin = hin * win;
    let mut dw = vec![T::zero(); cin * rows];
    let mut dx = need_dx.then(|| vec![T::zero(); n * cin * pin]);
    let mut col = Vec::new();
    for i in 0..n {
        let xi = x.sample(i);
        let di = dout.sample(i);
        for (r0, r1) in bands(hin, l.band_rows()) {
            let pc = (r1 - r0) * win;
            col.resize(rows * pc, T::zero());
            im2col(di, l, r0, r1, &mut col);
            gemm(
                cin,
                pc,
                rows,
                MatRef {
                    data: xi,
                    offset: r0 * win,
                    rs: pin,
                    cs: 1,
                },
                MatRef::transposed(&col, pc),
                T::one(),
                &mut dw,
                0,
                rows,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    cin,
                    rows,
                    pc,
                    MatRef::row_major(w.data(), rows),
                    MatRef::row_major(&col, pc),
                    T::zero(),
                    &mut dx[i * cin * pin..(i + 1) * cin * pin],
                    r0 * win,
                    pin,
                );
            }
        }
    }
    (
        dx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("dx shape")),
        Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
    )
}

pub fn conv2d<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    g: ConvGeom,
) -> Result<Var<T>> {
    let value = conv2d_forward(x.value(), w.value(), bias.map(|b| b.value()), g)?;
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let need_dx = x.tracked();
    let mut parents = vec![x, w];
    if let Some(b) = bias {
        parents.push(b);
    }
    let has_bias = bias.is_some();
    Ok(Var::from_op(value, &parents, move |g_out| {
        let (dx, dw) = conv2d_backward(&xv, &wv, g, g_out, need_dx);
        let mut grads = vec![dx, Some(dw)];
        if has_bias {
            grads.push(Some(channel_sums(g_out)));
        }
        grads
    }))
}

pub fn conv_transpose2d<T: Scalar>(
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    g: ConvGeom,
    output_padding: usize,
) -> Result<Var<T>> {
    let value = conv_transpose2d_forward(
        x.value(),
        w.value(),
        bias.map(|b| b.value()),
        g,
        output_padding,
    )?;
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let need_dx = x.tracked();
    let mut parents = vec![x, w];
    if let Some(b) = bias {
        parents.push(b);
    }
    let has_bias = bias.is_some();
    Ok(Var::from_op(value, &parents, move |g_out| {
        let (dx, dw) = conv_transpose2d_backward(&xv, &wv, g, output_padding, g_out, need_dx);
        let mut grads = vec![dx, Some(dw)];
        if has_bias {
            grads.push(Some(channel_sums(g_out)));
        }
        grads
    }))
}
