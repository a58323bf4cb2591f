use crate::error::{Error, Result};
use crate::generator::{generator_forward, GeneratorConfig, SIZE_MULTIPLE};
use crate::imgcore::{AlphaMatte, RgbImage, Trimap, TrimapLabel};
use crate::nn::Weights;

/// Mirror index `i` into `0..n` without repeating the edge sample.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

pub fn padded_len(n: usize) -> usize {
    n.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Alpha matte for `image` guided by `trimap`.
///
/// Both are reflect-padded on the bottom and right to a multiple of 32,
/// run through the generator in inference mode and cropped back. With
/// `clamp_known`, definite regions are set to exactly 1 or 0.
pub fn predict(
    image: &RgbImage,
    trimap: &Trimap,
    weights: &Weights,
    cfg: &GeneratorConfig,
    clamp_known: bool,
) -> Result<AlphaMatte> {
    if image.dims() != trimap.dims() {
        return Err(Error::DimensionMismatch(format!(
            "image {:?} vs trimap {:?}",
            image.dims(),
            trimap.dims()
        )));
    }
    let (h, w) = image.dims();
    if h == 0 || w == 0 {
        return Err(Error::InvalidValue("empty image".into()));
    }
    let (ph, pw) = (padded_len(h), padded_len(w));
    let padded_image = RgbImage::from_fn(ph, pw, |c, y, x| image.get(c, reflect_index(y, h), reflect_index(x, w)))?;
    let padded_trimap = Trimap::from_fn(ph, pw, |y, x| trimap.get(reflect_index(y, h), reflect_index(x, w)))?;
    let out = generator_forward(&padded_image, &padded_trimap, weights, cfg)?;
    AlphaMatte::from_fn(h, w, |y, x| {
        match (clamp_known, trimap.get(y, x)) {
            (true, TrimapLabel::Foreground) => 1.0,
            (true, TrimapLabel::Background) => 0.0,
            _ => out.get(y, x).clamp(0.0, 1.0),
        }
    })
}
