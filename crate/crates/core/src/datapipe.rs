//! Compositing, augmentation and dataset assembly.
//!
//! Every random draw comes from a per-sample ChaCha stream derived from one
//! master seed and the sample's global index (see [`sample_rng`]), so any
//! sample can be rebuilt on its own and in any order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{
    self, AlphaMatte, BitDepth, RegionMask, RgbImage, Trimap, TrimapLabel,
};
use crate::tensor::ops::resize::{axis_taps, resize_plane};

/// A foreground object and its ground-truth matte.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceItem {
    pub foreground: RgbImage,
    pub alpha: AlphaMatte,
}

impl SourceItem {
    pub fn new(foreground: RgbImage, alpha: AlphaMatte) -> Result<Self> {
        if foreground.dims() != alpha.dims() {
            return Err(Error::DimensionMismatch(format!(
                "foreground {:?} vs alpha {:?}",
                foreground.dims(),
                alpha.dims()
            )));
        }
        Ok(SourceItem { foreground, alpha })
    }
}

/// One fully prepared training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub composite: RgbImage,
    pub trimap: Trimap,
    pub alpha_gt: AlphaMatte,
    pub foreground: RgbImage,
    pub background: RgbImage,
}

impl TrainingSample {
    /// Assemble a sample, compositing `foreground` over `background`.
    pub fn from_parts(
        foreground: RgbImage,
        background: RgbImage,
        alpha_gt: AlphaMatte,
        trimap: Trimap,
    ) -> Result<Self> {
        if trimap.dims() != alpha_gt.dims() {
            return Err(Error::DimensionMismatch(format!(
                "trimap {:?} vs alpha {:?}",
                trimap.dims(),
                alpha_gt.dims()
            )));
        }
        let composite = composite(&foreground, &background, &alpha_gt)?;
        Ok(TrainingSample {
            composite,
            trimap,
            alpha_gt,
            foreground,
            background,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.composite.dims()
    }

    pub fn unknown(&self) -> RegionMask {
        self.trimap.unknown()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_std_deg: f64,
    pub dilation_kmin: usize,
    pub dilation_kmax: usize,
    pub crop_min: usize,
    pub crop_max: usize,
    pub out_size: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_std_deg: 5.0,
            dilation_kmin: 2,
            dilation_kmax: 20,
            crop_min: 320,
            crop_max: 720,
            out_size: 320,
            flip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rotation_std_deg.is_finite() && self.rotation_std_deg >= 0.0) {
            return bad(format!("rotation_std_deg must be >= 0, got {}", self.rotation_std_deg));
        }
        if self.dilation_kmin == 0 || self.dilation_kmin > self.dilation_kmax {
            return bad(format!(
                "need 0 < dilation_kmin <= dilation_kmax, got {}..{}",
                self.dilation_kmin, self.dilation_kmax
            ));
        }
        if self.crop_min == 0 || self.crop_min > self.crop_max {
            return bad(format!(
                "need 0 < crop_min <= crop_max, got {}..{}",
                self.crop_min, self.crop_max
            ));
        }
        if self.out_size == 0 || self.out_size % 32 != 0 {
            return bad(format!("out_size must be a positive multiple of 32, got {}", self.out_size));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }
}

/// Independent random stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `alpha * fg + (1 - alpha) * bg`, per channel.
pub fn composite(fg: &RgbImage, bg: &RgbImage, alpha: &AlphaMatte) -> Result<RgbImage> {
    same_dims(fg.dims(), bg.dims(), "foreground vs background")?;
    same_dims(fg.dims(), alpha.dims(), "foreground vs alpha")?;
    let n = alpha.data().len();
    let a = alpha.data();
    let mut out = Vec::with_capacity(3 * n);
    for c in 0..3 {
        let (f, b) = (fg.plane(c), bg.plane(c));
        out.extend((0..n).map(|i| (a[i] * f[i] + (1.0 - a[i]) * b[i]).clamp(0.0, 1.0)));
    }
    RgbImage::new(fg.height(), fg.width(), out)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear read where taps outside the plane contribute 0.
fn sample_zero_border(plane: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let read = |y: isize, x: isize| -> f64 {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize] as f64
        } else {
            0.0
        }
    };
    let (a, b) = (read(y0, x0), read(y0, x0 + 1));
    let (c, d) = (read(y0 + 1, x0), read(y0 + 1, x0 + 1));
    let top = a + fx * (b - a);
    let bot = c + fx * (d - c);
    (top + fy * (bot - top)) as f32
}

/// Rotate foreground and alpha about the image center. Regions rotated in
/// from outside the frame become transparent black.
pub fn rotate_fg_alpha(item: &SourceItem, degrees: f64) -> SourceItem {
    let (h, w) = item.alpha.dims();
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut src = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = snap(cos * dx + sin * dy + cx);
            let sy = snap(-sin * dx + cos * dy + cy);
            src.push((sy, sx));
        }
    }
    let warp = |plane: &[f32]| -> Vec<f32> {
        src.iter()
            .map(|&(sy, sx)| sample_zero_border(plane, h, w, sy, sx).clamp(0.0, 1.0))
            .collect()
    };
    let mut fg = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        fg.extend(warp(item.foreground.plane(c)));
    }
    SourceItem {
        foreground: RgbImage::new(h, w, fg).expect("rotation keeps rgb in range"),
        alpha: AlphaMatte::new(h, w, warp(item.alpha.data())).expect("rotation keeps alpha in range"),
    }
}

/// 1-D dilation of each line of `src` by the offsets `-(k/2)..=k-1-k/2`.
fn dilate_lines(src: &[bool], lines: usize, len: usize, stride: usize, step: usize, k: usize) -> Vec<bool> {
    let lo = k / 2;
    let hi = k - 1 - k / 2;
    let mut out = vec![false; src.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        let at = |i: usize| line * stride + i * step;
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[at(i)] as usize;
        }
        for i in 0..len {
            // A source pixel j reaches i when i - j is an allowed offset.
            let first = i.saturating_sub(hi);
            let last = (i + lo).min(len - 1);
            out[at(i)] = prefix[last + 1] > prefix[first];
        }
    }
    out
}

/// Morphological dilation with a `k`-by-`k` square. For even `k` the square
/// reaches one pixel further toward negative coordinates.
pub fn dilate_square(mask: &RegionMask, k: usize) -> RegionMask {
    let (h, w) = mask.dims();
    if k <= 1 {
        return mask.clone();
    }
    let rows = dilate_lines(mask.bits(), h, w, w, 1, k);
    let both = dilate_lines(&rows, w, h, 1, w, k);
    RegionMask::new(h, w, both).expect("dilation keeps dims")
}

/// Derive a trimap from a ground-truth matte by dilating its transition zone.
pub fn synthesize_trimap(alpha: &AlphaMatte, k: usize) -> Result<Trimap> {
    if k == 0 {
        return Err(Error::InvalidValue("dilation kernel size must be >= 1".into()));
    }
    let (h, w) = alpha.dims();
    let a = alpha.data();
    let mut seed: Vec<bool> = a.iter().map(|&v| v > 0.0 && v < 1.0).collect();
    if !seed.iter().any(|&b| b) {
        for y in 0..h {
            for x in 0..w {
                let (mut zero, mut one) = (false, false);
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let v = a[yy * w + xx];
                        zero |= v == 0.0;
                        one |= v == 1.0;
                    }
                }
                seed[y * w + x] = zero && one;
            }
        }
    }
    if !seed.iter().any(|&b| b) {
        return Err(Error::DegenerateAlpha(a[0]));
    }
    let unknown = dilate_square(&RegionMask::new(h, w, seed)?, k);
    let labels = unknown
        .bits()
        .iter()
        .zip(a)
        .map(|(&u, &v)| {
            if u {
                TrimapLabel::Unknown
            } else if v == 1.0 {
                TrimapLabel::Foreground
            } else {
                TrimapLabel::Background
            }
        })
        .collect();
    Trimap::new(h, w, labels)
}

/// The spatially aligned planes that travel together through augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePlanes {
    pub foreground: RgbImage,
    pub background: RgbImage,
    pub alpha: AlphaMatte,
    pub trimap: Trimap,
}

impl SamplePlanes {
    pub fn new(foreground: RgbImage, background: RgbImage, alpha: AlphaMatte, trimap: Trimap) -> Result<Self> {
        let d = alpha.dims();
        same_dims(foreground.dims(), d, "foreground vs alpha")?;
        same_dims(background.dims(), d, "background vs alpha")?;
        same_dims(trimap.dims(), d, "trimap vs alpha")?;
        Ok(SamplePlanes {
            foreground,
            background,
            alpha,
            trimap,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.alpha.dims()
    }

    /// Map every plane through the same per-plane index transform:
    /// output pixel `i` reads source pixel `index[i]`.
    fn gather(&self, oh: usize, ow: usize, index: &[usize]) -> SamplePlanes {
        let pick = |plane: &[f32]| index.iter().map(|&i| plane[i]).collect::<Vec<_>>();
        let rgb = |img: &RgbImage| {
            let mut d = Vec::with_capacity(3 * index.len());
            for c in 0..3 {
                d.extend(pick(img.plane(c)));
            }
            RgbImage::new(oh, ow, d).expect("gather keeps rgb in range")
        };
        SamplePlanes {
            foreground: rgb(&self.foreground),
            background: rgb(&self.background),
            alpha: AlphaMatte::new(oh, ow, pick(self.alpha.data())).expect("gather keeps alpha"),
            trimap: Trimap::new(oh, ow, index.iter().map(|&i| self.trimap.labels()[i]).collect())
                .expect("gather keeps trimap"),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<SamplePlanes> {
        let (h, w) = self.dims();
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::InvalidValue(format!(
                "crop {height}x{width} at ({top}, {left}) outside {h}x{w}"
            )));
        }
        let index: Vec<usize> = (top..top + height)
            .flat_map(|y| (left..left + width).map(move |x| y * w + x))
            .collect();
        Ok(self.gather(height, width, &index))
    }

    pub fn flip_horizontal(&self) -> SamplePlanes {
        let (h, w) = self.dims();
        let index: Vec<usize> = (0..h)
            .flat_map(|y| (0..w).rev().map(move |x| y * w + x))
            .collect();
        self.gather(h, w, &index)
    }
}

/// Top-left corner of a `size` window centered on `center`, shifted to lie
/// inside a `len`-long axis.
pub fn clamp_window(center: usize, size: usize, len: usize) -> usize {
    center.saturating_sub(size / 2).min(len - size)
}

/// Crop a square window centered on a uniformly drawn unknown pixel.
pub fn crop_unknown_centered<R: Rng + ?Sized>(
    planes: &SamplePlanes,
    size: usize,
    rng: &mut R,
) -> Result<SamplePlanes> {
    let (h, w) = planes.dims();
    let unknown: Vec<usize> = planes
        .trimap
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == TrimapLabel::Unknown)
        .map(|(i, _)| i)
        .collect();
    if unknown.is_empty() {
        return Err(Error::EmptyUnknown);
    }
    let mut size = size;
    if size > h.min(w) {
        log::warn!("crop size {size} exceeds image {h}x{w}; shrinking to {}", h.min(w));
        size = h.min(w);
    }
    let center = unknown[rng.random_range(0..unknown.len())];
    let top = clamp_window(center / w, size, h);
    let left = clamp_window(center % w, size, w);
    planes.crop(top, left, size, size)
}

fn resize_rgb(img: &RgbImage, oh: usize, ow: usize) -> RgbImage {
    let (h, w) = img.dims();
    let (ys, xs) = (axis_taps(h, oh), axis_taps(w, ow));
    let mut out = vec![0.0f32; 3 * oh * ow];
    for c in 0..3 {
        resize_plane(img.plane(c), w, &mut out[c * oh * ow..(c + 1) * oh * ow], &ys, &xs);
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    RgbImage::new(oh, ow, out).expect("resize keeps rgb in range")
}

fn resize_alpha(alpha: &AlphaMatte, oh: usize, ow: usize) -> AlphaMatte {
    let (h, w) = alpha.dims();
    let mut out = vec![0.0f32; oh * ow];
    resize_plane(alpha.data(), w, &mut out, &axis_taps(h, oh), &axis_taps(w, ow));
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    AlphaMatte::new(oh, ow, out).expect("resize keeps alpha in range")
}

fn nearest_index(in_len: usize, out_len: usize, o: usize) -> usize {
    (((o as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
}

fn resize_trimap(t: &Trimap, oh: usize, ow: usize) -> Trimap {
    let (h, w) = t.dims();
    Trimap::from_fn(oh, ow, |y, x| {
        t.get(nearest_index(h, oh, y), nearest_index(w, ow, x))
    })
    .expect("resize keeps trimap dims")
}

/// Resize to `out_size` squared: bilinear for color and alpha, nearest for
/// the trimap so labels survive unchanged.
pub fn resize_sample(planes: &SamplePlanes, out_size: usize) -> SamplePlanes {
    if planes.dims() == (out_size, out_size) {
        return planes.clone();
    }
    SamplePlanes {
        foreground: resize_rgb(&planes.foreground, out_size, out_size),
        background: resize_rgb(&planes.background, out_size, out_size),
        alpha: resize_alpha(&planes.alpha, out_size, out_size),
        trimap: resize_trimap(&planes.trimap, out_size, out_size),
    }
}

/// Scale `bg` to cover `height` x `width` while keeping its aspect ratio,
/// then take the centered window.
pub fn fit_background(bg: &RgbImage, height: usize, width: usize) -> RgbImage {
    let (bh, bw) = bg.dims();
    if (bh, bw) == (height, width) {
        return bg.clone();
    }
    let scale = (height as f64 / bh as f64).max(width as f64 / bw as f64);
    let ch = ((height as f64 / scale).round() as usize).clamp(1, bh);
    let cw = ((width as f64 / scale).round() as usize).clamp(1, bw);
    let (top, left) = ((bh - ch) / 2, (bw - cw) / 2);
    let n = bh * bw;
    let mut crop = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        let plane = &bg.data()[c * n..(c + 1) * n];
        for y in top..top + ch {
            crop.extend_from_slice(&plane[y * bw + left..y * bw + left + cw]);
        }
    }
    let crop = RgbImage::new(ch, cw, crop).expect("crop keeps rgb in range");
    if (ch, cw) == (height, width) {
        crop
    } else {
        resize_rgb(&crop, height, width)
    }
}

const CROP_ATTEMPTS: usize = 8;

/// Run the full augmentation chain on one foreground/background pair.
pub fn make_training_sample<R: Rng + ?Sized>(
    item: &SourceItem,
    bg: &RgbImage,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<TrainingSample> {
    cfg.validate()?;
    let (h, w) = item.alpha.dims();
    let background = fit_background(bg, h, w);

    let normal = Normal::new(0.0, cfg.rotation_std_deg)
        .map_err(|e| Error::Config(format!("rotation distribution: {e}")))?;
    let degrees = normal.sample(rng);
    let rotated = if degrees == 0.0 {
        item.clone()
    } else {
        rotate_fg_alpha(item, degrees)
    };

    let k = rng.random_range(cfg.dilation_kmin..=cfg.dilation_kmax);
    let trimap = synthesize_trimap(&rotated.alpha, k)?;
    let planes = SamplePlanes::new(rotated.foreground, background, rotated.alpha, trimap)?;

    let mut resized = None;
    for attempt in 0..CROP_ATTEMPTS {
        let size = if attempt + 1 < CROP_ATTEMPTS {
            rng.random_range(cfg.crop_min..=cfg.crop_max)
        } else {
            // Never downscales, so the unknown band cannot be lost.
            cfg.out_size
        };
        let cropped = crop_unknown_centered(&planes, size, rng)?;
        let candidate = resize_sample(&cropped, cfg.out_size);
        if !candidate.trimap.unknown().is_empty() {
            resized = Some(candidate);
            break;
        }
        log::debug!("unknown region vanished after resize, redrawing crop");
    }
    let mut planes = resized.ok_or(Error::EmptyUnknown)?;

    if rng.random_bool(cfg.flip_prob) {
        planes = planes.flip_horizontal();
    }
    TrainingSample::from_parts(planes.foreground, planes.background, planes.alpha, planes.trimap)
}

/// PNG files of a directory keyed by file stem, in sorted order.
pub fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Foreground/alpha pairs from two directories aligned by file stem.
pub fn load_source_items(fg_dir: &Path, alpha_dir: &Path) -> Result<Vec<(String, SourceItem)>> {
    let fgs = png_stems(fg_dir)?;
    let alphas = png_stems(alpha_dir)?;
    let missing: Vec<&String> = fgs
        .keys()
        .filter(|k| !alphas.contains_key(*k))
        .chain(alphas.keys().filter(|k| !fgs.contains_key(*k)))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "foreground and alpha directories disagree on stems: {missing:?}"
        )));
    }
    if fgs.is_empty() {
        return Err(Error::Dataset(format!("no PNG foregrounds in {}", fg_dir.display())));
    }
    fgs.into_iter()
        .map(|(stem, path)| {
            let item = SourceItem::new(imgcore::load_rgb(&path)?, imgcore::load_alpha(&alphas[&stem])?)?;
            Ok((stem, item))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionRecord {
    pub name: String,
    pub foreground: String,
    pub background: String,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionManifest {
    pub version: u32,
    pub seed: u64,
    pub per_fg: usize,
    pub dilation_kmin: usize,
    pub dilation_kmax: usize,
    pub samples: Vec<CompositionRecord>,
}

pub const TEST_SET_KMIN: usize = 2;
pub const TEST_SET_KMAX: usize = 20;

/// Composite every foreground over `per_fg` backgrounds drawn from the pool
/// and write a test-set directory (`composite/`, `trimap/`, `alpha/`, `fg/`,
/// `bg/`, `manifest.json`). No augmentation beyond trimap synthesis.
pub fn build_composition_set(
    fg_dir: &Path,
    alpha_dir: &Path,
    bg_dir: &Path,
    out_dir: &Path,
    per_fg: usize,
    seed: u64,
) -> Result<CompositionManifest> {
    if per_fg == 0 {
        return Err(Error::Config("per_fg must be >= 1".into()));
    }
    let items = load_source_items(fg_dir, alpha_dir)?;
    let bgs: Vec<(String, PathBuf)> = png_stems(bg_dir)?.into_iter().collect();
    if bgs.is_empty() {
        return Err(Error::Dataset(format!("background pool {} is empty", bg_dir.display())));
    }
    for sub in ["composite", "trimap", "alpha", "fg", "bg"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let total = items.len() * per_fg;
    let samples = (0..total)
        .into_par_iter()
        .map(|index| {
            let (stem, item) = &items[index / per_fg];
            let mut rng = sample_rng(seed, index as u64);
            let (bg_stem, bg_path) = &bgs[rng.random_range(0..bgs.len())];
            let k = rng.random_range(TEST_SET_KMIN..=TEST_SET_KMAX);
            let (h, w) = item.alpha.dims();
            let background = fit_background(&imgcore::load_rgb(bg_path)?, h, w);
            let trimap = synthesize_trimap(&item.alpha, k)?;
            let image = composite(&item.foreground, &background, &item.alpha)?;
            let name = format!("{stem}_{:03}", index % per_fg);
            let file = format!("{name}.png");
            imgcore::save_rgb(&image, out_dir.join("composite").join(&file), BitDepth::Eight)?;
            imgcore::save_trimap(&trimap, out_dir.join("trimap").join(&file))?;
            imgcore::save_alpha(&item.alpha, out_dir.join("alpha").join(&file), BitDepth::Sixteen)?;
            imgcore::save_rgb(&item.foreground, out_dir.join("fg").join(&file), BitDepth::Eight)?;
            imgcore::save_rgb(&background, out_dir.join("bg").join(&file), BitDepth::Eight)?;
            Ok(CompositionRecord {
                name,
                foreground: stem.clone(),
                background: bg_stem.clone(),
                k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CompositionManifest {
        version: 1,
        seed,
        per_fg,
        dilation_kmin: TEST_SET_KMIN,
        dilation_kmax: TEST_SET_KMAX,
        samples,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A procedurally generated sample: a soft-edged ellipse of smoothly
/// varying foreground color over a different color ramp, with a trimap
/// dilated by `k`. Useful as a training fixture and in tests.
pub fn synthetic_sample(seed: u64, size: usize, k: usize) -> Result<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let cy = s * rng.random_range(0.35..0.65f32);
    let cx = s * rng.random_range(0.35..0.65f32);
    let ry = s * rng.random_range(0.18..0.3f32);
    let rx = s * rng.random_range(0.18..0.3f32);
    let soft = rng.random_range(1.5..4.0f32);
    let fg_base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0f32));
    let bg_base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.5f32));
    let tilt: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.3..0.3f32));
    let alpha = AlphaMatte::from_fn(size, size, |y, x| {
        let dy = (y as f32 + 0.5 - cy) / ry;
        let dx = (x as f32 + 0.5 - cx) / rx;
        let r = (dy * dy + dx * dx).sqrt();
        // Signed distance in pixels, approximately.
        let d = (1.0 - r) * ry.min(rx);
        (0.5 + d / (2.0 * soft)).clamp(0.0, 1.0)
    })?;
    let fg = RgbImage::from_fn(size, size, |c, _, x| {
        (fg_base[c] + tilt[c] * (x as f32 / s - 0.5)).clamp(0.0, 1.0)
    })?;
    let bg = RgbImage::from_fn(size, size, |c, y, x| {
        (bg_base[c] + tilt[(c + 1) % 3] * (y as f32 / s - 0.5) + 0.1 * ((x + y) % 7) as f32 / 7.0).clamp(0.0, 1.0)
    })?;
    let trimap = synthesize_trimap(&alpha, k)?;
    TrainingSample::from_parts(fg, bg, alpha, trimap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(h: usize, w: usize, v: [f32; 3]) -> RgbImage {
        RgbImage::filled(h, w, v).unwrap()
    }

    #[test]
    fn composite_endpoints_and_midpoint() {
        let f = rgb(2, 2, [0.8, 0.4, 0.0]);
        let b = rgb(2, 2, [0.0, 0.4, 0.8]);
        let one = AlphaMatte::filled(2, 2, 1.0).unwrap();
        let zero = AlphaMatte::filled(2, 2, 0.0).unwrap();
        assert_eq!(composite(&f, &b, &one).unwrap(), f);
        assert_eq!(composite(&f, &b, &zero).unwrap(), b);
        let half = AlphaMatte::filled(2, 2, 0.5).unwrap();
        let c = composite(&f, &b, &half).unwrap();
        for v in c.data() {
            assert!((v - 0.4).abs() < 1e-7);
        }
        assert!(composite(&f, &rgb(2, 3, [0.0; 3]), &one).is_err());
    }

    #[test]
    fn rotation_identity_and_half_turn() {
        let alpha = AlphaMatte::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let item = SourceItem::new(rgb(2, 2, [0.5; 3]), alpha.clone()).unwrap();
        assert_eq!(rotate_fg_alpha(&item, 0.0), item);
        let turned = rotate_fg_alpha(&item, 180.0);
        assert_eq!(turned.alpha.data(), &[0.4, 0.3, 0.2, 0.1]);
    }

    #[test]
    fn rotation_preserves_constant_interior() {
        let item = SourceItem::new(rgb(21, 21, [0.2; 3]), AlphaMatte::filled(21, 21, 0.7).unwrap()).unwrap();
        for deg in [3.0, -11.5, 37.0] {
            let r = rotate_fg_alpha(&item, deg);
            for y in 7..14 {
                for x in 7..14 {
                    assert!((r.alpha.get(y, x) - 0.7).abs() < 1e-6);
                }
            }
        }
    }

    fn brute_dilate(mask: &RegionMask, k: usize) -> Vec<bool> {
        let (h, w) = mask.dims();
        let (lo, hi) = ((k / 2) as isize, (k - 1 - k / 2) as isize);
        let mut out = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    continue;
                }
                for dy in -lo..=hi {
                    for dx in -lo..=hi {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                            out[yy as usize * w + xx as usize] = true;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn separable_dilation_matches_brute_force() {
        let bits: Vec<bool> = (0..13 * 9).map(|i| (i * 7919) % 23 == 0).collect();
        let mask = RegionMask::new(13, 9, bits).unwrap();
        for k in 1..=8 {
            assert_eq!(dilate_square(&mask, k).bits(), brute_dilate(&mask, k).as_slice(), "k={k}");
        }
    }

    #[test]
    fn hard_edge_gives_four_wide_band() {
        let alpha = AlphaMatte::from_fn(8, 8, |_, x| if x < 4 { 0.0 } else { 1.0 }).unwrap();
        let t = synthesize_trimap(&alpha, 3).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if (2..6).contains(&x) {
                    TrimapLabel::Unknown
                } else if x < 2 {
                    TrimapLabel::Background
                } else {
                    TrimapLabel::Foreground
                };
                assert_eq!(t.get(y, x), expect);
            }
        }
    }

    #[test]
    fn single_seed_dilates_to_neighbourhood() {
        let alpha = AlphaMatte::from_fn(7, 7, |y, x| if (y, x) == (3, 3) { 0.5 } else { 0.0 }).unwrap();
        let t = synthesize_trimap(&alpha, 3).unwrap();
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&y) && (2..=4).contains(&x);
                assert_eq!(t.get(y, x) == TrimapLabel::Unknown, inside);
            }
        }
    }

    #[test]
    fn constant_alpha_is_degenerate() {
        let a = AlphaMatte::filled(5, 5, 0.0).unwrap();
        assert!(matches!(synthesize_trimap(&a, 3), Err(Error::DegenerateAlpha(_))));
        let a = AlphaMatte::filled(5, 5, 1.0).unwrap();
        assert!(matches!(synthesize_trimap(&a, 3), Err(Error::DegenerateAlpha(_))));
    }

    fn planes_with_unknown(h: usize, w: usize, unk: &[(usize, usize)]) -> SamplePlanes {
        let trimap = Trimap::from_fn(h, w, |y, x| {
            if unk.contains(&(y, x)) {
                TrimapLabel::Unknown
            } else {
                TrimapLabel::Background
            }
        })
        .unwrap();
        let alpha = AlphaMatte::from_fn(h, w, |y, x| ((y * w + x) % 11) as f32 / 10.0).unwrap();
        SamplePlanes::new(rgb(h, w, [0.3; 3]), rgb(h, w, [0.6; 3]), alpha, trimap).unwrap()
    }

    #[test]
    fn crop_full_image_and_corner_clamp() {
        let p = planes_with_unknown(9, 9, &[(4, 4)]);
        let mut rng = sample_rng(1, 0);
        assert_eq!(crop_unknown_centered(&p, 9, &mut rng).unwrap(), p);

        let p = planes_with_unknown(64, 64, &[(0, 0)]);
        let c = crop_unknown_centered(&p, 32, &mut rng).unwrap();
        assert_eq!(c, p.crop(0, 0, 32, 32).unwrap());
        assert_eq!(clamp_window(0, 320, 640), 0);
        assert_eq!(clamp_window(639, 320, 640), 320);
    }

    #[test]
    fn crop_oversize_shrinks() {
        let p = planes_with_unknown(10, 12, &[(5, 5)]);
        let c = crop_unknown_centered(&p, 50, &mut sample_rng(0, 0)).unwrap();
        assert_eq!(c.dims(), (10, 10));
    }

    #[test]
    fn crop_center_depends_on_seed() {
        let unk: Vec<(usize, usize)> = (0..40).map(|i| (i, i)).collect();
        let p = planes_with_unknown(40, 40, &unk);
        let a1 = crop_unknown_centered(&p, 8, &mut sample_rng(1, 0)).unwrap();
        let a2 = crop_unknown_centered(&p, 8, &mut sample_rng(1, 0)).unwrap();
        assert_eq!(a1, a2);
        let differs = (2..10).any(|s| crop_unknown_centered(&p, 8, &mut sample_rng(s, 0)).unwrap() != a1);
        assert!(differs);
    }

    #[test]
    fn resize_keeps_trimap_labels() {
        let labels = [TrimapLabel::Background, TrimapLabel::Unknown, TrimapLabel::Foreground];
        let t = Trimap::from_fn(50, 50, |y, x| labels[(y / 7 + x / 5) % 3]).unwrap();
        let p = SamplePlanes::new(
            rgb(50, 50, [0.25; 3]),
            rgb(50, 50, [0.5; 3]),
            AlphaMatte::filled(50, 50, 0.75).unwrap(),
            t,
        )
        .unwrap();
        let r = resize_sample(&p, 32);
        assert_eq!(r.dims(), (32, 32));
        assert!(r.trimap.plane().iter().all(|v| [0.0, 0.5, 1.0].contains(v)));
        assert!(r.alpha.data().iter().all(|&v| v == 0.75));
        assert!(r.foreground.data().iter().all(|&v| v == 0.25));
        assert_eq!(resize_sample(&r, 32), r);
    }

    #[test]
    fn background_is_aspect_filled() {
        let bg = RgbImage::from_fn(10, 40, |_, _, x| x as f32 / 39.0).unwrap();
        let out = fit_background(&bg, 20, 20);
        assert_eq!(out.dims(), (20, 20));
        // The centered 10x10 window spans columns 15..25.
        assert!(out.get(0, 0, 0) >= 15.0 / 39.0 - 1e-6);
        assert!(out.get(0, 0, 19) <= 24.0 / 39.0 + 1e-6);
    }

    fn disc_item(size: usize) -> SourceItem {
        let c = (size as f32 - 1.0) / 2.0;
        let alpha = AlphaMatte::from_fn(size, size, |y, x| {
            let r = ((y as f32 - c).powi(2) + (x as f32 - c).powi(2)).sqrt();
            (size as f32 / 4.0 - r + 0.5).clamp(0.0, 1.0)
        })
        .unwrap();
        let fg = RgbImage::from_fn(size, size, |ch, y, x| ((ch * 31 + y * 7 + x * 3) % 97) as f32 / 96.0).unwrap();
        SourceItem::new(fg, alpha).unwrap()
    }

    #[test]
    fn training_sample_is_deterministic_and_consistent() {
        let item = disc_item(80);
        let bg = RgbImage::from_fn(60, 100, |c, y, x| ((c + y + 2 * x) % 50) as f32 / 49.0).unwrap();
        let cfg = AugmentConfig {
            crop_min: 40,
            crop_max: 80,
            out_size: 64,
            ..AugmentConfig::default()
        };
        let a = make_training_sample(&item, &bg, &cfg, &mut sample_rng(9, 3)).unwrap();
        let b = make_training_sample(&item, &bg, &cfg, &mut sample_rng(9, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (64, 64));
        assert!(!a.unknown().is_empty());
        let again = composite(&a.foreground, &a.background, &a.alpha_gt).unwrap();
        for (x, y) in again.data().iter().zip(a.composite.data()) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn disabled_augmentation_is_plain_composite() {
        let item = disc_item(64);
        let bg = rgb(64, 64, [0.9, 0.1, 0.5]);
        let cfg = AugmentConfig {
            rotation_std_deg: 0.0,
            flip_prob: 0.0,
            crop_min: 64,
            crop_max: 64,
            out_size: 64,
            ..AugmentConfig::default()
        };
        let s = make_training_sample(&item, &bg, &cfg, &mut sample_rng(4, 0)).unwrap();
        assert_eq!(s.composite, composite(&item.foreground, &bg, &item.alpha).unwrap());
    }
}
