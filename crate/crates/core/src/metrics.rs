//! Matting error measures over the trimap's unknown region, and a
//! directory-level report.
//!
//! Arguments are ordered `(pred, gt, unknown)`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::png_stems;
use crate::error::{Error, Result};
use crate::imgcore::{self, AlphaMatte, RegionMask};

pub const DEFAULT_SIGMA: f64 = 1.4;
pub const DEFAULT_THETA: f64 = 0.15;
pub const DEFAULT_DELTA: f64 = 0.1;
/// Divisor applied to summed measures in the benchmark presentation.
pub const BENCHMARK_SUM_SCALE: f64 = 1000.0;

fn check_dims(pred: &AlphaMatte, gt: &AlphaMatte, unknown: &RegionMask) -> Result<()> {
    if pred.dims() != gt.dims() || unknown.dims() != gt.dims() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?}, ground truth {:?}, region {:?}",
            pred.dims(),
            gt.dims(),
            unknown.dims()
        )));
    }
    Ok(())
}

fn unknown_pairs<'a>(
    pred: &'a AlphaMatte,
    gt: &'a AlphaMatte,
    unknown: &'a RegionMask,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    unknown
        .bits()
        .iter()
        .zip(pred.data().iter().zip(gt.data()))
        .filter(|(&u, _)| u)
        .map(|(_, (&p, &g))| (p as f64, g as f64))
}

/// Sum of absolute differences, raw and divided by 1000.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sad {
    pub raw: f64,
    pub scaled: f64,
}

pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte, unknown: &RegionMask) -> Result<Sad> {
    check_dims(pred, gt, unknown)?;
    let raw: f64 = unknown_pairs(pred, gt, unknown).map(|(p, g)| (p - g).abs()).sum();
    Ok(Sad {
        raw,
        scaled: raw / BENCHMARK_SUM_SCALE,
    })
}

pub fn mse(pred: &AlphaMatte, gt: &AlphaMatte, unknown: &RegionMask) -> Result<f64> {
    check_dims(pred, gt, unknown)?;
    if unknown.is_empty() {
        return Err(Error::EmptyUnknown);
    }
    let sum: f64 = unknown_pairs(pred, gt, unknown).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / unknown.count() as f64)
}

/// Sampled 1-D Gaussian and its derivative on `-r..=r`, each scaled to
/// unit L2 norm, with `r = ceil(3 sigma)`.
pub fn gaussian_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-r..=r)
        .map(|x| {
            let x = x as f64;
            (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let dg: Vec<f64> = (-r..=r)
        .zip(&g)
        .map(|(x, &gv)| -(x as f64) * gv / (sigma * sigma))
        .collect();
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / n).collect::<Vec<_>>()
    };
    (unit(g), unit(dg))
}

/// Mirror index into `0..n` without repeating the edge sample.
pub fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let r = i.rem_euclid(period);
    (if r < n as i64 { r } else { period - r }) as usize
}

/// Correlate rows with `kx` and columns with `ky`.
fn separable(img: &[f64], h: usize, w: usize, ky: &[f64], kx: &[f64]) -> Vec<f64> {
    let r = (kx.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx
                .iter()
                .enumerate()
                .map(|(j, k)| k * img[y * w + reflect(x as i64 + j as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[reflect(y as i64 + i as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian-derivative gradient magnitude of a matte.
pub fn gradient_magnitude(alpha: &AlphaMatte, sigma: f64) -> Vec<f64> {
    let (h, w) = alpha.dims();
    let img: Vec<f64> = alpha.data().iter().map(|&v| v as f64).collect();
    let (g, dg) = gaussian_kernels(sigma);
    let gx = separable(&img, h, w, &g, &dg);
    let gy = separable(&img, h, w, &dg, &g);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Sum over the unknown region of squared gradient-magnitude differences.
pub fn gradient_error(pred: &AlphaMatte, gt: &AlphaMatte, unknown: &RegionMask, sigma: f64) -> Result<f64> {
    check_dims(pred, gt, unknown)?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidValue(format!("sigma must be > 0, got {sigma}")));
    }
    let mp = gradient_magnitude(pred, sigma);
    let mg = gradient_magnitude(gt, sigma);
    Ok(unknown
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &u)| u)
        .map(|(i, _)| (mp[i] - mg[i]).powi(2))
        .sum())
}

/// Connectivity error together with whether the anchor region was empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connectivity {
    pub error: f64,
    pub anchor_empty: bool,
}

fn neighbors(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (i / w, i % w);
    [
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
    ]
    .into_iter()
    .flatten()
}

/// Pixels of `allowed` 4-connected to any seed (seeds must be allowed).
fn flood(seeds: &[usize], allowed: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut seen = vec![false; h * w];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for &s in seeds {
        if allowed[s] && !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbors(i, h, w) {
            if allowed[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Largest 4-connected component of `mask`; ties go to the component whose
/// first pixel comes earliest in raster order.
pub fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut label = vec![false; h * w];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..h * w {
        if !mask[start] || label[start] {
            continue;
        }
        let comp = flood(&[start], mask, h, w);
        let members: Vec<usize> = comp.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        for &m in &members {
            label[m] = true;
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best
}

/// Threshold levels `0, delta, 2 delta, ...` up to 1.
pub fn levels(delta: f64) -> Vec<f64> {
    let count = (1.0 / delta + 1e-9).floor() as usize;
    (0..=count).map(|j| j as f64 * delta).collect()
}

/// Per pixel, the largest level at which the pixel is still 4-connected to
/// `anchor` inside `{alpha >= level}`.
pub fn connection_levels(alpha: &AlphaMatte, anchor: &[usize], delta: f64) -> Vec<f64> {
    let (h, w) = alpha.dims();
    let a: Vec<f64> = alpha.data().iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; h * w];
    for t in levels(delta) {
        let allowed: Vec<bool> = a.iter().map(|&v| v >= t).collect();
        for (i, reached) in flood(anchor, &allowed, h, w).into_iter().enumerate() {
            if reached {
                out[i] = t;
            }
        }
    }
    out
}

fn phi(alpha: &AlphaMatte, l: &[f64], theta: f64) -> Vec<f64> {
    alpha
        .data()
        .iter()
        .zip(l)
        .map(|(&a, &li)| {
            let d = a as f64 - li;
            if d >= theta {
                1.0 - d
            } else {
                1.0
            }
        })
        .collect()
}

pub fn connectivity_error(
    pred: &AlphaMatte,
    gt: &AlphaMatte,
    unknown: &RegionMask,
    theta: f64,
    delta: f64,
) -> Result<Connectivity> {
    check_dims(pred, gt, unknown)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidValue(format!("level step must be in (0, 1], got {delta}")));
    }
    let (h, w) = gt.dims();
    let both: Vec<bool> = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| p == 1.0 && g == 1.0)
        .collect();
    let anchor = largest_component(&both, h, w);
    if anchor.is_empty() {
        return Ok(Connectivity {
            error: 0.0,
            anchor_empty: true,
        });
    }
    let phi_p = phi(pred, &connection_levels(pred, &anchor, delta), theta);
    let phi_g = phi(gt, &connection_levels(gt, &anchor, delta), theta);
    let error = unknown
        .bits()
        .iter()
        .enumerate()
        .filter(|(_, &u)| u)
        .map(|(i, _)| (phi_p[i] - phi_g[i]).abs())
        .sum();
    Ok(Connectivity {
        error,
        anchor_empty: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Sums as computed.
    Raw,
    /// SAD, gradient and connectivity sums divided by 1000.
    Benchmark,
}

impl Scale {
    fn sum_divisor(self) -> f64 {
        match self {
            Scale::Raw => 1.0,
            Scale::Benchmark => BENCHMARK_SUM_SCALE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub sigma: f64,
    pub theta: f64,
    pub delta: f64,
    pub scale: Scale,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            sigma: DEFAULT_SIGMA,
            theta: DEFAULT_THETA,
            delta: DEFAULT_DELTA,
            scale: Scale::Raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
    pub unknown: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub params: MetricParams,
    pub images: Vec<ImageMetrics>,
    pub mean: MetricMeans,
    pub warnings: Vec<String>,
}

/// All four measures for one matte pair, presented at `params.scale`.
/// The second value is a warning, if any.
pub fn evaluate_pair(
    name: &str,
    pred: &AlphaMatte,
    gt: &AlphaMatte,
    unknown: &RegionMask,
    params: &MetricParams,
) -> Result<(ImageMetrics, Option<String>)> {
    let div = params.scale.sum_divisor();
    let conn = connectivity_error(pred, gt, unknown, params.theta, params.delta)?;
    let warning = conn
        .anchor_empty
        .then(|| format!("{name}: no pixel is fully opaque in both mattes; connectivity set to 0"));
    Ok((
        ImageMetrics {
            name: name.to_string(),
            sad: sad(pred, gt, unknown)?.raw / div,
            mse: mse(pred, gt, unknown)?,
            grad: gradient_error(pred, gt, unknown, params.sigma)? / div,
            conn: conn.error / div,
            unknown: unknown.count(),
        },
        warning,
    ))
}

impl MetricReport {
    pub fn from_images(params: MetricParams, images: Vec<ImageMetrics>, warnings: Vec<String>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = MetricMeans {
            sad: images.iter().map(|m| m.sad).sum::<f64>() / n,
            mse: images.iter().map(|m| m.mse).sum::<f64>() / n,
            grad: images.iter().map(|m| m.grad).sum::<f64>() / n,
            conn: images.iter().map(|m| m.conn).sum::<f64>() / n,
        };
        MetricReport {
            params,
            images,
            mean,
            warnings,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,sad,mse,grad,conn,unknown\n");
        for m in &self.images {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.name, m.sad, m.mse, m.grad, m.conn, m.unknown);
        }
        s
    }

    /// Write `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Evaluate every ground-truth matte in `gt_dir` that has a prediction and a
/// trimap with the same stem. Missing counterparts are skipped with a
/// warning.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, trimap_dir: &Path, params: &MetricParams) -> Result<MetricReport> {
    let gts = png_stems(gt_dir)?;
    let preds = png_stems(pred_dir)?;
    let trimaps = png_stems(trimap_dir)?;
    let mut warnings = Vec::new();
    let mut jobs = Vec::new();
    for (stem, gt_path) in &gts {
        match (preds.get(stem), trimaps.get(stem)) {
            (Some(p), Some(t)) => jobs.push((stem.clone(), p.clone(), gt_path.clone(), t.clone())),
            (p, t) => {
                let what: Vec<&str> = [(p.is_none(), "prediction"), (t.is_none(), "trimap")]
                    .into_iter()
                    .filter(|(missing, _)| *missing)
                    .map(|(_, w)| w)
                    .collect();
                warnings.push(format!("{stem}: missing {}, skipped", what.join(" and ")));
            }
        }
    }
    let results: Vec<Result<(ImageMetrics, Option<String>)>> = jobs
        .par_iter()
        .map(|(stem, p, g, t)| {
            let pred = imgcore::load_alpha(p)?;
            let gt = imgcore::load_alpha(g)?;
            let unknown = imgcore::load_trimap(t)?.unknown();
            evaluate_pair(stem, &pred, &gt, &unknown, params)
        })
        .collect();
    let mut images = Vec::new();
    for ((stem, ..), r) in jobs.iter().zip(results) {
        match r {
            Ok((m, w)) => {
                images.push(m);
                warnings.extend(w);
            }
            Err(Error::EmptyUnknown) => warnings.push(format!("{stem}: trimap has no unknown pixels, skipped")),
            Err(e) => return Err(e),
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(MetricReport::from_images(*params, images, warnings))
}
