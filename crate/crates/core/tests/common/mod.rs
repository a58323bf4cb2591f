#![allow(dead_code)]

use alphagan::tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between the reverse-mode gradient of
/// `sum(f(x) * r)` and central differences with step `h`, over `coords`
/// randomly chosen entries of `x` (all entries if there are fewer).
/// A difference below `abs_floor` counts as agreement.
pub fn gradcheck(
    x: &Tensor<f64>,
    f: impl Fn(&Var<f64>) -> Var<f64>,
    coords: usize,
    h: f64,
    abs_floor: f64,
    seed: u64,
) -> f64 {
    gradcheck_steps(x, f, coords, &[h], abs_floor, seed)
}

/// As [`gradcheck`], keeping for each coordinate the best agreement over
/// several step sizes. Piecewise-linear layers make a single step land on
/// the far side of a kink now and then; a genuine gradient error shows up at
/// every step.
pub fn gradcheck_steps(
    x: &Tensor<f64>,
    f: impl Fn(&Var<f64>) -> Var<f64>,
    coords: usize,
    steps: &[f64],
    abs_floor: f64,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let leaf = Var::leaf(x.clone());
    let out = f(&leaf);
    let weights = uniform(out.shape(), -1.0, 1.0, &mut r);
    let grads = out.backward_with(weights.clone());
    let analytic = grads.get_or_zeros(&leaf);
    let n = x.numel();
    let picks: Vec<usize> = if n <= coords {
        (0..n).collect()
    } else {
        (0..coords).map(|_| r.random_range(0..n)).collect()
    };
    let mut worst: f64 = 0.0;
    for i in picks {
        let eval = |delta: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] += delta;
            dot(f(&Var::constant(xp)).value(), &weights)
        };
        let a = analytic.data()[i];
        let err = steps
            .iter()
            .map(|&h| {
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let diff = (a - numeric).abs();
                if diff > abs_floor {
                    diff / a.abs().max(numeric.abs())
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(err);
    }
    worst
}

/// Per-pixel reference implementations of the matting metrics and of square
/// dilation. Deliberately naive: no separability, no shared flood fills.
pub mod oracle {
    use alphagan::imgcore::{AlphaMatte, RegionMask};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn vals(a: &AlphaMatte) -> Vec<f64> {
        a.data().iter().map(|&v| v as f64).collect()
    }

    pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte, u: &RegionMask) -> f64 {
        let mut s = 0.0;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if u.get(y, x) {
                    s += (pred.get(y, x) as f64 - gt.get(y, x) as f64).abs();
                }
            }
        }
        s
    }

    pub fn mse(pred: &AlphaMatte, gt: &AlphaMatte, u: &RegionMask) -> f64 {
        let mut s = 0.0;
        let mut n = 0usize;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                if u.get(y, x) {
                    let d = pred.get(y, x) as f64 - gt.get(y, x) as f64;
                    s += d * d;
                    n += 1;
                }
            }
        }
        s / n as f64
    }

    fn mirror(mut i: i64, n: usize) -> usize {
        let n = n as i64;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    }

    /// Full 2-D kernels for d/dx and d/dy, each factor scaled to unit L2 norm.
    fn kernels(sigma: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, i64) {
        let r = (3.0 * sigma).ceil() as i64;
        let taps: Vec<f64> = (-r..=r).map(|t| t as f64).collect();
        let g: Vec<f64> = taps.iter().map(|t| (-t * t / (2.0 * sigma * sigma)).exp()).collect();
        let d: Vec<f64> = taps.iter().zip(&g).map(|(t, gv)| t * gv).collect();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let (ng, nd) = (norm(&g), norm(&d));
        let n = taps.len();
        let mut kx = vec![vec![0.0; n]; n];
        let mut ky = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                kx[a][b] = g[a] / ng * d[b] / nd;
                ky[a][b] = d[a] / nd * g[b] / ng;
            }
        }
        (kx, ky, r)
    }

    fn magnitude(a: &AlphaMatte, sigma: f64) -> Vec<f64> {
        let (h, w) = a.dims();
        let v = vals(a);
        let (kx, ky, r) = kernels(sigma);
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut gx, mut gy) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let p = v[mirror(y as i64 + dy, h) * w + mirror(x as i64 + dx, w)];
                        gx += kx[(dy + r) as usize][(dx + r) as usize] * p;
                        gy += ky[(dy + r) as usize][(dx + r) as usize] * p;
                    }
                }
                out[y * w + x] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }

    pub fn gradient(pred: &AlphaMatte, gt: &AlphaMatte, u: &RegionMask, sigma: f64) -> f64 {
        let (mp, mg) = (magnitude(pred, sigma), magnitude(gt, sigma));
        u.bits().iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| (mp[i] - mg[i]).powi(2)).sum()
    }

    /// Depth-first search from `start` through `allowed`, true when any
    /// target pixel is reached.
    fn reaches(start: usize, allowed: &[bool], target: &[bool], h: usize, w: usize) -> bool {
        if !allowed[start] {
            return false;
        }
        let mut seen = vec![false; h * w];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            if target[i] {
                return true;
            }
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            for (ny, nx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if allowed[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    }

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    /// Largest 4-connected component via union-find; ties favour the
    /// component holding the smallest raster index.
    pub fn anchor(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
        let mut parent: Vec<usize> = (0..h * w).collect();
        for i in 0..h * w {
            if !mask[i] {
                continue;
            }
            if i % w + 1 < w && mask[i + 1] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + 1));
                parent[a.max(b)] = a.min(b);
            }
            if i + w < h * w && mask[i + w] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, i + w));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut size = vec![0usize; h * w];
        for i in 0..h * w {
            if mask[i] {
                let r = find(&mut parent, i);
                size[r] += 1;
            }
        }
        // Roots are the minimum index of their component.
        let best = (0..h * w).filter(|&i| size[i] > 0).fold(None, |acc: Option<usize>, i| match acc {
            Some(b) if size[b] >= size[i] => Some(b),
            _ => Some(i),
        });
        (0..h * w).map(|i| mask[i] && Some(find(&mut parent, i)) == best).collect()
    }

    /// `None` when no pixel is fully opaque in both mattes.
    pub fn connectivity(pred: &AlphaMatte, gt: &AlphaMatte, u: &RegionMask, theta: f64, delta: f64) -> Option<f64> {
        let (h, w) = gt.dims();
        let (p, g) = (vals(pred), vals(gt));
        let both: Vec<bool> = (0..h * w).map(|i| p[i] == 1.0 && g[i] == 1.0).collect();
        let omega = anchor(&both, h, w);
        if !omega.iter().any(|&b| b) {
            return None;
        }
        let mut levels = Vec::new();
        let mut j = 0usize;
        while j as f64 * delta <= 1.0 + 1e-12 {
            levels.push(j as f64 * delta);
            j += 1;
        }
        let phi = |a: &[f64], i: usize| {
            let mut l = 0.0;
            for &t in &levels {
                let allowed: Vec<bool> = a.iter().map(|&v| v >= t).collect();
                if reaches(i, &allowed, &omega, h, w) {
                    l = t;
                }
            }
            let d = a[i] - l;
            if d >= theta {
                1.0 - d
            } else {
                1.0
            }
        };
        Some((0..h * w).filter(|&i| u.bits()[i]).map(|i| (phi(&p, i) - phi(&g, i)).abs()).sum())
    }

    /// Square k×k dilation by scanning every window that covers a pixel.
    pub fn dilate(mask: &RegionMask, k: usize) -> Vec<bool> {
        let (h, w) = mask.dims();
        let before = ((k - 1) / 2) as i64;
        let after = (k / 2) as i64;
        let mut out = vec![false; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut hit = false;
                for dy in -before..=after {
                    for dx in -before..=after {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy >= 0 && sx >= 0 && sy < h as i64 && sx < w as i64 && mask.get(sy as usize, sx as usize) {
                            hit = true;
                        }
                    }
                }
                out[y as usize * w + x as usize] = hit;
            }
        }
        out
    }

    /// A matte pair with opaque plateaus, transparent regions and quantized
    /// soft edges, so every metric has something to measure.
    pub fn matte_pair(r: &mut ChaCha8Rng, h: usize, w: usize) -> (AlphaMatte, AlphaMatte) {
        let blob = |r: &mut ChaCha8Rng| (r.random_range(0.0..h as f64), r.random_range(0.0..w as f64), r.random_range(2.0..(h.max(w) as f64 / 2.0)));
        let blobs: Vec<_> = (0..r.random_range(1..4)).map(|_| blob(r)).collect();
        let field = |y: usize, x: usize, b: &[(f64, f64, f64)]| {
            b.iter()
                .map(|&(cy, cx, rad)| {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    ((rad - d) / 2.0 + 0.5).clamp(0.0, 1.0)
                })
                .fold(0.0, f64::max)
        };
        let q = |v: f64| (v * 20.0).round() / 20.0;
        let gt: Vec<f32> = (0..h * w).map(|i| q(field(i / w, i % w, &blobs)) as f32).collect();
        let pred: Vec<f32> = gt
            .iter()
            .map(|&v| {
                if r.random_bool(0.3) {
                    q((v as f64 + r.random_range(-0.4..0.4)).clamp(0.0, 1.0)) as f32
                } else {
                    v
                }
            })
            .collect();
        (AlphaMatte::new(h, w, pred).unwrap(), AlphaMatte::new(h, w, gt).unwrap())
    }
}
