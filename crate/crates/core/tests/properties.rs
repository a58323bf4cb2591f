mod common;

use alphagan::config::ExperimentConfig;
use alphagan::datapipe::{self, AugmentConfig, SourceItem};
use alphagan::discriminator::{Discriminator, DiscriminatorConfig};
use alphagan::generator::{Generator, GeneratorConfig};
use alphagan::imgcore::{self, AlphaMatte, BitDepth, RegionMask, RgbImage, Trimap, TrimapLabel};
use alphagan::losses;
use alphagan::metrics;
use alphagan::nn::{Ctx, Mode};
use alphagan::tensor::{Tensor, Var};
use alphagan::trainer::predict::{padded_len, reflect_index};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_alpha(seed: u64, h: usize, w: usize) -> AlphaMatte {
    // Mix of exact 0, exact 1 and fractional values with spatial structure.
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cy = r.random_range(0.0..h as f32);
    let cx = r.random_range(0.0..w as f32);
    let rad = r.random_range(1.0..(h.max(w) as f32));
    let soft = r.random_range(0.5..3.0f32);
    AlphaMatte::from_fn(h, w, |y, x| {
        let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
        ((rad - d) / soft + 0.5).clamp(0.0, 1.0)
    })
    .unwrap()
}

fn noise_alpha(seed: u64, h: usize, w: usize) -> AlphaMatte {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w)
        .map(|_| match r.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => r.random_range(0.0..1.0),
        })
        .collect();
    AlphaMatte::new(h, w, data).unwrap()
}

fn labels_partition(t: &Trimap) -> bool {
    let (f, b, u) = (t.foreground(), t.background(), t.unknown());
    (0..f.bits().len()).all(|i| [f.bits()[i], b.bits()[i], u.bits()[i]].iter().filter(|&&v| v).count() == 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn alpha_png_round_trip_is_idempotent(seed in any::<u64>(), h in 1usize..20, w in 1usize..20, sixteen in any::<bool>()) {
        let depth = if sixteen { BitDepth::Sixteen } else { BitDepth::Eight };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        imgcore::save_alpha(&noise_alpha(seed, h, w), &p, depth).unwrap();
        let once = imgcore::load_alpha(&p).unwrap();
        prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
        imgcore::save_alpha(&once, &p, depth).unwrap();
        prop_assert_eq!(imgcore::load_alpha(&p).unwrap(), once);
    }

    #[test]
    fn loaded_rgb_is_in_unit_range(seed in any::<u64>(), h in 1usize..16, w in 1usize..16) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let img = RgbImage::new(h, w, (0..3 * h * w).map(|_| r.random_range(0.0..=1.0)).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        imgcore::save_rgb(&img, &p, BitDepth::Eight).unwrap();
        let back = imgcore::load_rgb(&p).unwrap();
        prop_assert!(back.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn trimap_regions_partition_and_are_sound(seed in any::<u64>(), h in 2usize..40, w in 2usize..40, k in 1usize..21) {
        let alpha = random_alpha(seed, h, w);
        prop_assume!(alpha.data().iter().any(|&v| v != alpha.data()[0]));
        let t = datapipe::synthesize_trimap(&alpha, k).unwrap();
        prop_assert!(labels_partition(&t));
        for (i, &a) in alpha.data().iter().enumerate() {
            match t.labels()[i] {
                TrimapLabel::Foreground => prop_assert_eq!(a, 1.0),
                TrimapLabel::Background => prop_assert_eq!(a, 0.0),
                TrimapLabel::Unknown => {}
            }
            if a > 0.0 && a < 1.0 {
                prop_assert_eq!(t.labels()[i], TrimapLabel::Unknown);
            }
        }
    }

    #[test]
    fn dilation_grows_with_kernel(seed in any::<u64>(), h in 2usize..32, w in 2usize..32, k1 in 1usize..20, dk in 0usize..6) {
        let alpha = random_alpha(seed, h, w);
        prop_assume!(alpha.data().iter().any(|&v| v != alpha.data()[0]));
        let small = datapipe::synthesize_trimap(&alpha, k1).unwrap().unknown();
        let large = datapipe::synthesize_trimap(&alpha, k1 + dk).unwrap().unknown();
        prop_assert!(small.bits().iter().zip(large.bits()).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn augmented_samples_obey_compositing(seed in any::<u64>(), index in 0u64..1000) {
        let base = datapipe::synthetic_sample(seed % 64, 80, 5).unwrap();
        let item = SourceItem::new(base.foreground.clone(), base.alpha_gt.clone()).unwrap();
        let cfg = AugmentConfig { crop_min: 48, crop_max: 96, out_size: 64, ..AugmentConfig::default() };
        let s = datapipe::make_training_sample(&item, &base.background, &cfg, &mut datapipe::sample_rng(seed, index)).unwrap();
        let again = datapipe::make_training_sample(&item, &base.background, &cfg, &mut datapipe::sample_rng(seed, index)).unwrap();
        prop_assert_eq!(&s, &again);
        prop_assert_eq!(s.dims(), (64, 64));
        prop_assert!(labels_partition(&s.trimap));
        prop_assert!(!s.unknown().is_empty());
        for c in 0..3 {
            for i in 0..64 * 64 {
                let a = s.alpha_gt.data()[i];
                let want = a * s.foreground.plane(c)[i] + (1.0 - a) * s.background.plane(c)[i];
                prop_assert!((s.composite.plane(c)[i] - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn matting_losses_sit_on_the_eps_floor_only_at_equality(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let gt = noise_alpha(seed, h, w);
        let pred = noise_alpha(seed ^ 0x9e37, h, w);
        let region = RegionMask::full(h, w);
        let eps = losses::DEFAULT_EPS;
        let same = losses::alpha_prediction_loss(&gt, &gt, &region, eps).unwrap();
        prop_assert!((same - eps).abs() < 1e-15);
        let l = losses::alpha_prediction_loss(&pred, &gt, &region, eps).unwrap();
        prop_assert!(l >= eps);
        if pred != gt {
            prop_assert!(l > eps);
        }
    }

    #[test]
    fn matting_losses_ignore_known_pixels(seed in any::<u64>(), h in 2usize..12, w in 2usize..12) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let gt = noise_alpha(seed, h, w);
        let pred = noise_alpha(seed.wrapping_add(1), h, w);
        let unknown = RegionMask::new(h, w, (0..h * w).map(|i| i == 0 || r.random_bool(0.5)).collect()).unwrap();
        let perturbed = AlphaMatte::from_fn(h, w, |y, x| {
            if unknown.get(y, x) { pred.get(y, x) } else { 1.0 - pred.get(y, x) }
        }).unwrap();
        let fg = RgbImage::from_fn(h, w, |c, y, x| ((c + y * 3 + x) % 5) as f32 / 4.0).unwrap();
        let bg = RgbImage::from_fn(h, w, |c, y, x| ((c * 2 + y + x * 2) % 7) as f32 / 6.0).unwrap();
        let t = Trimap::from_fn(h, w, |y, x| if unknown.get(y, x) { TrimapLabel::Unknown } else { TrimapLabel::Background }).unwrap();
        let sample = datapipe::TrainingSample::from_parts(fg, bg, gt.clone(), t).unwrap();
        let eps = losses::DEFAULT_EPS;
        prop_assert_eq!(
            losses::alpha_prediction_loss(&pred, &gt, &unknown, eps).unwrap(),
            losses::alpha_prediction_loss(&perturbed, &gt, &unknown, eps).unwrap()
        );
        prop_assert_eq!(
            losses::composition_loss(&pred, &sample, &unknown, eps).unwrap(),
            losses::composition_loss(&perturbed, &sample, &unknown, eps).unwrap()
        );
    }

    #[test]
    fn discriminator_loss_ignores_batch_order(scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..6), rot in 0usize..5) {
        let n = scores.len();
        let real: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let fake: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let loss = |r: Vec<f64>, f: Vec<f64>| {
            let rv = Var::constant(Tensor::new(vec![n], r).unwrap());
            let fv = Var::constant(Tensor::new(vec![n], f).unwrap());
            losses::gan_loss_d_var(&rv, &fv, 1e-7).unwrap().value().item()
        };
        let k = rot % n;
        let rotate = |v: &Vec<f64>| { let mut v = v.clone(); v.rotate_left(k); v };
        let a = loss(real.clone(), fake.clone());
        let b = loss(rotate(&real), rotate(&fake));
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_non_negative_and_zero_on_identity(seed in any::<u64>(), h in 3usize..20, w in 3usize..20) {
        let gt = noise_alpha(seed, h, w);
        let pred = noise_alpha(seed.wrapping_mul(31).wrapping_add(7), h, w);
        let u = RegionMask::full(h, w);
        let (s, m, g, c) = (
            metrics::sad(&pred, &gt, &u).unwrap().raw,
            metrics::mse(&pred, &gt, &u).unwrap(),
            metrics::gradient_error(&pred, &gt, &u, 1.4).unwrap(),
            metrics::connectivity_error(&pred, &gt, &u, 0.15, 0.1).unwrap().error,
        );
        prop_assert!(s >= 0.0 && m >= 0.0 && g >= 0.0 && c >= 0.0);
        prop_assert_eq!(metrics::sad(&gt, &gt, &u).unwrap().raw, 0.0);
        prop_assert_eq!(metrics::mse(&gt, &gt, &u).unwrap(), 0.0);
        prop_assert_eq!(metrics::gradient_error(&gt, &gt, &u, 1.4).unwrap(), 0.0);
        prop_assert_eq!(metrics::connectivity_error(&gt, &gt, &u, 0.15, 0.1).unwrap().error, 0.0);
    }

    #[test]
    fn larger_errors_never_lower_sad_or_mse(seed in any::<u64>(), h in 1usize..16, w in 1usize..16, scale in 1.0f32..3.0) {
        let gt = noise_alpha(seed, h, w);
        let pred = noise_alpha(seed ^ 0x55, h, w);
        let far = AlphaMatte::from_fn(h, w, |y, x| {
            let g = gt.get(y, x);
            (g + (pred.get(y, x) - g) * scale).clamp(0.0, 1.0)
        }).unwrap();
        let u = RegionMask::full(h, w);
        prop_assert!(metrics::sad(&far, &gt, &u).unwrap().raw >= metrics::sad(&pred, &gt, &u).unwrap().raw - 1e-9);
        prop_assert!(metrics::mse(&far, &gt, &u).unwrap() >= metrics::mse(&pred, &gt, &u).unwrap() - 1e-12);
    }

    #[test]
    fn pixels_far_from_the_region_do_not_matter(seed in any::<u64>(), y0 in 0usize..4, x0 in 0usize..4) {
        let (h, w) = (24, 24);
        let gt = random_alpha(seed, h, w);
        let pred = noise_alpha(seed ^ 0xabc, h, w);
        let unknown = RegionMask::new(h, w, (0..h * w).map(|i| (y0..y0 + 4).contains(&(i / w)) && (x0..x0 + 4).contains(&(i % w))).collect()).unwrap();
        // Farther than the gradient kernel radius (5) from every unknown pixel.
        let far = |y: usize, x: usize| y >= y0 + 4 + 5 || x >= x0 + 4 + 5;
        let moved = AlphaMatte::from_fn(h, w, |y, x| if far(y, x) { 1.0 - pred.get(y, x) } else { pred.get(y, x) }).unwrap();
        prop_assert_eq!(metrics::sad(&pred, &gt, &unknown).unwrap(), metrics::sad(&moved, &gt, &unknown).unwrap());
        prop_assert_eq!(metrics::mse(&pred, &gt, &unknown).unwrap(), metrics::mse(&moved, &gt, &unknown).unwrap());
        prop_assert_eq!(
            metrics::gradient_error(&pred, &gt, &unknown, 1.4).unwrap(),
            metrics::gradient_error(&moved, &gt, &unknown, 1.4).unwrap()
        );
    }

    #[test]
    fn config_overrides_survive_serialization(steps in 0u64..100_000, seed in any::<u64>(), lr in 1e-6f64..1e-2, gan in any::<bool>()) {
        let mut cfg = ExperimentConfig::default();
        cfg.set("train.steps", &steps.to_string()).unwrap();
        cfg.set("train.seed", &seed.to_string()).unwrap();
        cfg.set("train.lr_g", &lr.to_string()).unwrap();
        cfg.set("train.gan_enabled", &gan.to_string()).unwrap();
        prop_assert_eq!(cfg.train.steps, steps);
        prop_assert_eq!(cfg.train.seed, seed);
        prop_assert_eq!(cfg.train.lr_g, lr);
        prop_assert_eq!(cfg.train.gan_enabled, gan);
        let doc: serde_json::Value = serde_json::from_str(&cfg.to_json_pretty().unwrap()).unwrap();
        prop_assert_eq!(ExperimentConfig::from_json(doc).unwrap(), cfg);
    }

    #[test]
    fn reflect_padding_stays_in_bounds(n in 1usize..300, i in 0usize..2000) {
        prop_assert!(reflect_index(i, n) < n);
        let p = padded_len(n);
        prop_assert!(p >= n && p % 32 == 0 && p - n < 32);
        if i < n {
            prop_assert_eq!(reflect_index(i, n), i);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generator_shape_law_and_open_unit_range(hk in 1usize..5, wk in 1usize..5, os16 in any::<bool>(), seed in any::<u64>()) {
        let cfg = GeneratorConfig {
            output_stride: if os16 { 16 } else { 8 },
            width_multiplier: 0.0625,
            ..GeneratorConfig::default()
        };
        let net = Generator::new(&cfg).unwrap();
        let w = net.init_weights(None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(w.check_against(&net.specs()).is_ok());
        let (h, wd) = (32 * hk, 32 * wk);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let input = Tensor::new(vec![2, 4, h, wd], (0..8 * h * wd).map(|_| r.random_range(-1.0..1.0f32)).collect()).unwrap();
        let rgb = Tensor::new(vec![2, 3, h, wd], (0..6 * h * wd).map(|_| r.random_range(0.0..1.0f32)).collect()).unwrap();
        let eval = Ctx::<f32>::new(&w, Mode::EVAL);
        let enc = net.encoder_forward(&eval, &Var::constant(input.clone())).unwrap();
        let os = cfg.output_stride;
        prop_assert_eq!(&enc.bottleneck.shape()[2..], &[h / os, wd / os]);
        let out = net.forward(&eval, &Var::constant(input.clone()), &Var::constant(rgb.clone())).unwrap();
        prop_assert_eq!(out.shape(), &[2, 1, h, wd]);
        prop_assert!(out.value().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Untrained running statistics leave logits large enough to round to 0 or 1;
        // batch statistics keep them moderate.
        let batch = Ctx::<f32>::new(&w, Mode::FROZEN_TRAIN);
        let out = net.forward(&batch, &Var::constant(input), &Var::constant(rgb)).unwrap();
        prop_assert!(out.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn discriminator_grid_and_score_range(k in 9usize..14, seed in any::<u64>()) {
        let cfg = DiscriminatorConfig { base_width: 8, ..DiscriminatorConfig::default() };
        let net = Discriminator::new(&cfg).unwrap();
        let w = net.init_weights(&mut ChaCha8Rng::seed_from_u64(seed));
        let side = 8 * k;
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let x = Tensor::new(vec![2, 4, side, side], (0..8 * side * side).map(|_| r.random_range(0.0..1.0f32)).collect()).unwrap();
        let ctx = Ctx::<f32>::new(&w, Mode::EVAL);
        let (scores, mean) = net.forward(&ctx, &Var::constant(x)).unwrap();
        prop_assert_eq!(scores.shape(), &[2, 1, side / 8 - 2, side / 8 - 2]);
        prop_assert!(mean.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
