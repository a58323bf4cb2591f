//! Encoder-decoder alpha predictor.
//!
//! The encoder is a 50-layer bottleneck residual network whose last two
//! stages trade stride for dilation, followed by atrous spatial pyramid
//! pooling. The decoder climbs back to full resolution using the stem's
//! max-pooling indices, a transposed convolution and skip features, and
//! ends in a sigmoid.
//!
//! Encoder tensors use the conventional classifier names under an
//! `encoder.` prefix (`encoder.layer3.2.conv2.weight`), so pretrained
//! classifier weights load by name.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{AlphaMatte, RgbImage, Trimap};
use crate::nn::{Activation, BatchNorm, Conv, ConvBlock, Ctx, Mode, TensorSpec, Weights};
use crate::tensor::ops::{self, ConvGeom, PoolIndices};
use crate::tensor::{Scalar, Tensor, Var};

pub const RGB_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const RGB_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Spatial sizes must be multiples of this.
pub const SIZE_MULTIPLE: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub output_stride: usize,
    pub use_aspp: bool,
    pub use_skips: bool,
    pub use_multigrid: bool,
    pub width_multiplier: f64,
    pub input_channels: usize,
    /// Standardize RGB with the classifier's channel statistics.
    pub normalize_rgb: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            output_stride: 8,
            use_aspp: true,
            use_skips: true,
            use_multigrid: false,
            width_multiplier: 1.0,
            input_channels: 4,
            normalize_rgb: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_multigrid {
            return Err(Error::Unsupported("multi-grid dilation is not implemented".into()));
        }
        if self.output_stride != 8 && self.output_stride != 16 {
            return Err(Error::Config(format!(
                "output_stride must be 8 or 16, got {}",
                self.output_stride
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "width_multiplier must be in (0, 1], got {}",
                self.width_multiplier
            )));
        }
        if self.input_channels != 4 {
            return Err(Error::Config(format!(
                "input_channels must be 4 (RGB + trimap), got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    /// Channel width after applying the width multiplier: nearest multiple
    /// of 8, at least 8.
    pub fn width(&self, channels: usize) -> usize {
        let scaled = (channels as f64 * self.width_multiplier / 8.0).round() as usize * 8;
        scaled.max(8)
    }
}

fn conv_bn_named(conv: String, bn: String, cin: usize, cout: usize, geom: ConvGeom, act: Activation) -> ConvBlock {
    ConvBlock {
        conv: Conv::new(conv, cin, cout, geom, false),
        norm: Some(BatchNorm::new(bn, cout)),
        act,
    }
}

fn conv3(dilation: usize, stride: usize) -> ConvGeom {
    ConvGeom::new(3, stride, dilation, dilation)
}

const POINTWISE: ConvGeom = ConvGeom::new(1, 1, 0, 1);

#[derive(Clone, Debug)]
struct Bottleneck {
    reduce: ConvBlock,
    spatial: ConvBlock,
    expand: ConvBlock,
    shortcut: Option<ConvBlock>,
}

impl Bottleneck {
    fn new(prefix: &str, cin: usize, mid: usize, cout: usize, stride: usize, dilation: usize) -> Self {
        let relu = Activation::Relu;
        let named = |i: usize| (format!("{prefix}.conv{i}"), format!("{prefix}.bn{i}"));
        let (c1, b1) = named(1);
        let (c2, b2) = named(2);
        let (c3, b3) = named(3);
        let shortcut = (stride != 1 || cin != cout).then(|| {
            conv_bn_named(
                format!("{prefix}.downsample.0"),
                format!("{prefix}.downsample.1"),
                cin,
                cout,
                ConvGeom::new(1, stride, 0, 1),
                Activation::None,
            )
        });
        Bottleneck {
            reduce: conv_bn_named(c1, b1, cin, mid, POINTWISE, relu),
            spatial: conv_bn_named(c2, b2, mid, mid, conv3(dilation, stride), relu),
            expand: conv_bn_named(c3, b3, mid, cout, POINTWISE, Activation::None),
            shortcut,
        }
    }

    fn specs(&self, out: &mut Vec<TensorSpec>) {
        self.reduce.specs(out);
        self.spatial.specs(out);
        self.expand.specs(out);
        if let Some(s) = &self.shortcut {
            s.specs(out);
        }
    }

    fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.reduce.forward(ctx, x)?;
        let y = self.spatial.forward(ctx, &y)?;
        let y = self.expand.forward(ctx, &y)?;
        let identity = match &self.shortcut {
            Some(s) => s.forward(ctx, x)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&y, &identity)?))
    }
}

#[derive(Clone, Debug)]
enum Context {
    Pyramid {
        branches: Vec<ConvBlock>,
        image_pool: ConvBlock,
        project: ConvBlock,
    },
    Reduce(ConvBlock),
}

#[derive(Clone, Debug)]
struct Decoder {
    skip4: Option<ConvBlock>,
    refine: Vec<ConvBlock>,
    skip2: Option<ConvBlock>,
    fuse: ConvBlock,
    upconv: ConvBlock,
    smooth: ConvBlock,
    detail: Vec<ConvBlock>,
    head: Conv,
}

/// Encoder activations the decoder consumes.
pub struct EncoderOutput<T: Scalar> {
    pub bottleneck: Var<T>,
    pub skip_os4: Var<T>,
    pub skip_os2: Var<T>,
    pub pool_indices: PoolIndices,
}

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    stem: ConvBlock,
    stages: Vec<Vec<Bottleneck>>,
    context: Context,
    decoder: Decoder,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let w = |c| cfg.width(c);
        let relu = Activation::Relu;
        let stem_ch = w(64);
        let stem = conv_bn_named(
            "encoder.conv1".into(),
            "encoder.bn1".into(),
            cfg.input_channels,
            stem_ch,
            ConvGeom::new(7, 2, 3, 1),
            relu,
        );

        // (blocks, mid width, stride, dilation) per stage.
        let plan: [(usize, usize, usize, usize); 4] = match cfg.output_stride {
            8 => [(3, 64, 1, 1), (4, 128, 2, 1), (6, 256, 1, 2), (3, 512, 1, 4)],
            _ => [(3, 64, 1, 1), (4, 128, 2, 1), (6, 256, 2, 1), (3, 512, 1, 2)],
        };
        let mut stages = Vec::new();
        let mut cin = stem_ch;
        for (si, &(blocks, mid, stride, dilation)) in plan.iter().enumerate() {
            let (mid, cout) = (w(mid), w(mid * 4));
            let stage = (0..blocks)
                .map(|bi| {
                    let prefix = format!("encoder.layer{}.{bi}", si + 1);
                    let s = if bi == 0 { stride } else { 1 };
                    let block_in = if bi == 0 { cin } else { cout };
                    Bottleneck::new(&prefix, block_in, mid, cout, s, dilation)
                })
                .collect();
            stages.push(stage);
            cin = cout;
        }
        let bottleneck_ch = cin;
        let skip4_ch = w(256);
        let ctx_ch = w(256);

        let block = |name: &str, cin, cout, geom| ConvBlock::conv_bn(name, cin, cout, geom, relu);
        let context = if cfg.use_aspp {
            let mut branches = vec![block("aspp.branch0", bottleneck_ch, ctx_ch, POINTWISE)];
            for (i, rate) in [6, 12, 18].into_iter().enumerate() {
                branches.push(block(&format!("aspp.branch{}", i + 1), bottleneck_ch, ctx_ch, conv3(rate, 1)));
            }
            Context::Pyramid {
                branches,
                image_pool: block("aspp.image_pool", bottleneck_ch, ctx_ch, POINTWISE),
                project: block("aspp.project", 5 * ctx_ch, ctx_ch, POINTWISE),
            }
        } else {
            Context::Reduce(block("aspp.reduce", bottleneck_ch, ctx_ch, POINTWISE))
        };

        let skips = cfg.use_skips;
        let skip4 = skips.then(|| block("decoder.skip4", skip4_ch, w(48), POINTWISE));
        let mut ch = ctx_ch + if skips { w(48) } else { 0 };
        let mut refine = Vec::new();
        for (i, out) in [w(256), w(128), w(64)].into_iter().enumerate() {
            refine.push(block(&format!("decoder.refine{i}"), ch, out, conv3(1, 1)));
            ch = out;
        }
        debug_assert_eq!(ch, stem_ch, "unpooling needs the stem's channel count");
        let skip2 = skips.then(|| block("decoder.skip2", stem_ch, w(32), POINTWISE));
        let fuse_in = ch + if skips { w(32) } else { 0 };
        let fuse = block("decoder.fuse", fuse_in, w(64), conv3(1, 1));
        let upconv = ConvBlock {
            conv: Conv::new("decoder.upconv.conv", w(64), w(64), ConvGeom::new(3, 2, 1, 1), false).transposed(1),
            norm: Some(BatchNorm::new("decoder.upconv.bn", w(64))),
            act: relu,
        };
        let smooth = block("decoder.smooth", w(64), w(32), conv3(1, 1));
        let detail_in = w(32) + if skips { 3 } else { 0 };
        let detail = vec![
            block("decoder.detail0", detail_in, w(32), conv3(1, 1)),
            block("decoder.detail1", w(32), w(32), conv3(1, 1)),
        ];
        let head = Conv::new("decoder.head", w(32), 1, conv3(1, 1), true);

        Ok(Generator {
            cfg: cfg.clone(),
            stem,
            stages,
            context,
            decoder: Decoder {
                skip4,
                refine,
                skip2,
                fuse,
                upconv,
                smooth,
                detail,
                head,
            },
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Every tensor of the network, in a fixed order.
    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        self.stem.specs(&mut out);
        for block in self.stages.iter().flatten() {
            block.specs(&mut out);
        }
        match &self.context {
            Context::Pyramid {
                branches,
                image_pool,
                project,
            } => {
                for b in branches {
                    b.specs(&mut out);
                }
                image_pool.specs(&mut out);
                project.specs(&mut out);
            }
            Context::Reduce(r) => r.specs(&mut out),
        }
        let d = &self.decoder;
        if let Some(s) = &d.skip4 {
            s.specs(&mut out);
        }
        for b in &d.refine {
            b.specs(&mut out);
        }
        if let Some(s) = &d.skip2 {
            s.specs(&mut out);
        }
        d.fuse.specs(&mut out);
        d.upconv.specs(&mut out);
        d.smooth.specs(&mut out);
        for b in &d.detail {
            b.specs(&mut out);
        }
        d.head.specs(&mut out);
        out
    }

    /// Tensors a three-channel classifier checkpoint provides, under their
    /// unprefixed names.
    pub fn pretrained_specs(&self) -> Vec<TensorSpec> {
        self.specs()
            .into_iter()
            .filter_map(|mut s| {
                s.name = s.name.strip_prefix("encoder.")?.to_string();
                if s.name == "conv1.weight" {
                    s.shape[1] = 3;
                }
                Some(s)
            })
            .collect()
    }

    /// Random weights, with encoder tensors optionally replaced by a
    /// pretrained classifier's. The stem's trimap input channel starts at
    /// zero whenever pretrained weights are used.
    pub fn init_weights<R: Rng + ?Sized>(&self, pretrained: Option<&Weights>, rng: &mut R) -> Result<Weights> {
        let specs = self.specs();
        let mut weights = Weights::init(&specs, rng);
        let Some(src) = pretrained else {
            log::warn!("no pretrained encoder supplied; generator is randomly initialized");
            return Ok(weights);
        };
        let mut copied = 0;
        for spec in specs.iter().filter(|s| s.name.starts_with("encoder.")) {
            let short = &spec.name["encoder.".len()..];
            if !src.contains(short) {
                continue;
            }
            let t = src.get(short)?;
            if short == "conv1.weight" {
                let (cout, cin, kh, kw) = t.dims4();
                let expect = [spec.shape[0], 3, spec.shape[2], spec.shape[3]];
                if [cout, cin, kh, kw] != expect {
                    return Err(Error::Manifest(format!(
                        "pretrained conv1.weight has shape {:?}, expected {expect:?}",
                        t.shape()
                    )));
                }
                let plane = kh * kw;
                let mut widened = vec![0.0f32; cout * 4 * plane];
                for o in 0..cout {
                    let src_off = o * 3 * plane;
                    widened[o * 4 * plane..o * 4 * plane + 3 * plane]
                        .copy_from_slice(&t.data()[src_off..src_off + 3 * plane]);
                }
                weights.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), widened)?);
            } else {
                if t.shape() != spec.shape.as_slice() {
                    return Err(Error::Manifest(format!(
                        "pretrained `{short}` has shape {:?}, expected {:?}",
                        t.shape(),
                        spec.shape
                    )));
                }
                weights.insert(spec.name.clone(), t.clone());
            }
            copied += 1;
        }
        if copied == 0 {
            log::warn!("pretrained weights share no tensor names with the encoder");
        }
        Ok(weights)
    }

    pub fn encoder_forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<EncoderOutput<T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "generator expects [n, {}, h, w], got {shape:?}",
                self.cfg.input_channels
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not a positive multiple of {SIZE_MULTIPLE}"
            )));
        }
        let skip_os2 = self.stem.forward(ctx, x)?;
        let (mut y, pool_indices) = ops::max_pool2d_with_indices(&skip_os2, ConvGeom::new(3, 2, 1, 1))?;
        let mut skip_os4 = None;
        for (si, stage) in self.stages.iter().enumerate() {
            for block in stage {
                y = block.forward(ctx, &y)?;
            }
            if si == 0 {
                skip_os4 = Some(y.clone());
            }
        }
        Ok(EncoderOutput {
            bottleneck: y,
            skip_os4: skip_os4.expect("first stage always runs"),
            skip_os2,
            pool_indices,
        })
    }

    pub fn aspp_forward<T: Scalar>(&self, ctx: &Ctx<T>, f: &Var<T>) -> Result<Var<T>> {
        match &self.context {
            Context::Reduce(r) => r.forward(ctx, f),
            Context::Pyramid {
                branches,
                image_pool,
                project,
            } => {
                let (_, _, h, w) = f.value().dims4();
                let mut outs = branches
                    .iter()
                    .map(|b| b.forward(ctx, f))
                    .collect::<Result<Vec<_>>>()?;
                let pooled = image_pool.forward(ctx, &ops::global_avg_pool(f))?;
                outs.push(ops::resize_bilinear(&pooled, h, w)?);
                let refs: Vec<&Var<T>> = outs.iter().collect();
                project.forward(ctx, &ops::concat_channels(&refs)?)
            }
        }
    }

    /// `rgb` is the unnormalized color input, concatenated near the output.
    pub fn decoder_forward<T: Scalar>(
        &self,
        ctx: &Ctx<T>,
        enc: &EncoderOutput<T>,
        context: &Var<T>,
        rgb: &Var<T>,
    ) -> Result<Var<T>> {
        let d = &self.decoder;
        let (_, _, h4, w4) = enc.skip_os4.value().dims4();
        let mut y = ops::resize_bilinear(context, h4, w4)?;
        if let Some(s) = &d.skip4 {
            y = ops::concat_channels(&[&y, &s.forward(ctx, &enc.skip_os4)?])?;
        }
        for b in &d.refine {
            y = b.forward(ctx, &y)?;
        }
        y = ops::max_unpool2d(&y, &enc.pool_indices)?;
        if let Some(s) = &d.skip2 {
            y = ops::concat_channels(&[&y, &s.forward(ctx, &enc.skip_os2)?])?;
        }
        y = d.fuse.forward(ctx, &y)?;
        y = d.upconv.forward(ctx, &y)?;
        y = d.smooth.forward(ctx, &y)?;
        if self.cfg.use_skips {
            if y.shape()[2..] != rgb.shape()[2..] {
                return Err(Error::Shape(format!(
                    "decoder output {:?} does not match rgb {:?}",
                    y.shape(),
                    rgb.shape()
                )));
            }
            y = ops::concat_channels(&[&y, rgb])?;
        }
        for b in &d.detail {
            y = b.forward(ctx, &y)?;
        }
        Ok(ops::sigmoid(&d.head.forward(ctx, &y)?))
    }

    /// Full pass: `input` is `[n, 4, h, w]` (normalized RGB + trimap plane),
    /// `rgb` the `[n, 3, h, w]` unnormalized color. Returns `[n, 1, h, w]`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, input: &Var<T>, rgb: &Var<T>) -> Result<Var<T>> {
        let enc = self.encoder_forward(ctx, input)?;
        let context = self.aspp_forward(ctx, &enc.bottleneck)?;
        self.decoder_forward(ctx, &enc, &context, rgb)
    }

    /// Network input planes for a batch of images and trimaps.
    pub fn input_tensors(&self, batch: &[(&RgbImage, &Trimap)]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (h, w) = batch
            .first()
            .map(|(img, _)| img.dims())
            .ok_or_else(|| Error::InvalidValue("empty batch".into()))?;
        let plane = h * w;
        let mut input = Vec::with_capacity(batch.len() * 4 * plane);
        let mut rgb = Vec::with_capacity(batch.len() * 3 * plane);
        for (img, trimap) in batch {
            if img.dims() != (h, w) || trimap.dims() != (h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "batch element {:?}/{:?} differs from {:?}",
                    img.dims(),
                    trimap.dims(),
                    (h, w)
                )));
            }
            for c in 0..3 {
                let p = img.plane(c);
                if self.cfg.normalize_rgb {
                    input.extend(p.iter().map(|v| (v - RGB_MEAN[c]) / RGB_STD[c]));
                } else {
                    input.extend_from_slice(p);
                }
            }
            input.extend(trimap.plane());
            rgb.extend_from_slice(img.data());
        }
        let n = batch.len();
        Ok((
            Tensor::new(vec![n, 4, h, w], input)?,
            Tensor::new(vec![n, 3, h, w], rgb)?,
        ))
    }
}

/// Architecture manifest for `cfg`.
pub fn manifest(cfg: &GeneratorConfig) -> Result<Vec<TensorSpec>> {
    Ok(Generator::new(cfg)?.specs())
}

pub fn init_weights<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    pretrained: Option<&Weights>,
    rng: &mut R,
) -> Result<Weights> {
    Generator::new(cfg)?.init_weights(pretrained, rng)
}

/// Inference-mode prediction for one image whose sides are multiples of 32.
pub fn generator_forward(
    composite: &RgbImage,
    trimap: &Trimap,
    weights: &Weights,
    cfg: &GeneratorConfig,
) -> Result<AlphaMatte> {
    let net = Generator::new(cfg)?;
    let (input, rgb) = net.input_tensors(&[(composite, trimap)])?;
    let ctx = Ctx::<f32>::new(weights, Mode::EVAL);
    let out = net.forward(&ctx, &Var::constant(input), &Var::constant(rgb))?;
    let (h, w) = composite.dims();
    AlphaMatte::new(h, w, out.value().clone().into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(os: usize) -> GeneratorConfig {
        GeneratorConfig {
            output_stride: os,
            width_multiplier: 0.125,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn widths_round_to_multiples_of_eight() {
        let cfg = GeneratorConfig {
            width_multiplier: 0.25,
            ..GeneratorConfig::default()
        };
        assert_eq!(cfg.width(64), 16);
        assert_eq!(cfg.width(48), 16);
        assert_eq!(cfg.width(32), 8);
        assert_eq!(GeneratorConfig::default().width(48), 48);
    }

    #[test]
    fn full_width_parameter_count() {
        let specs = manifest(&GeneratorConfig::default()).unwrap();
        let trainable: usize = specs
            .iter()
            .filter(|s| s.kind == crate::nn::TensorKind::Param && s.name.starts_with("encoder."))
            .map(|s| s.numel())
            .sum();
        // Classifier backbone minus its fc layer, plus the widened stem.
        assert_eq!(trainable, 23_508_032 + 64 * 49);
        let names: std::collections::HashSet<_> = specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), specs.len());
    }

    #[test]
    fn multigrid_is_rejected() {
        let cfg = GeneratorConfig {
            use_multigrid: true,
            ..GeneratorConfig::default()
        };
        assert!(matches!(Generator::new(&cfg), Err(Error::Unsupported(_))));
    }

    #[test]
    fn encoder_shapes_at_both_strides() {
        for (os, bottleneck) in [(8, 8), (16, 4)] {
            let net = Generator::new(&small(os)).unwrap();
            let w = net.init_weights(None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let ctx = Ctx::<f32>::new(&w, Mode::EVAL);
            let x = Var::constant(Tensor::full(&[1, 4, 64, 64], 0.5f32));
            let enc = net.encoder_forward(&ctx, &x).unwrap();
            assert_eq!(enc.bottleneck.shape()[2..], [bottleneck, bottleneck]);
            assert_eq!(enc.skip_os4.shape()[2..], [16, 16]);
            assert_eq!(enc.skip_os2.shape()[2..], [32, 32]);
            let rgb = Var::constant(Tensor::full(&[1, 3, 64, 64], 0.5f32));
            let out = net.forward(&ctx, &x, &rgb).unwrap();
            assert_eq!(out.shape(), &[1, 1, 64, 64]);
            assert!(out.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zeroed_head_gives_half() {
        let net = Generator::new(&small(8)).unwrap();
        let mut w = net.init_weights(None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for name in ["decoder.head.weight", "decoder.head.bias"] {
            let shape = w.get(name).unwrap().shape().to_vec();
            w.insert(name, Tensor::zeros(&shape));
        }
        let img = RgbImage::filled(32, 32, [0.2, 0.5, 0.9]).unwrap();
        let t = Trimap::filled(32, 32, crate::imgcore::TrimapLabel::Unknown).unwrap();
        let a = generator_forward(&img, &t, &w, net.config()).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn non_multiple_of_32_is_rejected() {
        let net = Generator::new(&small(8)).unwrap();
        let w = net.init_weights(None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let img = RgbImage::filled(40, 32, [0.0; 3]).unwrap();
        let t = Trimap::filled(40, 32, crate::imgcore::TrimapLabel::Unknown).unwrap();
        assert!(matches!(generator_forward(&img, &t, &w, net.config()), Err(Error::Shape(_))));
    }

    #[test]
    fn pretrained_copy_and_zero_trimap_channel() {
        let net = Generator::new(&small(8)).unwrap();
        let src = Weights::init(&net.pretrained_specs(), &mut ChaCha8Rng::seed_from_u64(7));
        let w = net.init_weights(Some(&src), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        w.check_against(&net.specs()).unwrap();
        let conv1 = w.get("encoder.conv1.weight").unwrap();
        let orig = src.get("conv1.weight").unwrap();
        let (cout, _, k, _) = conv1.dims4();
        for o in 0..cout {
            let dst = &conv1.data()[o * 4 * k * k..(o + 1) * 4 * k * k];
            assert_eq!(&dst[..3 * k * k], &orig.data()[o * 3 * k * k..(o + 1) * 3 * k * k]);
            assert!(dst[3 * k * k..].iter().all(|&v| v == 0.0));
        }
        assert_eq!(w.get("encoder.layer2.0.conv2.weight").unwrap(), src.get("layer2.0.conv2.weight").unwrap());
    }
}
