//! Patch discriminator over 4-channel (composite RGB + trimap) stacks.
//!
//! Five 4×4 convolutions with strides 2, 2, 2, 1, 1 give every output
//! score a 70×70 input footprint; the per-patch sigmoid scores are averaged
//! into one probability per sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{self, TrainingSample};
use crate::error::{Error, Result};
use crate::imgcore::AlphaMatte;
use crate::nn::{Activation, BatchNorm, Conv, ConvBlock, Ctx, Mode, TensorSpec, Weights};
use crate::tensor::ops::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor, Var};

pub const PATCH_SIZE: usize = 70;
pub const LEAKY_SLOPE: f64 = 0.2;

/// `(width multiple of base, stride, normalized)` per layer; the last layer
/// has a single output channel instead.
const LADDER: [(usize, usize, bool); 5] = [(1, 2, false), (2, 2, true), (4, 2, true), (8, 1, true), (0, 1, false)];
const KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    pub input_channels: usize,
    /// Composite fake inputs over a freshly drawn background instead of the
    /// sample's own.
    pub fresh_background: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_width: 64,
            input_channels: 4,
            fresh_background: false,
        }
    }
}

/// Input footprint of one output unit of a stack of `(kernel, stride)` layers.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    layers
        .iter()
        .rev()
        .fold(1, |rf, &(kernel, stride)| (rf - 1) * stride + kernel)
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<ConvBlock>,
}

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig) -> Result<Self> {
        if cfg.input_channels != 4 {
            return Err(Error::Config(format!(
                "discriminator input_channels must be 4, got {}",
                cfg.input_channels
            )));
        }
        if cfg.base_width == 0 {
            return Err(Error::Config("discriminator base_width must be >= 1".into()));
        }
        let chain: Vec<(usize, usize)> = LADDER.iter().map(|&(_, s, _)| (KERNEL, s)).collect();
        let rf = receptive_field(&chain);
        if rf != PATCH_SIZE {
            return Err(Error::Config(format!("discriminator receptive field is {rf}, expected {PATCH_SIZE}")));
        }
        let mut cin = cfg.input_channels;
        let mut layers = Vec::new();
        for (i, &(mult, stride, norm)) in LADDER.iter().enumerate() {
            let last = i + 1 == LADDER.len();
            let cout = if last { 1 } else { cfg.base_width * mult };
            let geom = ConvGeom::new(KERNEL, stride, 1, 1);
            let name = format!("disc.layer{i}");
            layers.push(ConvBlock {
                conv: Conv::new(format!("{name}.conv"), cin, cout, geom, !norm),
                norm: norm.then(|| BatchNorm::new(format!("{name}.bn"), cout)),
                act: if last {
                    Activation::None
                } else {
                    Activation::LeakyRelu(LEAKY_SLOPE)
                },
            });
            cin = cout;
        }
        Ok(Discriminator {
            cfg: cfg.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.specs(&mut out);
        }
        out
    }

    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Weights {
        Weights::init(&self.specs(), rng)
    }

    /// Spatial size of the score grid for an input side of `len`.
    pub fn grid_size(&self, len: usize) -> Option<usize> {
        self.layers
            .iter()
            .try_fold(len, |n, l| l.conv.geom.out_size(n))
    }

    /// Returns per-patch probabilities `[n, 1, h', w']` and their per-sample
    /// means `[n]`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, stack: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let shape = stack.shape();
        if shape.len() != 4 || shape[1] != self.cfg.input_channels {
            return Err(Error::Shape(format!("discriminator expects [n, 4, h, w], got {shape:?}")));
        }
        if shape[2] < PATCH_SIZE || shape[3] < PATCH_SIZE {
            return Err(Error::Shape(format!(
                "discriminator input {}x{} is smaller than the {PATCH_SIZE}x{PATCH_SIZE} receptive field",
                shape[2], shape[3]
            )));
        }
        let mut y = stack.clone();
        for l in &self.layers {
            y = l.forward(ctx, &y)?;
        }
        let scores = ops::sigmoid(&y);
        let mean = ops::mean_per_sample(&scores);
        Ok((scores, mean))
    }
}

pub fn manifest(cfg: &DiscriminatorConfig) -> Result<Vec<TensorSpec>> {
    Ok(Discriminator::new(cfg)?.specs())
}

/// Inference-mode scores for one `[4, h, w]` stack.
pub fn discriminator_forward(
    stack: &Tensor<f32>,
    weights: &Weights,
    cfg: &DiscriminatorConfig,
) -> Result<(Tensor<f32>, f64)> {
    let net = Discriminator::new(cfg)?;
    let mut shape = vec![1];
    shape.extend_from_slice(stack.shape());
    let x = Var::constant(stack.reshape(&shape)?);
    let ctx = Ctx::<f32>::new(weights, Mode::EVAL);
    let (scores, mean) = net.forward(&ctx, &x)?;
    let s = scores.value();
    let grid = s.reshape(&s.shape()[1..])?;
    Ok((grid, mean.value().data()[0] as f64))
}

fn stack_planes(rgb: &[f32], trimap: &[f32], h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(4 * h * w);
    data.extend_from_slice(rgb);
    data.extend_from_slice(trimap);
    Tensor::new(vec![4, h, w], data)
}

/// `[composite; trimap]` for the ground-truth matte.
pub fn real_stack(sample: &TrainingSample) -> Result<Tensor<f32>> {
    let (h, w) = sample.dims();
    let rgb = datapipe::composite(&sample.foreground, &sample.background, &sample.alpha_gt)?;
    stack_planes(rgb.data(), &sample.trimap.plane(), h, w)
}

/// `[composite; trimap]` with the sample's foreground and background
/// recombined through a predicted matte.
pub fn fake_stack(sample: &TrainingSample, alpha_pred: &AlphaMatte) -> Result<Tensor<f32>> {
    let (h, w) = sample.dims();
    let rgb = datapipe::composite(&sample.foreground, &sample.background, alpha_pred)?;
    stack_planes(rgb.data(), &sample.trimap.plane(), h, w)
}

/// Batched, differentiable counterpart of [`fake_stack`]: `alpha` is
/// `[n, 1, h, w]`, `fg`/`bg` are `[n, 3, h, w]`, `trimap` is `[n, 1, h, w]`.
pub fn compose_stack<T: Scalar>(
    alpha: &Var<T>,
    fg: &Tensor<T>,
    bg: &Tensor<T>,
    trimap: &Tensor<T>,
) -> Result<Var<T>> {
    let rgb = ops::blend(alpha, fg, bg)?;
    ops::concat_channels(&[&rgb, &Var::constant(trimap.clone())])
}
