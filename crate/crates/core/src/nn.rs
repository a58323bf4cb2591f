//! Named parameter sets and the convolution / normalization layers both
//! networks are assembled from.

use std::cell::RefCell;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{self, BatchStats, ConvGeom};
use crate::tensor::{Scalar, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    /// Trained by the optimizer.
    Param,
    /// Running statistics, updated by training-mode forward passes.
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub kind: TensorKind,
}

impl TensorSpec {
    fn new(name: String, shape: Vec<usize>, kind: TensorKind) -> Self {
        TensorSpec {
            name,
            shape,
            dtype: "f32".into(),
            kind,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered name → tensor map holding one network's parameters and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Weights {
    tensors: IndexMap<String, Tensor<f32>>,
}

impl Weights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Manifest(format!("missing tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Manifest(format!("missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Check that names, order and shapes agree with `specs` exactly.
    pub fn check_against(&self, specs: &[TensorSpec]) -> Result<()> {
        if self.tensors.len() != specs.len() {
            let extra: Vec<&String> = self
                .tensors
                .keys()
                .filter(|k| !specs.iter().any(|s| &s.name == *k))
                .collect();
            return Err(Error::Manifest(format!(
                "expected {} tensors, found {} (unexpected: {extra:?})",
                specs.len(),
                self.tensors.len()
            )));
        }
        for spec in specs {
            let t = self.get(&spec.name)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Manifest(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Fresh weights for `specs`: He-uniform convolution kernels,
    /// fan-in-scaled uniform biases, identity normalization.
    pub fn init<R: Rng + ?Sized>(specs: &[TensorSpec], rng: &mut R) -> Self {
        let mut w = Weights::new();
        for spec in specs {
            w.insert(spec.name.clone(), init_tensor(spec, specs, rng));
        }
        w
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..=bound) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Product of all but the leading kernel dimension.
fn fan_in_of(weight_shape: &[usize]) -> usize {
    weight_shape[1..].iter().product()
}

fn init_tensor<R: Rng + ?Sized>(spec: &TensorSpec, all: &[TensorSpec], rng: &mut R) -> Tensor<f32> {
    let suffix = spec.name.rsplit('.').next().unwrap_or("");
    let conv_weight = |base: &str| {
        all.iter()
            .find(|s| s.name == format!("{base}.weight") && s.shape.len() == 4)
            .map(|s| fan_in_of(&s.shape))
    };
    let base = spec.name.strip_suffix(&format!(".{suffix}")).unwrap_or("");
    match (spec.shape.len(), suffix) {
        (4, "weight") => uniform(&spec.shape, (6.0 / fan_in_of(&spec.shape) as f64).sqrt(), rng),
        (1, "bias") if conv_weight(base).is_some() => {
            let fan = conv_weight(base).unwrap_or(1);
            uniform(&spec.shape, 1.0 / (fan as f64).sqrt(), rng)
        }
        (1, "weight") | (1, "running_var") => Tensor::full(&spec.shape, 1.0),
        _ => Tensor::zeros(&spec.shape),
    }
}

/// Whether a forward pass uses batch statistics and whether it records
/// parameter gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    pub train: bool,
    pub track: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        train: true,
        track: true,
    };
    pub const EVAL: Mode = Mode {
        train: false,
        track: false,
    };
    /// Batch statistics, but parameters treated as constants.
    pub const FROZEN_TRAIN: Mode = Mode {
        train: true,
        track: false,
    };
}

/// Forward-pass context: lends parameters out as graph variables and
/// collects the batch statistics needed for running-average updates.
pub struct Ctx<'w, T: Scalar> {
    weights: &'w Weights,
    mode: Mode,
    params: RefCell<IndexMap<String, Var<T>>>,
    stats: RefCell<Vec<(String, BatchStats)>>,
}

impl<'w, T: Scalar> Ctx<'w, T> {
    pub fn new(weights: &'w Weights, mode: Mode) -> Self {
        Ctx {
            weights,
            mode,
            params: RefCell::new(IndexMap::new()),
            stats: RefCell::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn weights(&self) -> &Weights {
        self.weights
    }

    pub fn param(&self, name: &str) -> Result<Var<T>> {
        if let Some(v) = self.params.borrow().get(name) {
            return Ok(v.clone());
        }
        let value = T::from_f32_tensor(self.weights.get(name)?);
        let var = if self.mode.track {
            Var::leaf(value)
        } else {
            Var::constant(value)
        };
        self.params.borrow_mut().insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn buffer(&self, name: &str) -> Result<Tensor<T>> {
        Ok(T::from_f32_tensor(self.weights.get(name)?))
    }

    /// Parameter variables handed out so far, in first-use order.
    pub fn params(&self) -> Vec<(String, Var<T>)> {
        self.params
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn take_stats(&self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut *self.stats.borrow_mut())
    }
}

/// Fold batch statistics into running averages.
pub fn apply_bn_stats(weights: &mut Weights, stats: &[(String, BatchStats)]) -> Result<()> {
    let m = BN_MOMENTUM;
    for (name, s) in stats {
        let mean = weights.get_mut(&format!("{name}.running_mean"))?.data_mut();
        for (r, b) in mean.iter_mut().zip(&s.mean) {
            *r = ((1.0 - m) * *r as f64 + m * b) as f32;
        }
        let var = weights.get_mut(&format!("{name}.running_var"))?.data_mut();
        for (r, b) in var.iter_mut().zip(&s.var_unbiased) {
            *r = ((1.0 - m) * *r as f64 + m * b) as f32;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub geom: ConvGeom,
    pub bias: bool,
    /// `Some(output_padding)` for a transposed convolution.
    pub transposed: Option<usize>,
}

impl Conv {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, geom: ConvGeom, bias: bool) -> Self {
        Conv {
            name: name.into(),
            in_ch,
            out_ch,
            geom,
            bias,
            transposed: None,
        }
    }

    pub fn transposed(mut self, output_padding: usize) -> Self {
        self.transposed = Some(output_padding);
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn specs(&self, out: &mut Vec<TensorSpec>) {
        let k = self.geom.kernel;
        let shape = match self.transposed {
            None => vec![self.out_ch, self.in_ch, k, k],
            Some(_) => vec![self.in_ch, self.out_ch, k, k],
        };
        out.push(TensorSpec::new(self.weight_name(), shape, TensorKind::Param));
        if self.bias {
            out.push(TensorSpec::new(
                format!("{}.bias", self.name),
                vec![self.out_ch],
                TensorKind::Param,
            ));
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = ctx.param(&self.weight_name())?;
        let b = if self.bias {
            Some(ctx.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        match self.transposed {
            None => ops::conv2d(x, &w, b.as_ref(), self.geom),
            Some(op) => ops::conv_transpose2d(x, &w, b.as_ref(), self.geom, op),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn specs(&self, out: &mut Vec<TensorSpec>) {
        let c = vec![self.channels];
        for (suffix, kind) in [
            ("weight", TensorKind::Param),
            ("bias", TensorKind::Param),
            ("running_mean", TensorKind::Buffer),
            ("running_var", TensorKind::Buffer),
        ] {
            out.push(TensorSpec::new(format!("{}.{suffix}", self.name), c.clone(), kind));
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = ctx.param(&format!("{}.weight", self.name))?;
        let beta = ctx.param(&format!("{}.bias", self.name))?;
        if ctx.mode.train {
            let (y, stats) = ops::batch_norm_train(x, &gamma, &beta, BN_EPS)?;
            ctx.stats.borrow_mut().push((self.name.clone(), stats));
            Ok(y)
        } else {
            let mean = ctx.buffer(&format!("{}.running_mean", self.name))?;
            let var = ctx.buffer(&format!("{}.running_var", self.name))?;
            ops::batch_norm_eval(x, &gamma, &beta, &mean, &var, BN_EPS)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    None,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: &Var<T>) -> Var<T> {
        match self {
            Activation::None => x.clone(),
            Activation::Relu => ops::relu(x),
            Activation::LeakyRelu(s) => ops::leaky_relu(x, s),
        }
    }
}

/// Convolution, optional normalization, activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub norm: Option<BatchNorm>,
    pub act: Activation,
}

impl ConvBlock {
    /// Bias-free convolution followed by normalization and `act`; the
    /// normalization is named `{name}.bn`, the convolution `{name}.conv`.
    pub fn conv_bn(name: &str, in_ch: usize, out_ch: usize, geom: ConvGeom, act: Activation) -> Self {
        ConvBlock {
            conv: Conv::new(format!("{name}.conv"), in_ch, out_ch, geom, false),
            norm: Some(BatchNorm::new(format!("{name}.bn"), out_ch)),
            act,
        }
    }

    pub fn specs(&self, out: &mut Vec<TensorSpec>) {
        self.conv.specs(out);
        if let Some(n) = &self.norm {
            n.specs(out);
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = self.conv.forward(ctx, x)?;
        if let Some(n) = &self.norm {
            y = n.forward(ctx, &y)?;
        }
        Ok(self.act.apply(&y))
    }
}
