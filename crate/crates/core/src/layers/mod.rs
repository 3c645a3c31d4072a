//! Equivariant and conventional layers with per-sample forward/backward.
//!
//! Every layer processes one sample at a time. Batched entry points split a
//! [`GeometricTensor`] into samples, so no statistic ever couples two samples
//! and per-sample gradients fall out of ordinary backpropagation.

mod checkpoint;
mod conv;
mod model;
mod norm;
mod ops;
mod resnet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest};
pub use conv::{group_conv, lift_conv, plain_conv, ConvKind, FilterBank};
pub use model::{BackwardMode, Model, ParamEntry, PerSampleBatch, PerSampleGrads};
pub use norm::{field_norm, FieldNorm, VAR_EPS};
pub use ops::{global_avg_pool, linear, maxpool2, relu, Linear};
pub use resnet::{build_resnet9, field_multiplicity, GroupSpec, ModelSpec, WidthMode};

use crate::error::{mismatch, Result};
use crate::groups::{restrict_regular, FieldKind, FieldType};
use crate::scalar::Scalar;
use crate::tensor::Feature;

/// One node of a [`Model`].
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(FilterBank<T>),
    FieldNorm(FieldNorm<T>),
    Relu,
    MaxPool { kernel: usize, stride: usize },
    /// Channel reindexing from `C_N` regular fields to `C_{N/2}` fields.
    Restrict { map: Vec<usize>, out: FieldType },
    /// `x + body(x)`.
    Residual(Vec<Layer<T>>),
    GlobalAvgPool,
    GroupPool { order: usize },
    Linear(Linear<T>),
}

pub(crate) enum Cache<T> {
    Conv { col: Vec<T>, shape: (usize, usize, usize) },
    Norm(norm::NormCache<T>),
    Relu(Feature<T>),
    Argmax { arg: Vec<usize>, shape: (usize, usize, usize) },
    Restrict,
    Residual(Vec<Cache<T>>),
    Gap { h: usize, w: usize },
    Linear(Feature<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn restrict(input: &FieldType) -> Result<Self> {
        let (out, map) = restrict_regular(input)?;
        Ok(Layer::Restrict { map, out })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(b) => match b.kind() {
                ConvKind::Plain => "conv",
                ConvKind::Lift => "lift_conv",
                ConvKind::Group => "group_conv",
            },
            Layer::FieldNorm(_) => "field_norm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Restrict { .. } => "restrict",
            Layer::Residual(_) => "residual",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::GroupPool { .. } => "group_pool",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(b) => b.param_count(),
            Layer::FieldNorm(n) => n.param_count(),
            Layer::Residual(body) => body.iter().map(Layer::param_count).sum(),
            Layer::Linear(l) => l.param_count(),
            _ => 0,
        }
    }

    pub fn output_type(&self, input: &FieldType) -> Result<FieldType> {
        match self {
            Layer::Conv(b) => b.output_type(input),
            Layer::FieldNorm(n) => n.check(input).map(|_| *input),
            Layer::Relu | Layer::MaxPool { .. } | Layer::GlobalAvgPool => Ok(*input),
            Layer::Restrict { map, out } => {
                if map.len() != input.channels() || input.kind != FieldKind::Regular {
                    return Err(mismatch(format!("restriction cannot take {input:?}")));
                }
                Ok(*out)
            }
            Layer::Residual(body) => {
                let out = body.iter().try_fold(*input, |t, l| l.output_type(&t))?;
                if out != *input {
                    return Err(mismatch(format!("residual body maps {input:?} to {out:?}")));
                }
                Ok(out)
            }
            Layer::GroupPool { order } => {
                if input.group.order() != *order {
                    return Err(mismatch("group pool order differs from input group"));
                }
                ops::check_group_pool(input)
            }
            Layer::Linear(l) => Ok(FieldType::plain(l.out_features)),
        }
    }

    /// Visit `(name, shape, values)` of each parameter tensor in the fixed
    /// flattening order.
    pub(crate) fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &'static str, Vec<usize>, &[T])) {
        match self {
            Layer::Conv(b) => f(prefix.to_string(), "weight", b.canonical_shape(), b.canonical()),
            Layer::FieldNorm(n) => {
                f(prefix.to_string(), "gain", vec![n.fields()], &n.gain);
                f(prefix.to_string(), "bias", vec![n.fields()], &n.bias);
            }
            Layer::Linear(l) => {
                f(prefix.to_string(), "weight", vec![l.out_features, l.in_features], &l.weight);
                f(prefix.to_string(), "bias", vec![l.out_features], &l.bias);
            }
            Layer::Residual(body) => {
                for (i, l) in body.iter().enumerate() {
                    l.visit_params(&format!("{prefix}.{i}"), f);
                }
            }
            _ => {}
        }
    }

    /// Overwrite parameters from `src`, which must hold exactly
    /// `param_count()` values in flattening order.
    pub(crate) fn load_params(&mut self, src: &[T]) {
        match self {
            Layer::Conv(b) => b.set_canonical(src),
            Layer::FieldNorm(n) => {
                let (g, b) = src.split_at(n.fields());
                n.gain.copy_from_slice(g);
                n.bias.copy_from_slice(b);
            }
            Layer::Linear(l) => {
                let (w, b) = src.split_at(l.weight.len());
                l.weight.copy_from_slice(w);
                l.bias.copy_from_slice(b);
            }
            Layer::Residual(body) => {
                let mut off = 0;
                for l in body {
                    let n = l.param_count();
                    l.load_params(&src[off..off + n]);
                    off += n;
                }
            }
            _ => {}
        }
    }

    pub(crate) fn forward_sample(
        &self,
        x: &Feature<T>,
        mut conv_out: Option<&mut Vec<Feature<T>>>,
    ) -> Result<(Feature<T>, Cache<T>)> {
        let shape = (x.c, x.h, x.w);
        Ok(match self {
            Layer::Conv(b) => {
                if x.c != b.in_channels() {
                    return Err(mismatch(format!("conv expects {} channels, got {}", b.in_channels(), x.c)));
                }
                let (y, col) = b.forward_sample(x);
                if let Some(rec) = conv_out {
                    rec.push(y.clone());
                }
                (y, Cache::Conv { col, shape })
            }
            Layer::FieldNorm(n) => {
                let (y, c) = n.forward_sample(x);
                (y, Cache::Norm(c))
            }
            Layer::Relu => (ops::relu_sample(x), Cache::Relu(x.clone())),
            Layer::MaxPool { kernel, stride } => {
                let (y, arg) = ops::maxpool_sample(x, *kernel, *stride);
                (y, Cache::Argmax { arg, shape })
            }
            Layer::Restrict { map, .. } => (ops::permute_channels(x, map), Cache::Restrict),
            Layer::Residual(body) => {
                let mut caches = Vec::with_capacity(body.len());
                let mut h = x.clone();
                for l in body {
                    let (y, c) = l.forward_sample(&h, conv_out.as_deref_mut())?;
                    caches.push(c);
                    h = y;
                }
                for (a, &b) in h.data.iter_mut().zip(&x.data) {
                    *a = *a + b;
                }
                (h, Cache::Residual(caches))
            }
            Layer::GlobalAvgPool => (ops::gap_sample(x), Cache::Gap { h: x.h, w: x.w }),
            Layer::GroupPool { order } => {
                let (y, arg) = ops::group_pool_sample(x, *order);
                (y, Cache::Argmax { arg, shape })
            }
            Layer::Linear(l) => (l.forward_sample(x)?, Cache::Linear(x.clone())),
        })
    }

    /// Backpropagate `gy`; accumulates into `grad` (this layer's parameter
    /// slice) when given.
    pub(crate) fn backward_sample(
        &self,
        cache: &Cache<T>,
        gy: &Feature<T>,
        grad: Option<&mut [T]>,
        mode: BackwardMode,
        need_input: bool,
    ) -> Option<Feature<T>> {
        match (self, cache) {
            (Layer::Conv(b), Cache::Conv { col, shape }) => b.backward_sample(col, *shape, gy, grad, need_input),
            (Layer::FieldNorm(n), Cache::Norm(c)) => Some(n.backward_sample(c, gy, grad)),
            (Layer::Relu, Cache::Relu(input)) => {
                Some(ops::relu_backward(input, gy, mode == BackwardMode::Guided))
            }
            (Layer::MaxPool { .. } | Layer::GroupPool { .. }, Cache::Argmax { arg, shape }) => {
                Some(ops::scatter_backward(arg, gy, *shape))
            }
            (Layer::Restrict { map, .. }, Cache::Restrict) => Some(ops::unpermute_channels(gy, map)),
            (Layer::Residual(body), Cache::Residual(caches)) => {
                let mut grad = grad;
                let mut offsets = Vec::with_capacity(body.len());
                let mut off = 0;
                for l in body {
                    offsets.push(off);
                    off += l.param_count();
                }
                let mut g = gy.clone();
                for (i, (l, c)) in body.iter().zip(caches).enumerate().rev() {
                    let slice = grad
                        .as_deref_mut()
                        .map(|s| &mut s[offsets[i]..offsets[i] + l.param_count()]);
                    g = l.backward_sample(c, &g, slice, mode, true).expect("inner input grad");
                }
                for (a, &b) in g.data.iter_mut().zip(&gy.data) {
                    *a = *a + b;
                }
                Some(g)
            }
            (Layer::GlobalAvgPool, Cache::Gap { h, w }) => Some(ops::gap_backward(gy, *h, *w)),
            (Layer::Linear(l), Cache::Linear(input)) => Some(l.backward_sample(input, gy, grad)),
            _ => unreachable!("cache does not match layer"),
        }
    }
}
