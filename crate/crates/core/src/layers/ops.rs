//! Parameter-free layers and the linear head.

use rand::Rng;

use crate::error::{mismatch, Result};
use crate::groups::{FieldKind, FieldType};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Feature, GeometricTensor, Matrix};

pub(crate) fn relu_sample<T: Scalar>(x: &Feature<T>) -> Feature<T> {
    let data = x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
    Feature::new(x.c, x.h, x.w, data)
}

/// Standard ReLU backward, or the guided variant that also drops negative
/// upstream gradients.
pub(crate) fn relu_backward<T: Scalar>(input: &Feature<T>, gy: &Feature<T>, guided: bool) -> Feature<T> {
    let data = input
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&x, &g)| {
            if x > T::zero() && (!guided || g > T::zero()) {
                g
            } else {
                T::zero()
            }
        })
        .collect();
    Feature::new(gy.c, gy.h, gy.w, data)
}

pub(crate) fn pool_size(n: usize, kernel: usize, stride: usize) -> usize {
    if n < kernel {
        0
    } else {
        (n - kernel) / stride + 1
    }
}

/// Max pooling without padding; trailing rows/columns that do not fill a
/// window are dropped. Returns the output and the flat argmax of each cell
/// (first maximum wins ties).
pub(crate) fn maxpool_sample<T: Scalar>(x: &Feature<T>, kernel: usize, stride: usize) -> (Feature<T>, Vec<usize>) {
    let (oh, ow) = (pool_size(x.h, kernel, stride), pool_size(x.w, kernel, stride));
    let mut out = Vec::with_capacity(x.c * oh * ow);
    let mut arg = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        let base = c * x.plane();
        for r in 0..oh {
            for q in 0..ow {
                let mut best = base + r * stride * x.w + q * stride;
                for dr in 0..kernel {
                    for dq in 0..kernel {
                        let i = base + (r * stride + dr) * x.w + q * stride + dq;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                }
                out.push(x.data[best]);
                arg.push(best);
            }
        }
    }
    (Feature::new(x.c, oh, ow, out), arg)
}

pub(crate) fn scatter_backward<T: Scalar>(
    arg: &[usize],
    gy: &Feature<T>,
    in_shape: (usize, usize, usize),
) -> Feature<T> {
    let (c, h, w) = in_shape;
    let mut gx = Feature::zeros(c, h, w);
    for (&i, &g) in arg.iter().zip(&gy.data) {
        gx.data[i] = gx.data[i] + g;
    }
    gx
}

pub(crate) fn gap_sample<T: Scalar>(x: &Feature<T>) -> Feature<T> {
    let n = T::from_usize(x.plane()).expect("plane");
    let data = (0..x.c).map(|c| x.channel(c).iter().copied().sum::<T>() / n).collect();
    Feature::new(x.c, 1, 1, data)
}

pub(crate) fn gap_backward<T: Scalar>(gy: &Feature<T>, h: usize, w: usize) -> Feature<T> {
    let n = T::from_usize(h * w).expect("plane");
    let mut data = Vec::with_capacity(gy.c * h * w);
    for &g in &gy.data {
        data.extend(std::iter::repeat_n(g / n, h * w));
    }
    Feature::new(gy.c, h, w, data)
}

/// Max over the `n` orientation channels of each field.
pub(crate) fn group_pool_sample<T: Scalar>(x: &Feature<T>, n: usize) -> (Feature<T>, Vec<usize>) {
    let f = x.c / n;
    let p = x.plane();
    let mut out = Vec::with_capacity(f * p);
    let mut arg = Vec::with_capacity(f * p);
    for field in 0..f {
        for pos in 0..p {
            let mut best = field * n * p + pos;
            for g in 1..n {
                let i = (field * n + g) * p + pos;
                if x.data[i] > x.data[best] {
                    best = i;
                }
            }
            out.push(x.data[best]);
            arg.push(best);
        }
    }
    (Feature::new(f, x.h, x.w, out), arg)
}

pub(crate) fn permute_channels<T: Scalar>(x: &Feature<T>, map: &[usize]) -> Feature<T> {
    let mut data = Vec::with_capacity(x.data.len());
    for &old in map {
        data.extend_from_slice(x.channel(old));
    }
    Feature::new(x.c, x.h, x.w, data)
}

pub(crate) fn unpermute_channels<T: Scalar>(gy: &Feature<T>, map: &[usize]) -> Feature<T> {
    let p = gy.plane();
    let mut gx = Feature::zeros(gy.c, gy.h, gy.w);
    for (new, &old) in map.iter().enumerate() {
        gx.data[old * p..(old + 1) * p].copy_from_slice(gy.channel(new));
    }
    gx
}

/// Fully connected layer on the flattened input.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `out_features x in_features`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    /// Uniform weights with variance `1 / in_features`; zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let a = (3.0 / self.in_features as f64).sqrt();
        for w in &mut self.weight {
            *w = T::from_f64_lossy(rng.random_range(-a..a));
        }
        self.bias.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn forward_sample(&self, x: &Feature<T>) -> Result<Feature<T>> {
        if x.data.len() != self.in_features {
            return Err(mismatch(format!(
                "linear expects {} inputs, got {}",
                self.in_features,
                x.data.len()
            )));
        }
        let mut y = self.bias.clone();
        gemm(self.out_features, self.in_features, 1, &self.weight, false, &x.data, false, &mut y, true);
        Ok(Feature::new(self.out_features, 1, 1, y))
    }

    /// `grad` layout: weight then bias.
    pub(crate) fn backward_sample(
        &self,
        input: &Feature<T>,
        gy: &Feature<T>,
        grad: Option<&mut [T]>,
    ) -> Feature<T> {
        if let Some(grad) = grad {
            let (gw, gb) = grad.split_at_mut(self.weight.len());
            gemm(self.out_features, 1, self.in_features, &gy.data, false, &input.data, false, gw, true);
            for (b, &g) in gb.iter_mut().zip(&gy.data) {
                *b = *b + g;
            }
        }
        let mut gx = vec![T::zero(); self.in_features];
        gemm(self.in_features, self.out_features, 1, &self.weight, true, &gy.data, false, &mut gx, false);
        Feature::new(input.c, input.h, input.w, gx)
    }
}

pub fn relu<T: Scalar>(x: &GeometricTensor<T>) -> Result<GeometricTensor<T>> {
    let samples = x.samples().map(|s| relu_sample(&s)).collect();
    GeometricTensor::from_samples(samples, *x.ftype())
}

/// 2x2 max pooling with stride 2; odd sizes are floored.
pub fn maxpool2<T: Scalar>(x: &GeometricTensor<T>) -> Result<GeometricTensor<T>> {
    let samples = x.samples().map(|s| maxpool_sample(&s, 2, 2).0).collect();
    GeometricTensor::from_samples(samples, *x.ftype())
}

/// Spatial mean per channel, returned as a `B x C` matrix.
pub fn global_avg_pool<T: Scalar>(x: &GeometricTensor<T>) -> Matrix<T> {
    let [b, c, _, _] = x.shape();
    let data = x.samples().flat_map(|s| gap_sample(&s).data).collect();
    Matrix { rows: b, cols: c, data }
}

/// Apply a linear layer to each row of `x`.
pub fn linear<T: Scalar>(x: &Matrix<T>, layer: &Linear<T>) -> Result<Matrix<T>> {
    let mut out = Vec::with_capacity(x.rows * layer.out_features);
    for r in 0..x.rows {
        let f = Feature::new(x.cols, 1, 1, x.row(r).to_vec());
        out.extend(layer.forward_sample(&f)?.data);
    }
    Matrix::new(x.rows, layer.out_features, out)
}

pub(crate) fn check_group_pool(input: &FieldType) -> Result<FieldType> {
    match input.kind {
        FieldKind::Regular => Ok(FieldType::trivial(input.group, input.multiplicity)),
        FieldKind::Trivial => Err(mismatch("group pooling needs regular fields")),
    }
}
