//! Per-sample field normalization.
//!
//! Statistics are taken over one field's orientation channels and all
//! spatial positions of a single sample, so they never cross the batch and
//! commute with orientation permutations.

use crate::error::{mismatch, Result};
use crate::groups::FieldType;
use crate::scalar::Scalar;
use crate::tensor::{Feature, GeometricTensor};

pub const VAR_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FieldNorm<T> {
    fields: usize,
    field_size: usize,
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> FieldNorm<T> {
    pub fn new(ftype: &FieldType) -> Self {
        Self {
            fields: ftype.multiplicity,
            field_size: ftype.field_size(),
            gain: vec![T::one(); ftype.multiplicity],
            bias: vec![T::zero(); ftype.multiplicity],
        }
    }

    pub fn fields(&self) -> usize {
        self.fields
    }

    pub fn param_count(&self) -> usize {
        2 * self.fields
    }

    pub fn check(&self, ftype: &FieldType) -> Result<()> {
        if ftype.multiplicity != self.fields || ftype.field_size() != self.field_size {
            return Err(mismatch(format!(
                "field norm over {} fields of size {} got {:?}",
                self.fields, self.field_size, ftype
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_sample(&self, x: &Feature<T>) -> (Feature<T>, NormCache<T>) {
        let block = self.field_size * x.plane();
        let count = T::from_usize(block).expect("count");
        let eps = T::from_f64_lossy(VAR_EPS);
        let mut y = vec![T::zero(); x.data.len()];
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = Vec::with_capacity(self.fields);
        for f in 0..self.fields {
            let src = &x.data[f * block..][..block];
            let rough = src.iter().copied().sum::<T>() / count;
            // second pass removes the rounding error of the first sum
            let mean = rough + src.iter().map(|&v| v - rough).sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = (var + eps).sqrt().recip();
            inv_std.push(is);
            let (g, b) = (self.gain[f], self.bias[f]);
            for ((yv, xh), &v) in y[f * block..][..block]
                .iter_mut()
                .zip(&mut xhat[f * block..][..block])
                .zip(src)
            {
                *xh = (v - mean) * is;
                *yv = g * *xh + b;
            }
        }
        (Feature::new(x.c, x.h, x.w, y), NormCache { xhat, inv_std })
    }

    /// `grad` layout: gains then biases.
    pub(crate) fn backward_sample(
        &self,
        cache: &NormCache<T>,
        gy: &Feature<T>,
        grad: Option<&mut [T]>,
    ) -> Feature<T> {
        let block = self.field_size * gy.plane();
        let count = T::from_usize(block).expect("count");
        let mut gx = vec![T::zero(); gy.data.len()];
        let mut sums = Vec::with_capacity(self.fields);
        for f in 0..self.fields {
            let g = &gy.data[f * block..][..block];
            let xh = &cache.xhat[f * block..][..block];
            let sum_g = g.iter().copied().sum::<T>();
            let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            sums.push((sum_gx, sum_g));
            let scale = self.gain[f] * cache.inv_std[f];
            let (mg, mgx) = (sum_g / count, sum_gx / count);
            for ((d, &gv), &xv) in gx[f * block..][..block].iter_mut().zip(g).zip(xh) {
                *d = scale * (gv - mg - xv * mgx);
            }
        }
        if let Some(grad) = grad {
            let (gg, gb) = grad.split_at_mut(self.fields);
            for (f, (sgx, sg)) in sums.into_iter().enumerate() {
                gg[f] = gg[f] + sgx;
                gb[f] = gb[f] + sg;
            }
        }
        Feature::new(gy.c, gy.h, gy.w, gx)
    }
}

/// Functional form over a batch.
pub fn field_norm<T: Scalar>(x: &GeometricTensor<T>, norm: &FieldNorm<T>) -> Result<GeometricTensor<T>> {
    norm.check(x.ftype())?;
    let samples = x.samples().map(|s| norm.forward_sample(&s).0).collect();
    GeometricTensor::from_samples(samples, *x.ftype())
}
