use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cache, Layer};
use crate::error::{invalid, mismatch, Error, Result};
use crate::groups::{CyclicGroup, FieldType};
use crate::scalar::Scalar;
use crate::tensor::{Feature, GeometricTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardMode {
    Standard,
    /// ReLUs also zero negative upstream gradients (guided backpropagation).
    Guided,
}

/// Location of one parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub layer: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Per-sample gradients, one row of length `params` per sample.
///
/// Columns follow the model's flattening order: layers in sequence (nested
/// residual bodies in place), and within a layer conv `weight`; norm `gain`
/// then `bias`; linear `weight` (row-major `out x in`) then `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads<T> {
    pub batch: usize,
    pub params: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> PerSampleGrads<T> {
    pub fn new(batch: usize, params: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * params {
            return Err(mismatch("per-sample gradient buffer size"));
        }
        Ok(Self { batch, params, data })
    }

    pub fn row(&self, b: usize) -> &[T] {
        &self.data[b * self.params..(b + 1) * self.params]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.params.max(1)).take(self.batch)
    }
}

/// Output of one per-sample backward sweep.
#[derive(Debug, Clone)]
pub struct PerSampleBatch<T> {
    /// Batch mean of the per-sample losses (averaged over replicas).
    pub loss: T,
    pub losses: Vec<T>,
    /// Logits of the first replica.
    pub logits: Matrix<T>,
    pub grads: PerSampleGrads<T>,
}

/// A sequential network over single samples.
#[derive(Debug, Clone)]
pub struct Model<T> {
    layers: Vec<Layer<T>>,
    input_type: FieldType,
    types: Vec<FieldType>,
    group: CyclicGroup,
    classes: usize,
    cam_layer: Option<usize>,
}

pub(crate) struct Trace<T> {
    pub(crate) caches: Vec<Cache<T>>,
    pub(crate) kept: Option<Feature<T>>,
}

impl<T: Scalar> Model<T> {
    /// `cam_layer` names the top-level layer whose output is the Grad-CAM
    /// target activation.
    pub fn new(
        layers: Vec<Layer<T>>,
        input_type: FieldType,
        group: CyclicGroup,
        cam_layer: Option<usize>,
    ) -> Result<Self> {
        let mut types = Vec::with_capacity(layers.len());
        let mut t = input_type;
        for (i, l) in layers.iter().enumerate() {
            t = l
                .output_type(&t)
                .map_err(|e| mismatch(format!("layer {i} ({}): {e}", l.name())))?;
            types.push(t);
        }
        if let Some(c) = cam_layer {
            if c + 1 >= layers.len() {
                return Err(invalid("grad-cam layer must precede the output layer"));
            }
        }
        Ok(Self { classes: t.channels(), layers, input_type, types, group, cam_layer })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_type(&self) -> &FieldType {
        &self.input_type
    }

    pub fn layer_types(&self) -> &[FieldType] {
        &self.types
    }

    pub fn group(&self) -> CyclicGroup {
        self.group
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cam_layer(&self) -> Option<usize> {
        self.cam_layer
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn param_entries(&self) -> Vec<ParamEntry> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&format!("{i}.{}", l.name()), &mut |layer, name, shape, vals| {
                out.push(ParamEntry { layer, name: name.to_string(), shape, offset, len: vals.len() });
                offset += vals.len();
            });
        }
        out
    }

    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.visit_params("", &mut |_, _, _, vals| out.extend_from_slice(vals));
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(mismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.param_count();
            l.load_params(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offs.push(off);
            off += l.param_count();
        }
        offs
    }

    fn check_input(&self, x: &GeometricTensor<T>) -> Result<()> {
        if x.ftype() != &self.input_type {
            return Err(mismatch(format!(
                "model expects {:?}, got {:?}",
                self.input_type,
                x.ftype()
            )));
        }
        Ok(())
    }

    pub(crate) fn trace_sample(
        &self,
        x: &Feature<T>,
        keep: Option<usize>,
        mut conv_out: Option<&mut Vec<Feature<T>>>,
    ) -> Result<(Feature<T>, Trace<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut kept = None;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (y, c) = l.forward_sample(&h, conv_out.as_deref_mut())?;
            if let Some(bad) = y.data.iter().find(|v| !v.is_finite()) {
                return Err(Error::LayerNumericFault { layer: i, detail: format!("{} produced {bad}", l.name()) });
            }
            caches.push(c);
            if keep == Some(i) {
                kept = Some(y.clone());
            }
            h = y;
        }
        Ok((h, Trace { caches, kept }))
    }

    /// Backpropagate from the output through layers `stop..` (in reverse).
    /// Returns the gradient w.r.t. the input of layer `stop` when requested.
    pub(crate) fn backward_trace(
        &self,
        trace: &Trace<T>,
        grad_out: Feature<T>,
        stop: usize,
        mut grads: Option<&mut [T]>,
        mode: super::BackwardMode,
        need_input: bool,
    ) -> Option<Feature<T>> {
        let offs = self.offsets();
        let mut g = grad_out;
        for i in (stop..self.layers.len()).rev() {
            let l = &self.layers[i];
            let slice = grads.as_deref_mut().map(|s| &mut s[offs[i]..offs[i] + l.param_count()]);
            let want_input = i > stop || need_input;
            match l.backward_sample(&trace.caches[i], &g, slice, mode, want_input) {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }

    pub fn forward_sample(&self, x: &Feature<T>) -> Result<Vec<T>> {
        Ok(self.trace_sample(x, None, None)?.0.data)
    }

    /// Logits `B x classes`. Samples are processed independently.
    pub fn forward(&self, x: &GeometricTensor<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let rows: Vec<Vec<T>> = (0..x.batch())
            .into_par_iter()
            .map(|b| self.forward_sample(&x.sample(b)))
            .collect::<Result<_>>()?;
        Matrix::new(x.batch(), self.classes, rows.concat())
    }

    /// Pre-normalization outputs of every convolution, in execution order.
    pub fn conv_outputs(&self, x: &Feature<T>) -> Result<Vec<Feature<T>>> {
        let mut rec = Vec::new();
        self.trace_sample(x, None, Some(&mut rec))?;
        Ok(rec)
    }

    /// Cross-entropy loss, logits and full parameter gradient of one sample.
    fn sample_step(&self, x: &Feature<T>, label: usize) -> Result<(T, Vec<T>, Vec<T>)> {
        let (out, trace) = self.trace_sample(x, None, None)?;
        let logits = out.data;
        let (loss, dz) = softmax_cross_entropy(&logits, label);
        let mut grad = vec![T::zero(); self.param_count()];
        let gz = Feature::new(self.classes, 1, 1, dz);
        self.backward_trace(&trace, gz, 0, Some(&mut grad), super::BackwardMode::Standard, false);
        Ok((loss, logits, grad))
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(invalid(format!("label {bad} out of range for {} classes", self.classes)));
        }
        Ok(())
    }

    /// Mean loss and per-sample gradients; row `b` depends on sample `b` only.
    pub fn backward_per_sample(&self, x: &GeometricTensor<T>, labels: &[usize]) -> Result<(T, PerSampleGrads<T>)> {
        let out = self.per_sample_gradients(std::slice::from_ref(x), labels)?;
        Ok((out.loss, out.grads))
    }

    /// Per-sample gradients averaged over `K` augmented replicas of each
    /// sample. `replicas[k]` holds replica `k` of every sample in the batch.
    pub fn per_sample_gradients(&self, replicas: &[GeometricTensor<T>], labels: &[usize]) -> Result<PerSampleBatch<T>> {
        if replicas.is_empty() {
            return Err(invalid("no replicas"));
        }
        let batch = labels.len();
        for r in replicas {
            self.check_input(r)?;
            if r.batch() != batch {
                return Err(mismatch(format!("{} samples but {batch} labels", r.batch())));
            }
        }
        self.check_labels(labels)?;
        let k = T::from_usize(replicas.len()).expect("replica count");
        let p = self.param_count();
        let rows: Vec<(T, Vec<T>, Vec<T>)> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut loss_sum = T::zero();
                let mut logits0 = Vec::new();
                let mut acc = vec![T::zero(); p];
                for (ri, r) in replicas.iter().enumerate() {
                    let (loss, logits, g) = self.sample_step(&r.sample(b), labels[b])?;
                    loss_sum = loss_sum + loss;
                    if ri == 0 {
                        logits0 = logits;
                        acc = g;
                    } else {
                        acc.iter_mut().zip(&g).for_each(|(a, &v)| *a = *a + v);
                    }
                }
                if replicas.len() > 1 {
                    acc.iter_mut().for_each(|a| *a = *a / k);
                }
                Ok((loss_sum / k, logits0, acc))
            })
            .collect::<Result<_>>()?;
        let mut losses = Vec::with_capacity(batch);
        let mut logits = Vec::with_capacity(batch * self.classes);
        let mut data = Vec::with_capacity(batch * p);
        for (l, z, g) in rows {
            losses.push(l);
            logits.extend(z);
            data.extend(g);
        }
        let loss = if batch == 0 {
            T::zero()
        } else {
            losses.iter().copied().sum::<T>() / T::from_usize(batch).expect("batch")
        };
        Ok(PerSampleBatch {
            loss,
            losses,
            logits: Matrix::new(batch, self.classes, logits)?,
            grads: PerSampleGrads::new(batch, p, data)?,
        })
    }

    /// Mean cross-entropy of a batch (no gradients).
    pub fn loss(&self, x: &GeometricTensor<T>, labels: &[usize]) -> Result<T> {
        self.check_labels(labels)?;
        let logits = self.forward(x)?;
        let total = (0..logits.rows)
            .map(|r| softmax_cross_entropy(logits.row(r), labels[r]).0)
            .sum::<T>();
        Ok(total / T::from_usize(labels.len().max(1)).expect("batch"))
    }
}

/// Loss `-log softmax(z)[label]` and its gradient `softmax(z) - onehot`.
pub(crate) fn softmax_cross_entropy<T: Scalar>(z: &[T], label: usize) -> (T, Vec<T>) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().copied().sum::<T>();
    let loss = s.ln() - (z[label] - m);
    let mut dz: Vec<T> = e.into_iter().map(|v| v / s).collect();
    dz[label] = dz[label] - T::one();
    (loss, dz)
}
