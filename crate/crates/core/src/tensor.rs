//! Feature tensors annotated with their field layout.

use crate::error::{mismatch, Error, Result};
use crate::groups::{FieldKind, FieldType};
use crate::scalar::Scalar;

/// A batched `B x C x H x W` tensor together with its field type.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricTensor<T> {
    data: Vec<T>,
    shape: [usize; 4],
    ftype: FieldType,
}

impl<T: Scalar> GeometricTensor<T> {
    pub fn new(data: Vec<T>, shape: [usize; 4], ftype: FieldType) -> Result<Self> {
        let [b, c, h, w] = shape;
        if data.len() != b * c * h * w {
            return Err(mismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if c != ftype.channels() {
            return Err(mismatch(format!(
                "{c} channels but field type declares {}",
                ftype.channels()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite entry at flat index {i}")));
        }
        Ok(Self { data, shape, ftype })
    }

    pub fn zeros(shape: [usize; 4], ftype: FieldType) -> Result<Self> {
        Self::new(vec![T::zero(); shape.iter().product()], shape, ftype)
    }

    pub fn from_samples(samples: Vec<Feature<T>>, ftype: FieldType) -> Result<Self> {
        let first = samples.first().ok_or_else(|| mismatch("empty batch"))?;
        let (c, h, w) = (first.c, first.h, first.w);
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in &samples {
            if (s.c, s.h, s.w) != (c, h, w) {
                return Err(mismatch("samples with differing shapes"));
            }
            data.extend_from_slice(&s.data);
        }
        Self::new(data, [samples.len(), c, h, w], ftype)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn ftype(&self) -> &FieldType {
        &self.ftype
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, b: usize) -> Feature<T> {
        let n = self.sample_len();
        Feature {
            c: self.shape[1],
            h: self.shape[2],
            w: self.shape[3],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Feature<T>> + '_ {
        (0..self.batch()).map(|b| self.sample(b))
    }

    /// Spatial counter-clockwise rotation by `k` quarter turns (square maps).
    pub fn rot90(&self, k: usize) -> Self {
        let samples = self.samples().map(|s| s.rot90(k)).collect();
        Self::from_samples(samples, self.ftype).expect("rotation preserves layout")
    }

    /// Cyclically shift the orientation channels of every regular field:
    /// new channel `g` takes old channel `g - s`.
    pub fn shift_orientations(&self, s: usize) -> Self {
        let samples = self
            .samples()
            .map(|f| f.shift_orientations(&self.ftype, s))
            .collect();
        Self::from_samples(samples, self.ftype).expect("shift preserves layout")
    }
}

/// One sample's `C x H x W` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Feature<T> {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature size");
        Self { c, h, w, data }
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::new(c, h, w, vec![T::zero(); c * h * w])
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let p = self.plane();
        &self.data[ch * p..(ch + 1) * p]
    }

    pub fn rot90(&self, k: usize) -> Self {
        assert_eq!(self.h, self.w, "rot90 needs square maps");
        let n = self.h;
        let mut cur = self.data.clone();
        for _ in 0..k % 4 {
            let mut next = vec![T::zero(); cur.len()];
            for ch in 0..self.c {
                let src = &cur[ch * n * n..(ch + 1) * n * n];
                let dst = &mut next[ch * n * n..(ch + 1) * n * n];
                for r in 0..n {
                    for q in 0..n {
                        dst[r * n + q] = src[q * n + (n - 1 - r)];
                    }
                }
            }
            cur = next;
        }
        Self::new(self.c, self.h, self.w, cur)
    }

    pub fn shift_orientations(&self, ftype: &FieldType, s: usize) -> Self {
        if ftype.kind == FieldKind::Trivial {
            return self.clone();
        }
        let n = ftype.group.order();
        let p = self.plane();
        let mut out = vec![T::zero(); self.data.len()];
        for f in 0..ftype.multiplicity {
            for g in 0..n {
                let src = f * n + (g + n - s % n) % n;
                let dst = f * n + g;
                out[dst * p..(dst + 1) * p].copy_from_slice(&self.data[src * p..(src + 1) * p]);
            }
        }
        Self::new(self.c, self.h, self.w, out)
    }
}

/// Dense row-major matrix, used for logits and probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

impl<T: Scalar> Matrix<T> {
    /// Row-wise softmax in `f64`.
    pub fn softmax(&self) -> Matrix<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.rows {
            let row: Vec<f64> = self.row(r).iter().map(|v| v.as_f64()).collect();
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.into_iter().map(|v| v / z));
        }
        Matrix { rows: self.rows, cols: self.cols, data: out }
    }
}
