//! Plain, lifting and group convolutions over a shared filter bank.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::groups::{CyclicGroup, FieldKind, FieldType, RotationStencil};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Feature, GeometricTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    /// Ordinary convolution, no weight tying.
    Plain,
    /// Trivial (image) input to regular output.
    Lift,
    /// Regular input to regular output.
    Group,
}

/// Learnable canonical filters plus their expansion into rotated copies.
///
/// Canonical weights have shape `out_fields x canon_in x k x k` where
/// `canon_in` is the input channel count (`f_in * N` for group convs).
/// The expanded bank has `out_fields * N` output channels; its output
/// channel `o*N + g` is the canonical filter `o` rotated by `g` (and, for
/// group convs, with its input orientation axis shifted by `g`).
#[derive(Debug)]
pub struct FilterBank<T> {
    kind: ConvKind,
    group: CyclicGroup,
    out_fields: usize,
    in_channels: usize,
    k: usize,
    canonical: Vec<T>,
    stencils: Vec<RotationStencil>,
    expanded: OnceLock<Vec<T>>,
}

impl<T: Clone> Clone for FilterBank<T> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            group: self.group,
            out_fields: self.out_fields,
            in_channels: self.in_channels,
            k: self.k,
            canonical: self.canonical.clone(),
            stencils: self.stencils.clone(),
            expanded: OnceLock::new(),
        }
    }
}

impl<T: Scalar> FilterBank<T> {
    /// `in_channels` is the number of input channels as stored in the input
    /// tensor (for group convs this is `f_in * N`).
    pub fn zeros(
        kind: ConvKind,
        group: CyclicGroup,
        in_channels: usize,
        out_fields: usize,
        k: usize,
    ) -> Result<Self> {
        if kind == ConvKind::Plain && group.order() != 1 {
            return Err(mismatch("plain convolution has no group"));
        }
        if kind == ConvKind::Group && in_channels % group.order() != 0 {
            return Err(mismatch(format!(
                "{in_channels} input channels is not a multiple of C{}",
                group.order()
            )));
        }
        if k % 2 == 0 {
            return Err(crate::error::invalid(format!("kernel size {k} must be odd")));
        }
        let stencils = match kind {
            ConvKind::Plain => Vec::new(),
            _ => group
                .elements()
                .map(|g| RotationStencil::new(k, &group, g))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            kind,
            group,
            out_fields,
            in_channels,
            k,
            canonical: vec![T::zero(); out_fields * in_channels * k * k],
            stencils,
            expanded: OnceLock::new(),
        })
    }

    /// Zero-mean uniform init with variance `2 / (fan_in * N)`, where
    /// `fan_in = in_channels * k^2` counts expanded input channels.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = (self.in_channels * self.k * self.k) as f64;
        let var = 2.0 / (fan_in * self.group.order() as f64);
        let a = (3.0 * var).sqrt();
        for w in &mut self.canonical {
            *w = T::from_f64_lossy(rng.random_range(-a..a));
        }
        self.expanded = OnceLock::new();
    }

    pub fn kind(&self) -> ConvKind {
        self.kind
    }

    pub fn group(&self) -> CyclicGroup {
        self.group
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn out_fields(&self) -> usize {
        self.out_fields
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            ConvKind::Plain => self.out_fields,
            _ => self.out_fields * self.group.order(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.canonical.len()
    }

    pub fn canonical_shape(&self) -> Vec<usize> {
        vec![self.out_fields, self.in_channels, self.k, self.k]
    }

    pub fn canonical(&self) -> &[T] {
        &self.canonical
    }

    pub fn set_canonical(&mut self, w: &[T]) {
        assert_eq!(w.len(), self.canonical.len(), "canonical weight length");
        self.canonical.copy_from_slice(w);
        self.expanded = OnceLock::new();
    }

    pub fn output_type(&self, input: &FieldType) -> Result<FieldType> {
        let ok = match self.kind {
            ConvKind::Plain => input.kind == FieldKind::Trivial,
            ConvKind::Lift => input.kind == FieldKind::Trivial,
            ConvKind::Group => input.kind == FieldKind::Regular && input.group == self.group,
        };
        if !ok || input.channels() != self.in_channels {
            return Err(mismatch(format!(
                "{:?} conv over C{} with {} input channels cannot take {:?}",
                self.kind,
                self.group.order(),
                self.in_channels,
                input
            )));
        }
        Ok(match self.kind {
            ConvKind::Plain => FieldType::plain(self.out_fields),
            _ => FieldType::regular(self.group, self.out_fields),
        })
    }

    /// Source canonical input channel for expanded `(g, ci)`.
    fn source_channel(&self, g: usize, ci: usize) -> usize {
        match self.kind {
            ConvKind::Group => {
                let n = self.group.order();
                let (field, h) = (ci / n, ci % n);
                field * n + (h + n - g) % n
            }
            _ => ci,
        }
    }

    /// Expanded weights, `out_channels x in_channels x k x k`.
    pub fn expanded(&self) -> &[T] {
        if self.kind == ConvKind::Plain {
            return &self.canonical;
        }
        self.expanded.get_or_init(|| self.expand())
    }

    fn expand(&self) -> Vec<T> {
        let n = self.group.order();
        let kk = self.k * self.k;
        let cin = self.in_channels;
        let mut out = vec![T::zero(); self.out_channels() * cin * kk];
        for o in 0..self.out_fields {
            for g in 0..n {
                let taps = self.stencils[g].taps();
                for ci in 0..cin {
                    let src_ci = self.source_channel(g, ci);
                    let src = &self.canonical[(o * cin + src_ci) * kk..][..kk];
                    let dst = &mut out[((o * n + g) * cin + ci) * kk..][..kk];
                    for (d, terms) in dst.iter_mut().zip(taps) {
                        *d = terms
                            .iter()
                            .map(|&(s, w)| T::from_f64_lossy(w) * src[s])
                            .sum();
                    }
                }
            }
        }
        out
    }

    /// Accumulate the pull-back of an expanded-weight gradient into `grad`.
    fn pull_back(&self, g_expanded: &[T], grad: &mut [T]) {
        if self.kind == ConvKind::Plain {
            for (a, &b) in grad.iter_mut().zip(g_expanded) {
                *a = *a + b;
            }
            return;
        }
        let n = self.group.order();
        let kk = self.k * self.k;
        let cin = self.in_channels;
        for o in 0..self.out_fields {
            for g in 0..n {
                let taps = self.stencils[g].taps();
                for ci in 0..cin {
                    let src_ci = self.source_channel(g, ci);
                    let gsrc = &g_expanded[((o * n + g) * cin + ci) * kk..][..kk];
                    let dst = &mut grad[(o * cin + src_ci) * kk..][..kk];
                    for (gv, terms) in gsrc.iter().zip(taps) {
                        for &(s, w) in terms {
                            dst[s] = dst[s] + T::from_f64_lossy(w) * *gv;
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn forward_sample(&self, x: &Feature<T>) -> (Feature<T>, Vec<T>) {
        assert_eq!(x.c, self.in_channels, "conv input channels");
        let col = im2col(x, self.k);
        let cout = self.out_channels();
        let hw = x.plane();
        let mut y = vec![T::zero(); cout * hw];
        gemm(cout, self.in_channels * self.k * self.k, hw, self.expanded(), false, &col, false, &mut y, false);
        (Feature::new(cout, x.h, x.w, y), col)
    }

    /// Returns the input gradient when `need_input` is set; accumulates the
    /// canonical-weight gradient into `grad` when given.
    pub(crate) fn backward_sample(
        &self,
        col: &[T],
        in_shape: (usize, usize, usize),
        gy: &Feature<T>,
        grad: Option<&mut [T]>,
        need_input: bool,
    ) -> Option<Feature<T>> {
        let (c, h, w) = in_shape;
        let cout = self.out_channels();
        let hw = h * w;
        let ck = c * self.k * self.k;
        if let Some(grad) = grad {
            let mut gw = vec![T::zero(); cout * ck];
            gemm(cout, hw, ck, &gy.data, false, col, true, &mut gw, false);
            self.pull_back(&gw, grad);
        }
        if !need_input {
            return None;
        }
        let mut gcol = vec![T::zero(); ck * hw];
        gemm(ck, cout, hw, self.expanded(), true, &gy.data, false, &mut gcol, false);
        Some(col2im(&gcol, c, h, w, self.k))
    }
}

/// Stride-1, zero-padded ("same") patch matrix `(c*k*k) x (h*w)`.
fn im2col<T: Scalar>(x: &Feature<T>, k: usize) -> Vec<T> {
    let (c, h, w) = (x.c, x.h, x.w);
    let p = (k / 2) as isize;
    let hw = h * w;
    let mut col = vec![T::zero(); c * k * k * hw];
    for ci in 0..c {
        let src = x.channel(ci);
        for kr in 0..k {
            for kc in 0..k {
                let row = &mut col[((ci * k + kr) * k + kc) * hw..][..hw];
                let dy = kr as isize - p;
                let dx = kc as isize - p;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    let srow = &src[sy as usize * w..][..w];
                    for xx in x0..x1 {
                        row[y * w + xx] = srow[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize) -> Feature<T> {
    let p = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let dst = &mut out[ci * hw..][..hw];
        for kr in 0..k {
            for kc in 0..k {
                let row = &col[((ci * k + kr) * k + kc) * hw..][..hw];
                let dy = kr as isize - p;
                let dx = kc as isize - p;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    let drow = &mut dst[sy as usize * w..][..w];
                    for xx in x0..x1 {
                        let t = &mut drow[(xx as isize + dx) as usize];
                        *t = *t + row[y * w + xx];
                    }
                }
            }
        }
    }
    Feature::new(c, h, w, out)
}

fn apply<T: Scalar>(x: &GeometricTensor<T>, bank: &FilterBank<T>) -> Result<GeometricTensor<T>> {
    let out_type = bank.output_type(x.ftype())?;
    let samples = x.samples().map(|s| bank.forward_sample(&s).0).collect();
    GeometricTensor::from_samples(samples, out_type)
}

/// Lift a trivial (image) field to a regular field over the bank's group.
pub fn lift_conv<T: Scalar>(x: &GeometricTensor<T>, bank: &FilterBank<T>) -> Result<GeometricTensor<T>> {
    if bank.kind() != ConvKind::Lift {
        return Err(mismatch("lift_conv needs a lifting filter bank"));
    }
    apply(x, bank)
}

/// Regular-to-regular group convolution.
pub fn group_conv<T: Scalar>(x: &GeometricTensor<T>, bank: &FilterBank<T>) -> Result<GeometricTensor<T>> {
    if bank.kind() != ConvKind::Group {
        return Err(mismatch("group_conv needs a group filter bank"));
    }
    apply(x, bank)
}

/// Ordinary convolution on plain channels.
pub fn plain_conv<T: Scalar>(x: &GeometricTensor<T>, bank: &FilterBank<T>) -> Result<GeometricTensor<T>> {
    if bank.kind() != ConvKind::Plain {
        return Err(mismatch("plain_conv needs a plain filter bank"));
    }
    apply(x, bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct zero-padded correlation, independent of im2col/gemm.
    fn direct_conv(x: &Feature<f64>, w: &[f64], cout: usize, k: usize) -> Feature<f64> {
        let p = (k / 2) as isize;
        let mut y = Feature::zeros(cout, x.h, x.w);
        for o in 0..cout {
            for r in 0..x.h {
                for c in 0..x.w {
                    let mut acc = 0.0;
                    for ci in 0..x.c {
                        for kr in 0..k {
                            for kc in 0..k {
                                let (sr, sc) = (r as isize + kr as isize - p, c as isize + kc as isize - p);
                                if sr < 0 || sc < 0 || sr >= x.h as isize || sc >= x.w as isize {
                                    continue;
                                }
                                acc += x.data[(ci * x.h + sr as usize) * x.w + sc as usize]
                                    * w[((o * x.c + ci) * k + kr) * k + kc];
                            }
                        }
                    }
                    y.data[(o * x.h + r) * x.w + c] = acc;
                }
            }
        }
        y
    }

    fn random_feature(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Feature<f64> {
        Feature::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn plain_conv_matches_direct_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bank = FilterBank::<f64>::zeros(ConvKind::Plain, CyclicGroup::trivial(), 3, 4, 3).unwrap();
        bank.init_uniform(&mut rng);
        let x = random_feature(&mut rng, 3, 6, 5);
        let (y, _) = bank.forward_sample(&x);
        let want = direct_conv(&x, bank.canonical(), 4, 3);
        for (a, b) in y.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x), gy> = <x, conv^T(gy)> and = <w, dW>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = CyclicGroup::new(4).unwrap();
        let mut bank = FilterBank::<f64>::zeros(ConvKind::Group, g, 8, 2, 3).unwrap();
        bank.init_uniform(&mut rng);
        let x = random_feature(&mut rng, 8, 5, 5);
        let (y, col) = bank.forward_sample(&x);
        let gy = random_feature(&mut rng, y.c, 5, 5);
        let mut gw = vec![0.0; bank.param_count()];
        let gx = bank.backward_sample(&col, (8, 5, 5), &gy, Some(&mut gw), true).unwrap();
        let lhs: f64 = y.data.iter().zip(&gy.data).map(|(a, b)| a * b).sum();
        let via_x: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = bank.canonical().iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn lift_output_shape() {
        let g = CyclicGroup::new(4).unwrap();
        let bank = FilterBank::<f32>::zeros(ConvKind::Lift, g, 3, 8, 3).unwrap();
        let x = GeometricTensor::zeros([2, 3, 28, 28], FieldType::plain(3)).unwrap();
        let y = lift_conv(&x, &bank).unwrap();
        assert_eq!(y.shape(), [2, 32, 28, 28]);
        assert_eq!(y.ftype().kind, FieldKind::Regular);
    }

    #[test]
    fn group_conv_output_shape_and_mismatch() {
        let g = CyclicGroup::new(4).unwrap();
        let bank = FilterBank::<f32>::zeros(ConvKind::Group, g, 8, 3, 3).unwrap();
        let x = GeometricTensor::zeros([1, 8, 14, 14], FieldType::regular(g, 2)).unwrap();
        assert_eq!(group_conv(&x, &bank).unwrap().shape(), [1, 12, 14, 14]);

        let c2 = CyclicGroup::new(2).unwrap();
        let wrong = GeometricTensor::<f32>::zeros([1, 8, 14, 14], FieldType::regular(c2, 4)).unwrap();
        assert!(group_conv(&wrong, &bank).is_err());
        assert!(lift_conv(&x, &bank).is_err());
    }

    #[test]
    fn constant_input_gives_equal_orientation_responses() {
        // 5x5 constant image, constant disk-masked filter: interior pixels
        // see the whole filter, and every rotation of a constant disk is
        // the same disk.
        let g = CyclicGroup::new(8).unwrap();
        let mut bank = FilterBank::<f64>::zeros(ConvKind::Lift, g, 1, 1, 3).unwrap();
        bank.set_canonical(&[1.0; 9]);
        let x = Feature::new(1, 5, 5, vec![1.0; 25]);
        let (y, _) = bank.forward_sample(&x);
        let mask_sum = crate::groups::disk_mask(3).iter().filter(|m| **m).count() as f64;
        for r in 1..4 {
            for c in 1..4 {
                for o in 0..8 {
                    let v = y.data[(o * 5 + r) * 5 + c];
                    assert!((v - mask_sum).abs() < 1e-12, "orientation {o}: {v}");
                }
            }
        }
    }

    #[test]
    fn expansion_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = CyclicGroup::new(8).unwrap();
        let mut bank = FilterBank::<f32>::zeros(ConvKind::Group, g, 16, 2, 3).unwrap();
        bank.init_uniform(&mut rng);
        let first = bank.expanded().to_vec();
        assert_eq!(first, bank.expand());
        let copy = bank.clone();
        assert_eq!(copy.expanded(), &first[..]);
    }

    #[test]
    fn parameter_count_is_independent_of_group_order() {
        let counts: Vec<usize> = [1, 2, 4, 8, 16]
            .iter()
            .map(|&n| {
                let g = CyclicGroup::new(n).unwrap();
                FilterBank::<f32>::zeros(ConvKind::Group, g, 3 * n, 5, 3).unwrap().param_count() / n
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(counts[0], 5 * 3 * 9);
    }
}
