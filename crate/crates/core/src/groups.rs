//! Cyclic rotation groups, their regular representations and the rotation
//! action on square filter grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::scalar::Scalar;
use crate::tensor::GeometricTensor;

/// The group `C_N` of planar rotations by multiples of `2*pi/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CyclicGroup {
    order: usize,
}

impl CyclicGroup {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("group order must be at least 1"));
        }
        Ok(Self { order })
    }

    pub(crate) const fn trivial() -> Self {
        Self { order: 1 }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> {
        0..self.order
    }

    pub fn compose(&self, g: usize, h: usize) -> usize {
        (g + h) % self.order
    }

    pub fn inverse(&self, g: usize) -> usize {
        (self.order - g % self.order) % self.order
    }

    /// Rotation angle of element `g` in radians.
    pub fn angle(&self, g: usize) -> f64 {
        2.0 * PI * (g % self.order) as f64 / self.order as f64
    }

    /// Number of quarter turns if `g` is a multiple of 90 degrees.
    pub fn quarter_turns(&self, g: usize) -> Option<usize> {
        let g = g % self.order;
        (4 * g % self.order == 0).then(|| 4 * g / self.order)
    }
}

pub fn make_cyclic_group(order: usize) -> Result<CyclicGroup> {
    CyclicGroup::new(order)
}

/// Regular representation `rho(g)` as a dense `N x N` permutation matrix
/// with `P[(i + g) mod N][i] = 1`.
pub fn regular_rep(group: &CyclicGroup, g: usize) -> Result<Vec<Vec<u8>>> {
    let n = group.order();
    if g >= n {
        return Err(invalid(format!("element {g} out of range for C{n}")));
    }
    let mut p = vec![vec![0u8; n]; n];
    for i in 0..n {
        p[(i + g) % n][i] = 1;
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Trivial,
    Regular,
}

/// Channel layout of a feature tensor: `multiplicity` fields of one kind.
///
/// Regular fields are stored field-major: channels `[i*N, (i+1)*N)` hold
/// field `i`, ordered by rotation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldType {
    pub group: CyclicGroup,
    pub kind: FieldKind,
    pub multiplicity: usize,
}

impl FieldType {
    pub fn trivial(group: CyclicGroup, multiplicity: usize) -> Self {
        Self { group, kind: FieldKind::Trivial, multiplicity }
    }

    pub fn regular(group: CyclicGroup, multiplicity: usize) -> Self {
        Self { group, kind: FieldKind::Regular, multiplicity }
    }

    /// Plain (non-equivariant) channels.
    pub fn plain(channels: usize) -> Self {
        Self::trivial(CyclicGroup::trivial(), channels)
    }

    /// Channels per field.
    pub fn field_size(&self) -> usize {
        match self.kind {
            FieldKind::Trivial => 1,
            FieldKind::Regular => self.group.order(),
        }
    }

    pub fn channels(&self) -> usize {
        self.multiplicity * self.field_size()
    }
}

/// Reinterpret a regular `C_N` field type as `C_{N/2}` fields.
///
/// Returns the new type and `map` with `map[new_channel] = old_channel`.
/// Each original field splits into the even-index coset (new field `2i`)
/// and the odd-index coset (new field `2i + 1`).
pub fn restrict_regular(field: &FieldType) -> Result<(FieldType, Vec<usize>)> {
    let n = field.group.order();
    if field.kind != FieldKind::Regular {
        return Err(invalid("only regular fields can be restricted"));
    }
    if n % 2 != 0 {
        return Err(invalid(format!("cannot restrict C{n}: order is odd")));
    }
    let half = n / 2;
    let out = FieldType::regular(CyclicGroup::new(half)?, 2 * field.multiplicity);
    let mut map = Vec::with_capacity(field.channels());
    for i in 0..field.multiplicity {
        for parity in 0..2 {
            for j in 0..half {
                map.push(i * n + 2 * j + parity);
            }
        }
    }
    Ok((out, map))
}

/// Max over the orientation channels of every regular field.
pub fn group_pool<T: Scalar>(x: &GeometricTensor<T>) -> Result<GeometricTensor<T>> {
    let [b, c, h, w] = x.shape();
    let n = x.ftype().field_size();
    if c % n != 0 {
        return Err(mismatch(format!("{c} channels not divisible by group order {n}")));
    }
    let f = c / n;
    let plane = h * w;
    let src = x.data();
    let mut out = vec![T::zero(); b * f * plane];
    for s in 0..b {
        for field in 0..f {
            let dst = &mut out[(s * f + field) * plane..][..plane];
            let base = (s * c + field * n) * plane;
            dst.copy_from_slice(&src[base..base + plane]);
            for g in 1..n {
                let ch = &src[base + g * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(ch) {
                    if v > *d {
                        *d = v;
                    }
                }
            }
        }
    }
    GeometricTensor::new(
        out,
        [b, f, h, w],
        FieldType::trivial(x.ftype().group, f),
    )
}

/// Disk mask of a `k x k` grid: pixel centres within `(k-1)/2` of the centre.
pub fn disk_mask(k: usize) -> Vec<bool> {
    let c = (k as f64 - 1.0) / 2.0;
    let r2 = c * c + 1e-9;
    (0..k * k)
        .map(|i| {
            let (r, q) = ((i / k) as f64, (i % k) as f64);
            (r - c).powi(2) + (q - c).powi(2) <= r2
        })
        .collect()
}

/// A square, odd-sized filter whose entries outside the disk mask are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrid {
    k: usize,
    weights: Vec<f64>,
}

impl FilterGrid {
    /// Builds a grid from row-major weights, zeroing entries outside the disk.
    pub fn new(k: usize, weights: Vec<f64>) -> Result<Self> {
        if k % 2 == 0 {
            return Err(invalid(format!("filter size {k} must be odd")));
        }
        if weights.len() != k * k {
            return Err(mismatch(format!("expected {} weights, got {}", k * k, weights.len())));
        }
        let mask = disk_mask(k);
        let weights = weights
            .into_iter()
            .zip(mask)
            .map(|(w, m)| if m { w } else { 0.0 })
            .collect();
        Ok(Self { k, weights })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.k + col]
    }
}

/// Rotate a filter counter-clockwise by `2*pi*m/N` about its centre.
pub fn rotate_filter(filter: &FilterGrid, m: usize, order: usize) -> Result<FilterGrid> {
    let group = CyclicGroup::new(order)?;
    if m >= order {
        return Err(invalid(format!("rotation index {m} out of range for C{order}")));
    }
    let stencil = RotationStencil::new(filter.k, &group, m)?;
    let mut out = vec![0.0; filter.k * filter.k];
    stencil.apply(&filter.weights, &mut out);
    FilterGrid::new(filter.k, out)
}

/// Linear map realizing one rotation on a `k x k` grid.
///
/// Multiples of 90 degrees are exact pixel permutations. Other angles use
/// trigonometric interpolation along each pixel's 90-degree orbit (four
/// pixels at equal radius), which reproduces the orbit's mean and first
/// angular harmonic exactly and damps the second harmonic by `cos(2t)`.
/// Outputs outside the disk are zero.
#[derive(Debug, Clone)]
pub(crate) struct RotationStencil {
    /// Per output pixel: `(source pixel, coefficient)` terms.
    taps: Vec<Vec<(usize, f64)>>,
}

impl RotationStencil {
    pub(crate) fn new(k: usize, group: &CyclicGroup, m: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(invalid(format!("filter size {k} must be odd")));
        }
        let mask = disk_mask(k);
        let ctr = (k / 2) as isize;
        let to_xy = |p: usize| ((p % k) as isize - ctr, ctr - (p / k) as isize);
        let to_pix = |x: isize, y: isize| ((ctr - y) * k as isize + (x + ctr)) as usize;
        // Counter-clockwise quarter turn of an offset vector.
        let quarter = |p: usize| {
            let (x, y) = to_xy(p);
            to_pix(-y, x)
        };
        let exact = group.quarter_turns(m);
        let t = -group.angle(m);
        let (ct, st, c2) = (t.cos(), t.sin(), (2.0 * t).cos());
        let orbit_w = [
            0.25 + ct / 2.0 + c2 / 4.0,
            0.25 + st / 2.0 - c2 / 4.0,
            0.25 - ct / 2.0 + c2 / 4.0,
            0.25 - st / 2.0 - c2 / 4.0,
        ];
        let taps = (0..k * k)
            .map(|p| {
                if !mask[p] {
                    return Vec::new();
                }
                if let Some(q) = exact {
                    // out(p) = in(R^-q p) = in(R^(4-q) p)
                    let mut src = p;
                    for _ in 0..(4 - q) % 4 {
                        src = quarter(src);
                    }
                    return vec![(src, 1.0)];
                }
                if to_xy(p) == (0, 0) {
                    return vec![(p, 1.0)];
                }
                let mut src = p;
                let mut terms = Vec::with_capacity(4);
                for w in orbit_w {
                    terms.push((src, w));
                    src = quarter(src);
                }
                terms
            })
            .collect();
        Ok(Self { taps })
    }

    pub(crate) fn taps(&self) -> &[Vec<(usize, f64)>] {
        &self.taps
    }

    pub(crate) fn apply(&self, input: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.taps) {
            *o = terms.iter().map(|&(s, w)| w * input[s]).sum();
        }
    }
}
