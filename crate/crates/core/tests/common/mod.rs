//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use steerdp::groups::{CyclicGroup, FieldKind, FieldType};
use steerdp::layers::{ConvKind, FieldNorm, FilterBank, Layer, Linear, Model};
use steerdp::scalar::Scalar;
use steerdp::tensor::GeometricTensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: [usize; 4], ftype: FieldType) -> GeometricTensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
    GeometricTensor::new(data, shape, ftype).unwrap()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur of one `n x n` plane, reflecting at the border.
pub fn blur(plane: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let reflect = |i: isize| -> usize {
        let m = n as isize;
        let mut i = i;
        while i < 0 || i >= m {
            i = if i < 0 { -i - 1 } else { 2 * m - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; n * n];
    for row in 0..n {
        for c in 0..n {
            tmp[row * n + c] = k.iter().enumerate().map(|(j, w)| w * plane[row * n + reflect(c as isize + j as isize - r)]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for row in 0..n {
        for c in 0..n {
            out[row * n + c] = k.iter().enumerate().map(|(j, w)| w * tmp[reflect(row as isize + j as isize - r) * n + c]).sum();
        }
    }
    out
}

/// Random low-pass (Gaussian sigma 3) tensor.
pub fn lowpass_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], ftype: FieldType) -> GeometricTensor<f64> {
    let [b, c, h, w] = shape;
    assert_eq!(h, w);
    let mut data = Vec::with_capacity(b * c * h * w);
    for _ in 0..b * c {
        let white: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
        data.extend(blur(&white, h, 3.0));
    }
    GeometricTensor::new(data, shape, ftype).unwrap()
}

/// Counter-clockwise rotation of an `n x n` plane by `theta` about its
/// centre, bilinear with zero fill.
pub fn rotate_plane(plane: &[f64], n: usize, theta: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let (s, co) = theta.sin_cos();
    let at = |r: isize, q: isize| {
        if r < 0 || q < 0 || r >= n as isize || q >= n as isize {
            0.0
        } else {
            plane[r as usize * n + q as usize]
        }
    };
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for q in 0..n {
            let (x, y) = (q as f64 - c, c - r as f64);
            let sx = co * x + s * y;
            let sy = -s * x + co * y;
            let (row, col) = (c - sy, sx + c);
            let (r0, c0) = (row.floor(), col.floor());
            let (tr, tc) = (row - r0, col - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[r * n + q] = (1.0 - tr) * ((1.0 - tc) * at(r0, c0) + tc * at(r0, c0 + 1))
                + tr * ((1.0 - tc) * at(r0 + 1, c0) + tc * at(r0 + 1, c0 + 1));
        }
    }
    out
}

/// Act with group element `g` on a field: spatial rotation by its angle
/// and, for regular fields, an orientation shift by `g`.
pub fn act(x: &GeometricTensor<f64>, g: usize) -> GeometricTensor<f64> {
    let ft = *x.ftype();
    let n = ft.group.order();
    let theta = std::f64::consts::TAU * g as f64 / n as f64;
    let [b, c, h, w] = x.shape();
    let mut data = Vec::with_capacity(x.data().len());
    for plane in x.data().chunks_exact(h * w) {
        data.extend(rotate_plane(plane, h, theta));
    }
    let rotated = GeometricTensor::new(data, [b, c, h, w], ft).unwrap();
    if ft.kind == FieldKind::Regular {
        rotated.shift_orientations(g)
    } else {
        rotated
    }
}

/// Relative l2 error of `a` against `b` over pixels within `radius` of the
/// centre.
pub fn rel_err_in_disk(a: &GeometricTensor<f64>, b: &GeometricTensor<f64>, radius: f64) -> f64 {
    let [_, _, h, w] = a.shape();
    let c = (h as f64 - 1.0) / 2.0;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, (p, q)) in a.data().iter().zip(b.data()).enumerate() {
        let pix = i % (h * w);
        let (r, col) = ((pix / w) as f64, (pix % w) as f64);
        if (r - c).powi(2) + (col - c).powi(2) <= radius * radius {
            num += (p - q).powi(2);
            den += q * q;
        }
    }
    (num / den).sqrt()
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.as_f64() - q.as_f64()).abs()).fold(0.0, f64::max)
}

/// Two-field C4 toy network on 8x8 inputs covering every layer kind.
pub fn toy_model<T: Scalar>(seed: u64) -> Model<T> {
    let mut r = rng(seed);
    let g = CyclicGroup::new(4).unwrap();
    let input = FieldType::trivial(g, 3);
    let mut lift = FilterBank::zeros(ConvKind::Lift, g, 3, 2, 3).unwrap();
    lift.init_uniform(&mut r);
    let reg = FieldType::regular(g, 2);
    let mut gc = FilterBank::zeros(ConvKind::Group, g, 8, 2, 3).unwrap();
    gc.init_uniform(&mut r);
    let restrict = Layer::restrict(&reg).unwrap();
    let c2 = restrict.output_type(&reg).unwrap();
    let mut gc2 = FilterBank::zeros(ConvKind::Group, c2.group, 8, 4, 3).unwrap();
    gc2.init_uniform(&mut r);
    let mut norm1 = FieldNorm::new(&reg);
    let mut norm2 = FieldNorm::new(&c2);
    for n in [&mut norm1.gain, &mut norm1.bias] {
        n.iter_mut().for_each(|v| *v = T::from_f64_lossy(r.random_range(0.5..1.5)));
    }
    for n in [&mut norm2.gain, &mut norm2.bias] {
        n.iter_mut().for_each(|v| *v = T::from_f64_lossy(r.random_range(0.5..1.5)));
    }
    let mut head = Linear::zeros(4, 3);
    head.init_uniform(&mut r);
    head.bias.iter_mut().for_each(|v| *v = T::from_f64_lossy(r.random_range(-0.5..0.5)));
    let layers = vec![
        Layer::Conv(lift),
        Layer::FieldNorm(norm1),
        Layer::Relu,
        Layer::Residual(vec![Layer::Conv(gc), Layer::Relu]),
        Layer::MaxPool { kernel: 2, stride: 2 },
        restrict,
        Layer::Conv(gc2),
        Layer::FieldNorm(norm2),
        Layer::Relu,
        Layer::GlobalAvgPool,
        Layer::GroupPool { order: 2 },
        Layer::Linear(head),
    ];
    Model::new(layers, input, g, Some(8)).unwrap()
}

/// Central finite differences of the mean loss over every parameter.
pub fn finite_differences<T: Scalar>(model: &Model<T>, x: &GeometricTensor<T>, labels: &[usize], h: f64) -> Vec<f64> {
    let base = model.parameters();
    let mut m = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = T::from_f64_lossy(base[i].as_f64() + h);
        m.set_parameters(&p).unwrap();
        let up = m.loss(x, labels).unwrap().as_f64();
        p[i] = T::from_f64_lossy(base[i].as_f64() - h);
        m.set_parameters(&p).unwrap();
        let down = m.loss(x, labels).unwrap().as_f64();
        // divide by the step actually representable in T
        let span = T::from_f64_lossy(base[i].as_f64() + h).as_f64() - T::from_f64_lossy(base[i].as_f64() - h).as_f64();
        out.push((up - down) / span);
    }
    out
}

// ---- arbitrary-precision accountant oracle ----

const PREC: u32 = 640;

fn fx_one() -> BigInt {
    BigInt::one() << PREC
}

fn fx_mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> PREC
}

fn fx_div(a: &BigInt, b: &BigInt) -> BigInt {
    (a << PREC) / b
}

fn fx_from_ratio(num: &BigInt, den: &BigInt) -> BigInt {
    (num << PREC) / den
}

/// `exp(x)` for `x >= 0` by argument halving, Taylor series and squaring.
fn fx_exp(x: &BigInt) -> BigInt {
    let mut k = 0u32;
    let half = fx_one() >> 1;
    let mut y = x.clone();
    while y > half {
        y >>= 1;
        k += 1;
    }
    let mut term = fx_one();
    let mut sum = fx_one();
    let mut i = 1u32;
    while !term.is_zero() {
        term = fx_mul(&term, &y) / i;
        sum += &term;
        i += 1;
    }
    for _ in 0..k {
        sum = fx_mul(&sum, &sum);
    }
    sum
}

/// `2 atanh(z)` for `0 <= z < 1`.
fn fx_two_atanh(z: &BigInt) -> BigInt {
    let z2 = fx_mul(z, z);
    let mut pow = z.clone();
    let mut sum = BigInt::zero();
    let mut i = 1u32;
    while !pow.is_zero() {
        sum += &pow / i;
        pow = fx_mul(&pow, &z2);
        i += 2;
    }
    sum * 2
}

fn fx_ln(x: &BigInt) -> BigInt {
    assert!(x.is_positive());
    let bits = x.bits() as i64 - 1 - PREC as i64;
    let y = if bits >= 0 { x >> bits as u32 } else { x << (-bits) as u32 };
    let one = fx_one();
    let ln_y = fx_two_atanh(&fx_div(&(&y - &one), &(&y + &one)));
    let ln2 = fx_two_atanh(&fx_from_ratio(&BigInt::from(1), &BigInt::from(3)));
    ln_y + ln2 * bits
}

fn fx_to_f64(x: &BigInt) -> f64 {
    let shift = PREC - 60;
    (x >> shift).to_f64().unwrap() / 2f64.powi(60)
}

/// RDP of the sampled Gaussian mechanism at integer order `alpha` with
/// `q = q_num / q_den` and `sigma^2 = s2_num / s2_den`, evaluated exactly up
/// to 640-bit fixed point.
pub fn rdp_oracle(q_num: u64, q_den: u64, s2_num: u64, s2_den: u64, alpha: u64) -> f64 {
    let (qn, qd) = (BigInt::from(q_num), BigInt::from(q_den));
    let one_minus = &qd - &qn;
    let mut sum = BigInt::zero();
    let mut binom = BigInt::one();
    let den = qd.pow(alpha as u32);
    for j in 0..=alpha {
        if j > 0 {
            binom = binom * (alpha - j + 1) / j;
        }
        let weight = &binom * one_minus.pow((alpha - j) as u32) * qn.pow(j as u32);
        let w = fx_from_ratio(&weight, &den);
        let expo = fx_from_ratio(&BigInt::from(j * (j.saturating_sub(1)) * s2_den), &BigInt::from(2 * s2_num));
        sum += fx_mul(&w, &fx_exp(&expo));
    }
    fx_to_f64(&fx_ln(&sum)) / (alpha as f64 - 1.0)
}

#[test]
fn oracle_self_check() {
    // q = 1 collapses to alpha / (2 sigma^2)
    assert!((rdp_oracle(1, 1, 1, 1, 6) - 3.0).abs() < 1e-14);
    assert!((fx_to_f64(&fx_ln(&(fx_one() * 10))) - 10f64.ln()).abs() < 1e-15);
    assert!((fx_to_f64(&fx_exp(&(fx_one() * 3))) - 3f64.exp()).abs() < 1e-12);
}
