//! Sampled-Gaussian-mechanism RDP bounds and conversion to (ε, δ).
//!
//! For `q < 1` the bound is the binomial expansion, which is only valid at
//! integer orders; a fractional order is charged the value of the next
//! integer order. RDP is nondecreasing in the order, so this is an upper
//! bound.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Search bracket for [`calibrate_sigma`].
pub const SIGMA_BRACKET: (f64, f64) = (0.3, 20.0);
const CALIBRATION_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    /// Curve of `t`-fold composition.
    pub fn compose(&self, t: usize) -> RdpCurve {
        RdpCurve { orders: self.orders.clone(), values: self.values.iter().map(|v| v * t as f64).collect() }
    }

    /// Pointwise sum of two curves on the same grid.
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(invalid("RDP curves on different order grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(RdpCurve { orders: self.orders.clone(), values })
    }
}

/// 1.25, 1.5, 1.75, 2, 2.5, ..., 10, 11, ..., 32, 40, 48, 56, 64.
pub fn default_orders() -> Vec<f64> {
    let mut o = vec![1.25, 1.5, 1.75];
    o.extend((4..=20).map(|i| i as f64 * 0.5));
    o.extend((11..=32).map(f64::from));
    o.extend([40.0, 48.0, 56.0, 64.0]);
    o
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln sum_j C(a,j) (1-q)^(a-j) q^j exp(j(j-1) / (2 sigma^2))`.
fn log_binomial_sum(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut log_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for j in 0..=alpha {
        if j > 0 {
            log_binom += ((alpha - j + 1) as f64).ln() - (j as f64).ln();
        }
        let jf = j as f64;
        let t = log_binom + (alpha - j) as f64 * l1q + jf * lq + jf * (jf - 1.0) * inv;
        acc = log_add(acc, t);
    }
    acc
}

fn rdp_at(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let a = alpha.ceil() as u64;
    (log_binomial_sum(q, sigma, a) / (a as f64 - 1.0)).max(0.0)
}

pub fn rdp_sgm(q: f64, sigma: f64, orders: &[f64]) -> Result<RdpCurve> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("sampling rate {q} outside [0, 1]")));
    }
    if sigma == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("noise multiplier {sigma} must be positive")));
    }
    if let Some(bad) = orders.iter().find(|&&a| !(a > 1.0) || !a.is_finite()) {
        return Err(invalid(format!("order {bad} must exceed 1")));
    }
    let values = orders.iter().map(|&a| rdp_at(q, sigma, a)).collect();
    Ok(RdpCurve { orders: orders.to_vec(), values })
}

/// `min_a [T * rdp(a) + ln(1/delta) / (a - 1)]` and its minimizing order.
pub fn rdp_to_epsilon(curve: &RdpCurve, steps: usize, delta: f64) -> Result<(f64, f64)> {
    if curve.orders.is_empty() || curve.orders.len() != curve.values.len() {
        return Err(invalid("empty RDP order grid"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta {delta} outside (0, 1)")));
    }
    if steps == 0 {
        return Err(invalid("steps must be positive"));
    }
    let log_inv_delta = -delta.ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&a, &v) in curve.orders.iter().zip(&curve.values) {
        let eps = steps as f64 * v + log_inv_delta / (a - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok(best)
}

/// ε after `steps` steps on the default order grid.
pub fn epsilon_for(q: f64, sigma: f64, steps: usize, delta: f64) -> Result<(f64, f64)> {
    rdp_to_epsilon(&rdp_sgm(q, sigma, &default_orders())?, steps, delta)
}

/// Smallest σ in [`SIGMA_BRACKET`] (to bisection precision) whose ε does
/// not exceed `target`.
pub fn calibrate_sigma(target: f64, delta: f64, q: f64, steps: usize) -> Result<f64> {
    if !(target > 0.0) {
        return Err(invalid("target epsilon must be positive"));
    }
    let (mut lo, mut hi) = SIGMA_BRACKET;
    let eps = |s: f64| epsilon_for(q, s, steps, delta).map(|e| e.0);
    if eps(hi)? > target {
        return Err(Error::CalibrationFailure { target, lo, hi });
    }
    if eps(lo)? <= target {
        return Ok(lo);
    }
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
