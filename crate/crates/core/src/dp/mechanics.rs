use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layers::PerSampleGrads;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub sampling_rate: f64,
    pub steps: usize,
    pub delta: f64,
    pub target_epsilon: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(invalid("clip norm must be positive"));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(invalid("noise multiplier must be nonnegative"));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(invalid("sampling rate must lie in (0, 1]"));
        }
        if self.steps == 0 {
            return Err(invalid("steps must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.target_epsilon > 0.0) {
            return Err(invalid("target epsilon must be positive"));
        }
        Ok(())
    }

    /// Standard deviation of the noise added to the clipped sum.
    pub fn noise_std(&self) -> f64 {
        self.noise_multiplier * self.clip_norm
    }
}

/// Include each of `0..n` independently with probability `q`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("sampling rate {q} outside [0, 1]")));
    }
    if q == 1.0 {
        return Ok((0..n).collect());
    }
    Ok((0..n).filter(|_| rng.random::<f64>() < q).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipOutput<T> {
    /// Sum of the clipped rows.
    pub sum: Vec<T>,
    pub clip_fraction: f64,
    /// Pre-clip l2 norm of each row.
    pub norms: Vec<f64>,
    /// Factor `min(1, C / norm)` applied to each row.
    pub scales: Vec<f64>,
}

/// Scale each row to l2 norm at most `c` and sum the rows.
///
/// The sum is a pairwise tree over rows whose shape depends only on the
/// batch size, so the result does not depend on the thread count.
pub fn clip_per_sample<T: Scalar>(grads: &PerSampleGrads<T>, c: f64) -> Result<ClipOutput<T>> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid(format!("clip norm must be positive, got {c}")));
    }
    let norms: Vec<f64> = (0..grads.batch)
        .into_par_iter()
        .map(|b| grads.row(b).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
        .collect();
    if let Some(sample) = norms.iter().position(|n| !n.is_finite()) {
        return Err(Error::SampleNumericFault { sample });
    }
    let scales: Vec<f64> = norms.iter().map(|&n| if n > c { c / n } else { 1.0 }).collect();
    let clipped = norms.iter().filter(|&&n| n > c).count();
    let sum = pairwise_sum(grads, &scales, 0, grads.batch);
    Ok(ClipOutput {
        sum,
        clip_fraction: if grads.batch == 0 { 0.0 } else { clipped as f64 / grads.batch as f64 },
        norms,
        scales,
    })
}

fn pairwise_sum<T: Scalar>(grads: &PerSampleGrads<T>, scales: &[f64], lo: usize, hi: usize) -> Vec<T> {
    match hi - lo {
        0 => vec![T::zero(); grads.params],
        1 => {
            let s = T::from_f64_lossy(scales[lo]);
            grads.row(lo).iter().map(|&v| v * s).collect()
        }
        n => {
            let mid = lo + n / 2;
            let (mut a, b) = rayon::join(
                || pairwise_sum(grads, scales, lo, mid),
                || pairwise_sum(grads, scales, mid, hi),
            );
            a.iter_mut().zip(&b).for_each(|(x, &y)| *x = *x + y);
            a
        }
    }
}

/// `(summed + z) / lot` with `z ~ N(0, (sigma * c)^2)` per coordinate.
pub fn noisy_update<T: Scalar, R: Rng + ?Sized>(
    summed: &[T],
    sigma: f64,
    c: f64,
    lot: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(lot >= 1.0) {
        return Err(invalid(format!("lot size must be at least 1, got {lot}")));
    }
    if !(sigma >= 0.0) || !(c > 0.0) {
        return Err(invalid("noise multiplier must be nonnegative and clip norm positive"));
    }
    let std = sigma * c;
    Ok(summed
        .iter()
        .map(|&s| {
            let z = if std > 0.0 { std * Distribution::<f64>::sample(&StandardNormal, rng) } else { 0.0f64 };
            T::from_f64_lossy((s.as_f64() + z) / lot)
        })
        .collect())
}
