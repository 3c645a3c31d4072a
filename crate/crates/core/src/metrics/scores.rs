use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::layers::Model;
use crate::scalar::Scalar;
use crate::tensor::{GeometricTensor, Matrix};

/// Default ℓ⁰ threshold for gradient sparsity.
pub const SPARSITY_THRESHOLD: f64 = 1e-5;

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Infinite (serialized as `null`) for runs without noise.
    #[serde(with = "extended_float")]
    pub epsilon_spent: f64,
    pub grad_sparsity: f64,
    pub clip_fraction: f64,
    pub brier: Option<f64>,
}

mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
/// An empty batch scores 0.
pub fn accuracy<T: PartialOrd + Copy>(logits: &Matrix<T>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().enumerate().filter(|&(r, &l)| argmax(logits.row(r)) == l).count();
    hits as f64 / labels.len() as f64
}

/// Mean squared distance between probability rows and one-hot labels.
pub fn brier(probs: &Matrix<f64>, labels: &[usize]) -> Result<f64> {
    if probs.rows != labels.len() {
        return Err(mismatch(format!("{} rows for {} labels", probs.rows, labels.len())));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row(r);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-5 || row.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation(format!("row {r} sums to {s}, not 1")));
        }
        if label >= probs.cols {
            return Err(Error::Validation(format!("label {label} out of range")));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(c, &p)| {
                let y = if c == label { 1.0 } else { 0.0 };
                (p - y) * (p - y)
            })
            .sum::<f64>();
    }
    Ok(if labels.is_empty() { 0.0 } else { total / labels.len() as f64 })
}

/// Fraction of coordinates with `|g| <= eps`; an empty vector counts as
/// fully sparse.
pub fn l0_sparsity<T: Scalar>(g: &[T], eps: f64) -> f64 {
    if g.is_empty() {
        return 1.0;
    }
    g.iter().filter(|v| v.as_f64().abs() <= eps).count() as f64 / g.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub brier: f64,
    pub samples: usize,
}

/// Loss, accuracy and Brier score of `model` on a labelled batch.
pub fn evaluate<T: Scalar>(model: &Model<T>, x: &GeometricTensor<T>, labels: &[usize]) -> Result<EvalResult> {
    let logits = model.forward(x)?;
    let probs = logits.softmax();
    let loss = (0..labels.len()).map(|r| -probs.row(r)[labels[r]].max(f64::MIN_POSITIVE).ln()).sum::<f64>()
        / labels.len().max(1) as f64;
    Ok(EvalResult { loss, accuracy: accuracy(&logits, labels), brier: brier(&probs, labels)?, samples: labels.len() })
}
