//! Evaluation and interpretability metrics.

mod heatmap;
mod saliency;
mod scores;

pub use heatmap::{Heatmap, HeatmapSource};
pub use saliency::{fir_probe, grad_cam, guided_backprop, FirEntry};
pub use scores::{accuracy, brier, evaluate, l0_sparsity, EvalResult, MetricsRecord, SPARSITY_THRESHOLD};
