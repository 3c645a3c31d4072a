use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentationPolicy;
use crate::error::{invalid, Result};
use crate::layers::{GroupSpec, ModelSpec, WidthMode};

/// Noise multiplier: an explicit value or calibration to the target budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSetting {
    Value(f64),
    #[serde(with = "calibrate_tag")]
    Calibrate,
}

mod calibrate_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("calibrate")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        match String::deserialize(d)?.as_str() {
            "calibrate" => Ok(()),
            other => Err(D::Error::custom(format!("expected a number or \"calibrate\", got \"{other}\""))),
        }
    }
}

impl std::str::FromStr for SigmaSetting {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "calibrate" {
            return Ok(SigmaSetting::Calibrate);
        }
        s.parse::<f64>()
            .map(SigmaSetting::Value)
            .map_err(|_| invalid(format!("sigma must be a number or 'calibrate', got '{s}'")))
    }
}

/// One training run. Field names are the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    /// Display name; defaults to the dataset's `meta.json` name.
    pub dataset_name: Option<String>,
    pub group: GroupSpec,
    pub widths: Vec<usize>,
    pub width_mode: WidthMode,
    pub restrict: bool,
    /// Expected class count, cross-checked against the dataset.
    pub classes: Option<usize>,
    pub epochs: usize,
    /// Expected lot size `L`; the sampling rate is `L / n_train`.
    pub lot_size: f64,
    /// Use only the first `n` training samples.
    pub train_subset: Option<usize>,
    /// Evaluate on only the first `n` validation samples.
    pub val_subset: Option<usize>,
    pub clip_norm: f64,
    pub target_epsilon: f64,
    pub delta: f64,
    pub sigma: SigmaSetting,
    /// Defaults to 0.1 without DP and `1 / clip_norm` with DP.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub augmentation: AugmentationPolicy,
    pub seed: u64,
    pub output: PathBuf,
    pub dp: bool,
    /// Worker threads for per-sample gradients (`None`: all cores).
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/synth"),
            dataset_name: None,
            group: GroupSpec::Cyclic(4),
            widths: vec![8, 16, 32],
            width_mode: WidthMode::default(),
            restrict: true,
            classes: None,
            epochs: 10,
            lot_size: 256.0,
            train_subset: None,
            val_subset: None,
            clip_norm: 1.0,
            target_epsilon: 7.42,
            delta: 1e-5,
            sigma: SigmaSetting::Calibrate,
            learning_rate: None,
            momentum: 0.9,
            augmentation: AugmentationPolicy::default(),
            seed: 0,
            output: PathBuf::from("runs/default"),
            dp: true,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(crate::error::Error::NotFound(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be positive"));
        }
        if !(self.lot_size >= 1.0) {
            return Err(invalid("lot size must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid("clip norm must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta must lie in (0, 1)"));
        }
        if !(self.target_epsilon > 0.0) {
            return Err(invalid("target epsilon must be positive"));
        }
        if let SigmaSetting::Value(s) = self.sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(invalid("sigma must be a nonnegative number"));
            }
            if self.dp && s == 0.0 {
                return Err(crate::error::Error::InfinitePrivacyLoss);
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(invalid("learning rate must be positive"));
            }
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be positive"));
        }
        self.augmentation.validate()?;
        Ok(())
    }

    pub fn model_spec(&self, classes: usize) -> ModelSpec {
        ModelSpec {
            group: self.group,
            widths: self.widths.clone(),
            classes,
            width_mode: self.width_mode,
            restrict: self.restrict,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(if self.dp { 1.0 / self.clip_norm } else { 0.1 })
    }
}
