use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    Gradcam,
    GuidedBackprop,
}

/// A saliency map normalized to `[0, 1]` (all zeros when the raw map is).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub source: HeatmapSource,
    pub raw_min: f64,
    pub raw_max: f64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    source: HeatmapSource,
    height: usize,
    width: usize,
    raw_min: f64,
    raw_max: f64,
    image: &'a str,
}

impl Heatmap {
    /// Max-normalize a nonnegative raw map.
    pub fn from_raw(height: usize, width: usize, raw: Vec<f64>, source: HeatmapSource) -> Result<Self> {
        if raw.len() != height * width {
            return Err(invalid("heatmap size does not match its dimensions"));
        }
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if raw_max > 0.0 { raw.iter().map(|v| v / raw_max).collect() } else { vec![0.0; raw.len()] };
        Ok(Self { height, width, values, source, raw_min, raw_max })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    /// Quarter-turn counter-clockwise rotation (square maps only).
    pub fn rot90(&self, k: usize) -> Heatmap {
        let n = self.width;
        let mut v = self.values.clone();
        for _ in 0..k % 4 {
            let prev = v.clone();
            for r in 0..n {
                for c in 0..n {
                    v[r * n + c] = prev[c * n + n - 1 - r];
                }
            }
        }
        Heatmap { values: v, ..self.clone() }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    /// Write `<stem>.pgm` and the `<stem>.json` sidecar; returns both paths.
    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        if let Some(parent) = stem.parent() {
            fs::create_dir_all(parent)?;
        }
        let pgm = stem.with_extension("pgm");
        let json = stem.with_extension("json");
        fs::write(&pgm, self.to_pgm())?;
        let name = pgm.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let side = Sidecar {
            source: self.source,
            height: self.height,
            width: self.width,
            raw_min: self.raw_min,
            raw_max: self.raw_max,
            image: &name,
        };
        fs::write(&json, serde_json::to_string_pretty(&side)?)?;
        Ok((pgm, json))
    }
}
