//! Synthetic oriented-pattern dataset: bars, corners, crosses and tees at
//! uniformly random rotations. Class membership does not depend on the
//! rotation angle.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{write_dataset, Dataset, Split, IMAGE_LEN, IMAGE_SIZE};
use crate::error::{invalid, Result};

pub const SYNTH_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthReport {
    pub name: String,
    pub classes: usize,
    pub counts: BTreeMap<String, usize>,
}

type Segment = ((f64, f64), (f64, f64));

/// Segments of class `class` with arm length `a`, centred near the origin.
fn segments(class: usize, a: f64) -> Vec<Segment> {
    let h = a / 2.0;
    match class {
        0 => vec![((-a, 0.0), (a, 0.0))],
        1 => vec![((-h, -h), (a - h, -h)), ((-h, -h), (-h, a - h))],
        2 => vec![((-a, 0.0), (a, 0.0)), ((0.0, -a), (0.0, a))],
        _ => vec![((-a, -h), (a, -h)), ((0.0, -h), (0.0, a - h))],
    }
}

fn dist_to_segment(p: (f64, f64), s: &Segment) -> f64 {
    let ((x0, y0), (x1, y1)) = *s;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let t = (((p.0 - x0) * dx + (p.1 - y0) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (qx, qy) = (x0 + t * dx - p.0, y0 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Render one channel-last image of `class` rotated by `angle` radians.
pub fn render_pattern<R: Rng + ?Sized>(class: usize, angle: f64, rng: &mut R) -> Vec<u8> {
    let a = rng.random_range(6.0..10.0);
    let half_width = rng.random_range(0.8..1.5);
    let (cx, cy) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
    let background = rng.random_range(0.0..0.2);
    let noise = Normal::new(0.0, 0.08).expect("std");
    let (s, c) = angle.sin_cos();
    let segs: Vec<Segment> = segments(class, a)
        .into_iter()
        .map(|((x0, y0), (x1, y1))| {
            let rot = |x: f64, y: f64| (c * x - s * y + cx, s * x + c * y + cy);
            (rot(x0, y0), rot(x1, y1))
        })
        .collect();
    let ctr = (IMAGE_SIZE as f64 - 1.0) / 2.0;
    let mut img = vec![0u8; IMAGE_LEN];
    for r in 0..IMAGE_SIZE {
        for q in 0..IMAGE_SIZE {
            let p = (q as f64 - ctr, ctr - r as f64);
            let d = segs.iter().map(|s| dist_to_segment(p, s)).fold(f64::INFINITY, f64::min);
            let ink = (half_width + 0.5 - d).clamp(0.0, 1.0);
            for (ch, &t) in tint.iter().enumerate() {
                let v = background + ink * (t - background) + noise.sample(rng);
                img[(r * IMAGE_SIZE + q) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    img
}

fn make_split(split: Split, per_class: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut labels: Vec<usize> = (0..per_class * SYNTH_CLASSES).map(|i| i % SYNTH_CLASSES).collect();
    labels.shuffle(rng);
    let mut images = Vec::with_capacity(labels.len() * IMAGE_LEN);
    for &l in &labels {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        images.extend(render_pattern(l, angle, rng));
    }
    Dataset::new(images, labels, split, SYNTH_CLASSES, "synthetic")
}

/// Write train (`per_class` per class), val and test (`max(1, per_class/2)`
/// per class) splits to `dir`. Output is a pure function of `seed`.
pub fn generate_synthetic(dir: &Path, per_class: usize, seed: u64) -> Result<SynthReport> {
    if per_class == 0 {
        return Err(invalid("need at least one sample per class"));
    }
    let mut counts = BTreeMap::new();
    for (i, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let n = if split == Split::Train { per_class } else { (per_class / 2).max(1) };
        let d = make_split(split, n, &mut rng)?;
        write_dataset(dir, &d)?;
        counts.insert(split.to_string(), d.len());
    }
    Ok(SynthReport { name: "synthetic".into(), classes: SYNTH_CLASSES, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_dataset;

    #[test]
    fn counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let rep = generate_synthetic(a.path(), 10, 7).unwrap();
        assert_eq!(rep.counts["train"], 40);
        assert_eq!(rep.counts["val"], 20);
        generate_synthetic(b.path(), 10, 7).unwrap();
        for f in ["train_images.npy", "train_labels.npy", "test_images.npy", "meta.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let d = load_dataset(a.path(), Split::Train, None).unwrap();
        assert_eq!(d.classes, 4);
        assert_eq!((0..4).map(|c| d.labels.iter().filter(|&&l| l == c).count()).collect::<Vec<_>>(), vec![10; 4]);
    }

    #[test]
    fn patterns_have_ink() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for class in 0..SYNTH_CLASSES {
            let img = render_pattern(class, 0.3, &mut rng);
            assert!(img.iter().filter(|&&v| v > 110).count() > 30);
        }
    }
}
