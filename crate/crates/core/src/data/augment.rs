use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{IMAGE_LEN, IMAGE_SIZE};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub enabled: bool,
    /// Replicas per sample (`K`).
    pub multiplicity: usize,
    /// Random horizontal flip with probability 1/2.
    pub flip: bool,
    /// Random crop after zero padding by this many pixels (0 disables).
    pub crop_padding: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self { enabled: true, multiplicity: 4, flip: true, crop_padding: 4 }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self { enabled: false, multiplicity: 1, flip: false, crop_padding: 0 }
    }

    pub fn replicas(&self) -> usize {
        if self.enabled {
            self.multiplicity
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multiplicity == 0 {
            return Err(invalid("augmentation multiplicity must be at least 1"));
        }
        if self.crop_padding >= IMAGE_SIZE {
            return Err(invalid("crop padding must be smaller than the image"));
        }
        Ok(())
    }
}

/// Mirror a channel-last 28 x 28 x 3 image left-right.
pub fn flip_horizontal(img: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; IMAGE_LEN];
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            let (src, dst) = ((r * IMAGE_SIZE + c) * 3, (r * IMAGE_SIZE + IMAGE_SIZE - 1 - c) * 3);
            out[dst..dst + 3].copy_from_slice(&img[src..src + 3]);
        }
    }
    out
}

/// Crop window at offset `(dy, dx)` of the image zero-padded by `pad`.
pub fn crop_shift(img: &[u8], pad: usize, dy: usize, dx: usize) -> Vec<u8> {
    let mut out = vec![0u8; IMAGE_LEN];
    for r in 0..IMAGE_SIZE {
        let sr = (r + dy) as isize - pad as isize;
        if !(0..IMAGE_SIZE as isize).contains(&sr) {
            continue;
        }
        for c in 0..IMAGE_SIZE {
            let sc = (c + dx) as isize - pad as isize;
            if !(0..IMAGE_SIZE as isize).contains(&sc) {
                continue;
            }
            let src = (sr as usize * IMAGE_SIZE + sc as usize) * 3;
            let dst = (r * IMAGE_SIZE + c) * 3;
            out[dst..dst + 3].copy_from_slice(&img[src..src + 3]);
        }
    }
    out
}

/// `K` augmented replicas of a channel-last batch; `out[k]` is replica `k`
/// of every sample. Each output image depends only on its own source image.
pub fn augment_batch<R: Rng + ?Sized>(images: &[u8], policy: &AugmentationPolicy, rng: &mut R) -> Result<Vec<Vec<u8>>> {
    policy.validate()?;
    if images.len() % IMAGE_LEN != 0 {
        return Err(invalid("batch is not a whole number of images"));
    }
    let k = policy.replicas();
    let mut out = vec![Vec::with_capacity(images.len()); k];
    for img in images.chunks_exact(IMAGE_LEN) {
        for replica in out.iter_mut() {
            if !policy.enabled {
                replica.extend_from_slice(img);
                continue;
            }
            let mut x = if policy.flip && rng.random::<bool>() { flip_horizontal(img) } else { img.to_vec() };
            if policy.crop_padding > 0 {
                let span = 2 * policy.crop_padding + 1;
                let (dy, dx) = (rng.random_range(0..span), rng.random_range(0..span));
                x = crop_shift(&x, policy.crop_padding, dy, dx);
            }
            replica.extend_from_slice(&x);
        }
    }
    Ok(out)
}
