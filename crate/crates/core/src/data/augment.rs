use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LabeledBatch;

/// Pad-and-crop followed by a horizontal flip, applied per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub crop_padding: usize,
    pub flip_probability: f64,
    pub enabled: bool,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            crop_padding: 4,
            flip_probability: 0.5,
            enabled: true,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

pub fn augment<R: Rng + ?Sized>(batch: &LabeledBatch, policy: &AugmentationPolicy, rng: &mut R) -> LabeledBatch {
    if !policy.enabled {
        return batch.clone();
    }
    let s = batch.shape;
    let (h, w) = (s.height, s.width);
    let pad = policy.crop_padding;
    let mut out = batch.clone();
    for i in 0..batch.len() {
        let src = batch.image(i);
        // Offsets into the zero-padded canvas; (pad, pad) is the identity crop.
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let flip = rng.random_bool(policy.flip_probability.clamp(0.0, 1.0));
        let dst = &mut out.images[i * s.numel()..(i + 1) * s.numel()];
        for c in 0..s.channels {
            for y in 0..h {
                for x in 0..w {
                    let sx = if flip { w - 1 - x } else { x } as isize + dx;
                    let sy = y as isize + dy;
                    let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        0.0
                    } else {
                        src[(c * h + sy as usize) * w + sx as usize]
                    };
                    dst[(c * h + y) * w + x] = v;
                }
            }
        }
    }
    out
}
