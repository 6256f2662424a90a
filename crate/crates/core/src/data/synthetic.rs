//! Seeded Gaussian-cluster image sets for desk-scale experiments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetId, DatasetSplits, ImageShape};
use crate::rng::StreamRng;
use crate::Result;

const MEANS_STREAM: u64 = 0x4d45_414e;
const TRAIN_STREAM: u64 = 0x5452_4149;
const TEST_STREAM: u64 = 0x5445_5354;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: u32,
    pub shape: ImageShape,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of class means around mid-grey.
    pub spread: f64,
    /// Within-class standard deviation.
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            shape: ImageShape {
                channels: 1,
                height: 4,
                width: 8,
            },
            train_per_class: 200,
            test_per_class: 100,
            spread: 0.15,
            noise: 0.15,
        }
    }
}

impl SyntheticSpec {
    /// Per-class mean vectors, each pixel clamped into `[0, 1]`.
    pub fn class_means(&self, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = StreamRng::derived(seed, MEANS_STREAM);
        (0..self.num_classes)
            .map(|_| {
                (0..self.shape.numel())
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        (0.5 + self.spread * g).clamp(0.0, 1.0) as f32
                    })
                    .collect()
            })
            .collect()
    }

    fn draw(&self, means: &[Vec<f32>], per_class: usize, rng: &mut StreamRng) -> Result<Dataset> {
        let mut images = Vec::with_capacity(means.len() * per_class * self.shape.numel());
        let mut labels = Vec::with_capacity(means.len() * per_class);
        for (y, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                labels.push(y as u32);
                images.extend(mean.iter().map(|&m| {
                    let g: f64 = rng.sample(StandardNormal);
                    (m as f64 + self.noise * g).clamp(0.0, 1.0) as f32
                }));
            }
        }
        Dataset::new(self.shape, self.num_classes, images, labels)
    }

    pub fn generate(&self, seed: u64) -> Result<DatasetSplits> {
        let means = self.class_means(seed);
        Ok(DatasetSplits {
            id: DatasetId::Synthetic,
            train: self.draw(&means, self.train_per_class, &mut StreamRng::derived(seed, TRAIN_STREAM))?,
            test: self.draw(&means, self.test_per_class, &mut StreamRng::derived(seed, TEST_STREAM))?,
        })
    }
}
