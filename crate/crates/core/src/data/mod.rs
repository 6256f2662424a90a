//! Class-incremental task streams.
//!
//! A [`TaskStream`] partitions a labeled image collection into tasks of
//! `classes_per_task` classes and yields each training sample exactly once,
//! in seed-deterministic order, as [`LabeledBatch`]es.

mod augment;
pub mod cifar;
pub mod synthetic;

pub use augment::{augment, AugmentationPolicy};

use std::collections::BTreeSet;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const CLASS_ORDER_STREAM: u64 = 0x4f52_4445;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetId {
    Cifar10,
    Cifar100,
    Synthetic,
}

impl DatasetId {
    /// Class count for the fixed benchmarks; synthetic is configurable.
    pub fn fixed_class_count(self) -> Option<u32> {
        match self {
            DatasetId::Cifar10 => Some(10),
            DatasetId::Cifar100 => Some(100),
            DatasetId::Synthetic => None,
        }
    }
}

impl std::fmt::Display for DatasetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetId::Cifar10 => "cifar10",
            DatasetId::Cifar100 => "cifar100",
            DatasetId::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const CIFAR: ImageShape = ImageShape {
        channels: 3,
        height: 32,
        width: 32,
    };

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// A flat in-memory labeled image collection, pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: ImageShape,
    pub num_classes: u32,
    images: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(shape: ImageShape, num_classes: u32, images: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if images.len() != labels.len() * shape.numel() {
            return Err(Error::Shape(format!(
                "{} pixels for {} images of {:?}",
                images.len(),
                labels.len(),
                shape
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self {
            shape,
            num_classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.images[index * n..(index + 1) * n]
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch(&self, indices: &[usize]) -> LabeledBatch {
        let mut images = Vec::with_capacity(indices.len() * self.shape.numel());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        LabeledBatch {
            shape: self.shape,
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// All samples whose label is in `classes`, in dataset order.
    pub fn select_classes(&self, classes: &[u32]) -> LabeledBatch {
        let wanted: BTreeSet<u32> = classes.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len()).filter(|&i| wanted.contains(&self.labels[i])).collect();
        self.batch(&idx)
    }
}

/// Train and held-out splits of one benchmark.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub id: DatasetId,
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub shape: ImageShape,
    /// Row-major `[n, channels, height, width]`.
    pub images: Vec<f32>,
    pub labels: Vec<u32>,
    /// Source dataset index per sample; empty when the batch has no provenance.
    pub indices: Vec<usize>,
}

impl LabeledBatch {
    pub fn empty(shape: ImageShape) -> Self {
        Self {
            shape,
            images: Vec::new(),
            labels: Vec::new(),
            indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn images_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let s = self.shape;
        Ok(Tensor::from_slice(&self.images, (self.len(), s.channels, s.height, s.width), device)?.to_dtype(dtype)?)
    }

    /// Appends `other`'s samples after this batch's.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if !other.is_empty() && !self.is_empty() && self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let mut out = self.clone();
        out.images.extend_from_slice(&other.images);
        out.labels.extend_from_slice(&other.labels);
        if self.indices.len() == self.len() && other.indices.len() == other.len() {
            out.indices.extend_from_slice(&other.indices);
        } else {
            out.indices.clear();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    #[default]
    Natural,
    Seeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub dataset: DatasetId,
    pub classes_per_task: usize,
    pub batch_size: usize,
    pub augment: AugmentationPolicy,
    pub seed: u64,
    /// Permutation of `0..num_classes`; task `t` owns `class_order[t*S..(t+1)*S]`.
    pub class_order: Vec<u32>,
}

impl StreamConfig {
    pub fn new(
        dataset: DatasetId,
        num_classes: u32,
        classes_per_task: usize,
        batch_size: usize,
        augment: AugmentationPolicy,
        seed: u64,
        order: ClassOrder,
    ) -> Self {
        let mut class_order: Vec<u32> = (0..num_classes).collect();
        if order == ClassOrder::Seeded {
            class_order.shuffle(&mut StreamRng::derived(seed, CLASS_ORDER_STREAM));
        }
        Self {
            dataset,
            classes_per_task,
            batch_size,
            augment,
            seed,
            class_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.class_order.len();
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.classes_per_task == 0 || k % self.classes_per_task != 0 {
            return Err(Error::Config(format!(
                "classes_per_task {} does not divide the class count {k}",
                self.classes_per_task
            )));
        }
        if let Some(expected) = self.dataset.fixed_class_count() {
            if k as u32 != expected {
                return Err(Error::Config(format!("{} has {expected} classes, class_order has {k}", self.dataset)));
            }
        }
        let mut sorted = self.class_order.clone();
        sorted.sort_unstable();
        if sorted.iter().enumerate().any(|(i, &c)| c as usize != i) {
            return Err(Error::Config("class_order is not a permutation".into()));
        }
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.class_order.len() / self.classes_per_task
    }

    pub fn task_classes(&self, task: usize) -> &[u32] {
        let s = self.classes_per_task;
        &self.class_order[task * s..(task + 1) * s]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPlan {
    pub classes: Vec<u32>,
    /// Shuffled training indices, consumed front to back.
    pub order: Vec<usize>,
}

/// Single-pass stream over a borrowed training set.
#[derive(Debug, Clone)]
pub struct TaskStream<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    tasks: Vec<TaskPlan>,
}

/// Position of a batch within a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepPosition {
    pub step: usize,
    pub task: usize,
    pub last_in_task: bool,
}

pub fn build_stream<'a>(config: &StreamConfig, dataset: &'a Dataset) -> Result<TaskStream<'a>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if config.class_order.len() as u32 != dataset.num_classes {
        return Err(Error::Config(format!(
            "class_order covers {} classes but dataset has {}",
            config.class_order.len(),
            dataset.num_classes
        )));
    }
    let present: BTreeSet<u32> = dataset.labels().iter().copied().collect();
    if present.len() as u32 != dataset.num_classes {
        return Err(Error::Data(format!(
            "dataset labels cover {} of {} classes",
            present.len(),
            dataset.num_classes
        )));
    }

    let tasks = (0..config.num_tasks())
        .map(|t| {
            let classes = config.task_classes(t).to_vec();
            let wanted: BTreeSet<u32> = classes.iter().copied().collect();
            let mut order: Vec<usize> = (0..dataset.len()).filter(|&i| wanted.contains(&dataset.labels()[i])).collect();
            order.shuffle(&mut StreamRng::derived(config.seed, SHUFFLE_STREAM + t as u64));
            TaskPlan { classes, order }
        })
        .collect();
    Ok(TaskStream {
        dataset,
        batch_size: config.batch_size,
        tasks,
    })
}

impl<'a> TaskStream<'a> {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, t: usize) -> &TaskPlan {
        &self.tasks[t]
    }

    pub fn tasks(&self) -> &[TaskPlan] {
        &self.tasks
    }

    pub fn batches_in_task(&self, t: usize) -> usize {
        self.tasks[t].order.len().div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        (0..self.num_tasks()).map(|t| self.batches_in_task(t)).sum()
    }

    /// Step index (1-based count of batches consumed) at the end of each task.
    pub fn task_boundaries(&self) -> Vec<usize> {
        let mut acc = 0;
        (0..self.num_tasks())
            .map(|t| {
                acc += self.batches_in_task(t);
                acc
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StepPosition, LabeledBatch)> + '_ {
        let mut step = 0;
        self.tasks.iter().enumerate().flat_map(move |(t, plan)| {
            let n = plan.order.len().div_ceil(self.batch_size);
            plan.order.chunks(self.batch_size).enumerate().map(move |(b, chunk)| {
                let pos = StepPosition {
                    step: 0,
                    task: t,
                    last_in_task: b + 1 == n,
                };
                (pos, self.dataset.batch(chunk))
            })
        })
        .map(move |(mut pos, batch)| {
            pos.step = step;
            step += 1;
            (pos, batch)
        })
    }
}
