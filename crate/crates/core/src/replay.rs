//! Fixed-capacity rehearsal memory.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageShape, LabeledBatch};
use crate::rng::{RngState, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionPolicy {
    #[default]
    Reservoir,
    /// Evict from the currently largest class; drop samples of already-largest classes.
    ClassBalanced,
}

/// How the `M` buffer parameter maps to a slot count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferUnits {
    #[default]
    PerClass,
    Total,
}

impl BufferUnits {
    pub fn capacity(self, m: usize, num_classes: u32) -> usize {
        match self {
            BufferUnits::PerClass => m * num_classes as usize,
            BufferUnits::Total => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    image: Vec<f32>,
    label: u32,
    /// Position of the sample in the observation sequence.
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: InsertionPolicy,
    shape: Option<ImageShape>,
    slots: Vec<Slot>,
    observed_count: u64,
    rng: StreamRng,
}

/// Serialized buffer contents for run checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSnapshot {
    pub capacity: usize,
    pub policy: InsertionPolicy,
    pub shape: Option<ImageShape>,
    pub observed_count: u64,
    pub labels: Vec<u32>,
    pub seqs: Vec<u64>,
    pub images: Vec<f32>,
    pub rng: RngState,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: InsertionPolicy, rng: StreamRng) -> Self {
        Self {
            capacity,
            policy,
            shape: None,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            observed_count: 0,
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn observed_count(&self) -> u64 {
        self.observed_count
    }

    pub fn labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.slots.iter().map(|s| s.label)
    }

    /// Observation sequence numbers of resident samples.
    pub fn resident_seqs(&self) -> impl Iterator<Item = u64> + '_ {
        self.slots.iter().map(|s| s.seq)
    }

    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.slots {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn observe(&mut self, batch: &LabeledBatch) {
        if !batch.is_empty() {
            self.shape.get_or_insert(batch.shape);
        }
        for i in 0..batch.len() {
            let slot = Slot {
                image: batch.image(i).to_vec(),
                label: batch.labels[i],
                seq: self.observed_count,
            };
            self.insert(slot);
            self.observed_count += 1;
        }
    }

    fn insert(&mut self, slot: Slot) {
        if self.capacity == 0 {
            return;
        }
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
            return;
        }
        match self.policy {
            InsertionPolicy::Reservoir => {
                let j = self.rng.random_range(0..=self.observed_count);
                if (j as usize) < self.capacity {
                    self.slots[j as usize] = slot;
                }
            }
            InsertionPolicy::ClassBalanced => {
                let counts = self.class_counts();
                let own = counts.get(&slot.label).copied().unwrap_or(0);
                let (largest, max) = counts.iter().fold((0, 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best });
                if own >= max {
                    return;
                }
                let victims: Vec<usize> = (0..self.slots.len()).filter(|&i| self.slots[i].label == largest).collect();
                let v = victims[self.rng.random_range(0..victims.len())];
                self.slots[v] = slot;
            }
        }
    }

    /// Uniform draw of `n` resident samples: without replacement when at least
    /// `n` are stored, with replacement otherwise.
    pub fn sample(&mut self, n: usize) -> Result<LabeledBatch> {
        let shape = match self.shape {
            Some(s) => s,
            None if n == 0 => {
                return Ok(LabeledBatch::empty(ImageShape {
                    channels: 0,
                    height: 0,
                    width: 0,
                }))
            }
            None => return Err(Error::EmptyBuffer),
        };
        if n == 0 {
            return Ok(LabeledBatch::empty(shape));
        }
        if self.slots.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let picks: Vec<usize> = if self.slots.len() >= n {
            index::sample(&mut self.rng, self.slots.len(), n).into_vec()
        } else {
            (0..n).map(|_| self.rng.random_range(0..self.slots.len())).collect()
        };
        let mut out = LabeledBatch::empty(shape);
        for &p in &picks {
            out.images.extend_from_slice(&self.slots[p].image);
            out.labels.push(self.slots[p].label);
        }
        out.indices = picks;
        Ok(out)
    }

    /// Every resident sample, in slot order.
    pub fn contents(&self) -> Option<LabeledBatch> {
        let shape = self.shape?;
        let mut out = LabeledBatch::empty(shape);
        for (i, s) in self.slots.iter().enumerate() {
            out.images.extend_from_slice(&s.image);
            out.labels.push(s.label);
            out.indices.push(i);
        }
        Some(out)
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        BufferSnapshot {
            capacity: self.capacity,
            policy: self.policy,
            shape: self.shape,
            observed_count: self.observed_count,
            labels: self.slots.iter().map(|s| s.label).collect(),
            seqs: self.slots.iter().map(|s| s.seq).collect(),
            images: self.slots.iter().flat_map(|s| s.image.iter().copied()).collect(),
            rng: self.rng.state(),
        }
    }

    pub fn restore(snap: &BufferSnapshot) -> Result<Self> {
        let n = snap.labels.len();
        let per = snap.shape.map(|s| s.numel()).unwrap_or(0);
        if snap.seqs.len() != n || snap.images.len() != n * per || n > snap.capacity {
            return Err(Error::Checkpoint("inconsistent replay buffer snapshot".into()));
        }
        let slots = (0..n)
            .map(|i| Slot {
                image: snap.images[i * per..(i + 1) * per].to_vec(),
                label: snap.labels[i],
                seq: snap.seqs[i],
            })
            .collect();
        Ok(Self {
            capacity: snap.capacity,
            policy: snap.policy,
            shape: snap.shape,
            slots,
            observed_count: snap.observed_count,
            rng: StreamRng::from_state(&snap.rng)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(labels: &[u32]) -> LabeledBatch {
        LabeledBatch {
            shape: ImageShape {
                channels: 1,
                height: 1,
                width: 2,
            },
            images: labels.iter().flat_map(|&y| [y as f32, 0.5]).collect(),
            labels: labels.to_vec(),
            indices: (0..labels.len()).collect(),
        }
    }

    fn buffer(cap: usize, seed: u64) -> ReplayBuffer {
        ReplayBuffer::new(cap, InsertionPolicy::Reservoir, StreamRng::seed_from_u64(seed))
    }

    #[test]
    fn under_capacity_keeps_everything() {
        let mut b = buffer(100, 0);
        b.observe(&samples(&[1; 50]));
        assert_eq!(b.len(), 50);
        assert_eq!(b.observed_count(), 50);
    }

    #[test]
    fn equal_seeds_equal_contents() {
        let labels: Vec<u32> = (0..300).map(|i| i % 7).collect();
        let mut a = buffer(20, 5);
        let mut c = buffer(20, 5);
        a.observe(&samples(&labels));
        c.observe(&samples(&labels));
        assert_eq!(a.snapshot(), c.snapshot());
    }

    #[test]
    fn single_slot_is_ten_copies() {
        let mut b = buffer(4, 1);
        b.observe(&samples(&[3]));
        let out = b.sample(10).unwrap();
        assert_eq!(out.labels, vec![3; 10]);
        assert_eq!(out.images.len(), 20);
    }

    #[test]
    fn zero_draw_and_empty_buffer() {
        let mut b = buffer(4, 1);
        assert!(b.sample(0).unwrap().is_empty());
        assert!(matches!(b.sample(3), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn without_replacement_when_enough() {
        let mut b = buffer(30, 2);
        b.observe(&samples(&(0..30).collect::<Vec<_>>()));
        let mut got = b.sample(30).unwrap().labels;
        got.sort_unstable();
        assert_eq!(got, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn class_balanced_evicts_largest_class() {
        let mut b = ReplayBuffer::new(6, InsertionPolicy::ClassBalanced, StreamRng::seed_from_u64(0));
        b.observe(&samples(&[0; 10]));
        b.observe(&samples(&[1; 10]));
        b.observe(&samples(&[2; 10]));
        assert_eq!(b.class_counts(), BTreeMap::from([(0, 2), (1, 2), (2, 2)]));
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let labels: Vec<u32> = (0..80).map(|i| i % 5).collect();
        let mut a = buffer(10, 9);
        a.observe(&samples(&labels[..40]));
        let mut b = ReplayBuffer::restore(&a.snapshot()).unwrap();
        a.observe(&samples(&labels[40..]));
        b.observe(&samples(&labels[40..]));
        assert_eq!(a.sample(5).unwrap(), b.sample(5).unwrap());
        assert_eq!(a.snapshot(), b.snapshot());
    }

    #[test]
    fn buffer_units() {
        assert_eq!(BufferUnits::PerClass.capacity(5, 10), 50);
        assert_eq!(BufferUnits::Total.capacity(5, 10), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_exceeds_capacity(cap in 0usize..16, n in 0usize..200, seed in any::<u64>(), balanced in any::<bool>()) {
                let policy = if balanced { InsertionPolicy::ClassBalanced } else { InsertionPolicy::Reservoir };
                let mut b = ReplayBuffer::new(cap, policy, StreamRng::seed_from_u64(seed));
                let labels: Vec<u32> = (0..n as u32).map(|i| i % 4).collect();
                for chunk in labels.chunks(7) {
                    b.observe(&samples(chunk));
                    prop_assert!(b.len() <= cap);
                }
                prop_assert_eq!(b.len(), cap.min(n));
            }
        }
    }
}
