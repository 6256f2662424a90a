//! One learnable unit-norm prototype per observed class.
//!
//! The store doubles as the cosine classifier. Under prototype contrast only
//! the prototypes of classes in the current incoming batch are exposed to
//! gradients; the rest move through [`PrototypeStore::momentum_update`].

use std::collections::{BTreeMap, BTreeSet};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::objectives::cosine_logits;
use crate::rng::{RngState, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct PrototypeStore {
    dim: usize,
    momentum: f64,
    device: Device,
    dtype: DType,
    prototypes: BTreeMap<u32, Var>,
    registered_order: Vec<u32>,
    incoming: BTreeSet<u32>,
    rng: StreamRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSnapshot {
    pub dim: usize,
    pub momentum: f64,
    pub registered_order: Vec<u32>,
    pub incoming: Vec<u32>,
    /// Rows in `registered_order`.
    pub vectors: Vec<Vec<f32>>,
    pub rng: RngState,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

impl PrototypeStore {
    pub fn new(dim: usize, momentum: f64, device: Device, dtype: DType, rng: StreamRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("prototype momentum {momentum} outside [0, 1]")));
        }
        Ok(Self {
            dim,
            momentum,
            device,
            dtype,
            prototypes: BTreeMap::new(),
            registered_order: Vec::new(),
            incoming: BTreeSet::new(),
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Registered class ids, ascending; the row order of [`Self::matrix`].
    pub fn class_ids(&self) -> Vec<u32> {
        self.prototypes.keys().copied().collect()
    }

    pub fn registered_order(&self) -> &[u32] {
        &self.registered_order
    }

    pub fn incoming(&self) -> &BTreeSet<u32> {
        &self.incoming
    }

    pub fn contains(&self, class: u32) -> bool {
        self.prototypes.contains_key(&class)
    }

    pub fn var(&self, class: u32) -> Option<&Var> {
        self.prototypes.get(&class)
    }

    pub fn vector(&self, class: u32) -> Result<Vec<f32>> {
        let v = self.prototypes.get(&class).ok_or(Error::UnknownClass(class))?;
        Ok(v.as_tensor().to_dtype(DType::F32)?.to_vec1()?)
    }

    /// Draws an isotropic Gaussian direction for a new class.
    pub fn register_class(&mut self, class: u32) -> Result<Tensor> {
        if self.prototypes.contains_key(&class) {
            return Err(Error::DuplicateClass(class));
        }
        let raw: Vec<f64> = loop {
            let g: Vec<f64> = (0..self.dim).map(|_| self.rng.sample(StandardNormal)).collect();
            if let Some(u) = unit(&g) {
                break u;
            }
        };
        let t = Tensor::from_vec(raw, self.dim, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.prototypes.insert(class, var.clone());
        self.registered_order.push(class);
        Ok(var.as_tensor().clone())
    }

    /// Marks the classes of the incoming batch, registering unseen ones.
    pub fn set_incoming(&mut self, labels: &[u32]) -> Result<()> {
        self.incoming = labels.iter().copied().collect();
        let fresh: Vec<u32> = self.incoming.iter().copied().filter(|c| !self.contains(*c)).collect();
        for c in fresh {
            self.register_class(c)?;
        }
        Ok(())
    }

    /// `[K, d]` prototype matrix in [`Self::class_ids`] order. With `masked`,
    /// rows outside the incoming set are detached constants.
    pub fn matrix(&self, masked: bool) -> Result<(Tensor, Vec<u32>)> {
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        let rows: Vec<Tensor> = self
            .prototypes
            .iter()
            .map(|(c, v)| {
                let t = v.as_tensor();
                let t = if masked && !self.incoming.contains(c) { t.detach() } else { t.clone() };
                Ok(t.unsqueeze(0)?)
            })
            .collect::<Result<_>>()?;
        Ok((Tensor::cat(&rows, 0)?, self.class_ids()))
    }

    /// Gradient step on the given classes (all when `None`), then re-projection to the unit sphere.
    pub fn sgd_step(&self, grads: &GradStore, lr: f64, classes: Option<&BTreeSet<u32>>) -> Result<()> {
        for (c, var) in &self.prototypes {
            if classes.is_some_and(|set| !set.contains(c)) {
                continue;
            }
            if let Some(g) = grads.get(var.as_tensor()) {
                let stepped = var.as_tensor().sub(&g.affine(lr, 0.0)?)?;
                let v: Vec<f64> = stepped.to_dtype(DType::F64)?.to_vec1()?;
                let u = unit(&v).ok_or(Error::DegenerateEmbedding { context: "prototype step" })?;
                var.set(&Tensor::from_vec(u, self.dim, &self.device)?.to_dtype(self.dtype)?)?;
            }
        }
        Ok(())
    }

    /// `c_y <- α c_y + (1-α) c̄_y`, renormalized, for every class of the
    /// replayed batch outside the incoming set. `c̄_y` is the normalized mean
    /// of that class's rows of `projections`. Returns the `c̄_y` used.
    pub fn momentum_update(&self, projections: &Tensor, labels: &[u32]) -> Result<BTreeMap<u32, Vec<f64>>> {
        if projections.dim(0)? != labels.len() {
            return Err(Error::Shape(format!("{} labels for projections {:?}", labels.len(), projections.dims())));
        }
        let rows: Vec<Vec<f64>> = if labels.is_empty() {
            Vec::new()
        } else {
            projections.detach().to_dtype(DType::F64)?.to_vec2()?
        };
        let mut sums: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (row, &y) in rows.iter().zip(labels) {
            if self.incoming.contains(&y) {
                continue;
            }
            if !self.contains(y) {
                return Err(Error::UnknownClass(y));
            }
            let acc = sums.entry(y).or_insert_with(|| vec![0.0; self.dim]);
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let alpha = self.momentum;
        let mut used = BTreeMap::new();
        for (y, sum) in sums {
            let Some(mean_dir) = unit(&sum) else { continue };
            let var = &self.prototypes[&y];
            let current: Vec<f64> = var.as_tensor().to_dtype(DType::F64)?.to_vec1()?;
            let mixed: Vec<f64> = current
                .iter()
                .zip(&mean_dir)
                .map(|(c, m)| alpha * c + (1.0 - alpha) * m)
                .collect();
            // Antipodal c and c̄ at α = 0.5 cancel; keep the old direction then.
            if let Some(u) = unit(&mixed) {
                var.set(&Tensor::from_vec(u, self.dim, &self.device)?.to_dtype(self.dtype)?)?;
            }
            used.insert(y, mean_dir);
        }
        Ok(used)
    }

    /// Class whose prototype has the largest cosine with each row; ties go to the lowest id.
    pub fn classify(&self, projections: &Tensor) -> Result<Vec<u32>> {
        let (protos, ids) = self.matrix(false)?;
        let logits = cosine_logits(&projections.to_dtype(self.dtype)?, &protos.detach(), 1.0)?;
        let rows: Vec<Vec<f64>> = logits.to_dtype(DType::F64)?.to_vec2()?;
        Ok(rows
            .iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                ids[best]
            })
            .collect())
    }

    pub fn snapshot(&self) -> Result<PrototypeSnapshot> {
        Ok(PrototypeSnapshot {
            dim: self.dim,
            momentum: self.momentum,
            registered_order: self.registered_order.clone(),
            incoming: self.incoming.iter().copied().collect(),
            vectors: self
                .registered_order
                .iter()
                .map(|&c| self.vector(c))
                .collect::<Result<_>>()?,
            rng: self.rng.state(),
        })
    }

    pub fn restore(snap: &PrototypeSnapshot, device: Device, dtype: DType) -> Result<Self> {
        let mut store = Self::new(snap.dim, snap.momentum, device, dtype, StreamRng::from_state(&snap.rng)?)?;
        if snap.vectors.len() != snap.registered_order.len() {
            return Err(Error::Checkpoint("prototype rows do not match registered classes".into()));
        }
        for (&c, v) in snap.registered_order.iter().zip(&snap.vectors) {
            if v.len() != snap.dim {
                return Err(Error::Checkpoint(format!("prototype {c} has dim {}", v.len())));
            }
            let t = Tensor::from_slice(v, snap.dim, &store.device)?.to_dtype(dtype)?;
            store.prototypes.insert(c, Var::from_tensor(&t)?);
            store.registered_order.push(c);
        }
        store.incoming = snap.incoming.iter().copied().collect();
        Ok(store)
    }
}
