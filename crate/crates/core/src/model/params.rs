use std::collections::{BTreeMap, BTreeSet};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::{Error, Result};

/// Named variables of one network, in deterministic (sorted) order.
///
/// Trainable parameters and running statistics live side by side; only the
/// trainable ones are touched by [`ParamStore::sgd_step`].
#[derive(Debug, Clone)]
pub struct ParamStore {
    device: Device,
    dtype: DType,
    vars: BTreeMap<String, Var>,
    trainable: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSnapshot {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl ParamStore {
    pub fn new(device: Device, dtype: DType) -> Self {
        Self {
            device,
            dtype,
            vars: BTreeMap::new(),
            trainable: BTreeSet::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn insert(&mut self, name: String, tensor: Tensor, trainable: bool) -> Result<Var> {
        if self.vars.contains_key(&name) {
            return Err(Error::Shape(format!("duplicate parameter {name}")));
        }
        let var = Var::from_tensor(&tensor.to_dtype(self.dtype)?)?;
        if trainable {
            self.trainable.insert(name.clone());
        }
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize, rng: &mut StreamRng) -> Result<Var> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.insert(name, t, true)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64, trainable: bool) -> Result<Var> {
        let t = (Tensor::ones(shape, DType::F32, &self.device)? * value)?;
        self.insert(name, t, trainable)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn trainable_vars(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| self.trainable.contains(*k))
            .map(|(k, v)| (k.as_str(), v))
    }

    /// `p <- p - lr * grad` for every trainable parameter that received a gradient.
    pub fn sgd_step(&self, grads: &GradStore, lr: f64) -> Result<()> {
        for (_, var) in self.trainable_vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                var.set(&var.as_tensor().sub(&g.affine(lr, 0.0)?)?)?;
            }
        }
        Ok(())
    }

    /// Copies every value from `other`, which must have the same names and shapes.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (name, var) in &self.vars {
            let src = other
                .vars
                .get(name)
                .ok_or_else(|| Error::Shape(format!("source has no parameter {name}")))?;
            var.set(src.as_tensor())?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<BTreeMap<String, TensorSnapshot>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                let t = v.as_tensor();
                Ok((
                    k.clone(),
                    TensorSnapshot {
                        shape: t.dims().to_vec(),
                        data: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?,
                    },
                ))
            })
            .collect()
    }

    pub fn restore(&self, snap: &BTreeMap<String, TensorSnapshot>) -> Result<()> {
        if snap.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!("{} tensors for {} parameters", snap.len(), self.vars.len())));
        }
        for (name, var) in &self.vars {
            let s = snap
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let t = Tensor::from_slice(&s.data, s.shape.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}
