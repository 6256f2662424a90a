//! Per-batch training for each method.
//!
//! Every step is one optimizer update on the incoming batch, optionally
//! mixed with a rehearsal batch drawn from the replay buffer *before* the
//! incoming samples are offered to it.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentationPolicy, LabeledBatch};
use crate::model::{EncoderSpec, HeadSpec, Network, NetworkSpec, TensorSnapshot, TwinNetwork};
use crate::objectives::{
    buffer_ce_loss, build_positive_sets, ccp_incoming_loss, supbyol_loss, ByolTarget, PositiveSets, Reduction,
};
use crate::prototypes::{PrototypeSnapshot, PrototypeStore};
use crate::replay::{BufferSnapshot, InsertionPolicy, ReplayBuffer};
use crate::rng::{RngState, StreamRng};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0x494e_4954;
const PROTO_STREAM: u64 = 0x5052_4f54;
const BUFFER_STREAM: u64 = 0x4255_4646;
const AUGMENT_STREAM: u64 = 0x4155_474d;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "supbyol")]
    SupByol,
    Ccp,
    Er,
    Finetune,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SupByol, Method::Ccp, Method::Er, Method::Finetune];

    pub fn uses_buffer(self) -> bool {
        self != Method::Finetune
    }

    pub fn uses_prototypes(self) -> bool {
        matches!(self, Method::SupByol | Method::Ccp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SupByol => "supbyol",
            Method::Ccp => "ccp",
            Method::Er => "er",
            Method::Finetune => "finetune",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Source of the mean projection in the momentum prototype update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMean {
    /// Replayed batch of the current step.
    #[default]
    Batch,
    /// Every buffered sample of the class, re-embedded after the step.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub rehearsal_batch_size: usize,
    pub byol_temperature: f64,
    pub ce_temperature: f64,
    pub ccp_temperature: f64,
    pub ema_rate: f64,
    pub prototype_momentum: f64,
    pub prototype_mean: PrototypeMean,
    pub byol_target: ByolTarget,
    pub ce_reduction: Reduction,
    pub buffer_capacity: usize,
    pub buffer_policy: InsertionPolicy,
    /// Views for the incoming batch.
    pub augment: AugmentationPolicy,
    /// Also augment replayed samples.
    pub replay_augment: bool,
    pub dtype: DType,
}

impl LearnerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            learning_rate: 0.1,
            rehearsal_batch_size: 10,
            byol_temperature: 0.2,
            ce_temperature: 0.2,
            ccp_temperature: 0.2,
            ema_rate: 0.99,
            prototype_momentum: 0.9,
            prototype_mean: PrototypeMean::Batch,
            byol_target: ByolTarget::Positive,
            ce_reduction: Reduction::Mean,
            buffer_capacity: 1000,
            buffer_policy: InsertionPolicy::Reservoir,
            augment: AugmentationPolicy::default(),
            replay_augment: false,
            dtype: DType::F32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.uses_buffer() && self.rehearsal_batch_size == 0 {
            return Err(Error::Config(format!("{} needs rehearsal_batch_size >= 1", self.method)));
        }
        for (name, t) in [
            ("byol_temperature", self.byol_temperature),
            ("ce_temperature", self.ce_temperature),
            ("ccp_temperature", self.ccp_temperature),
        ] {
            if t <= 0.0 || !t.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {t}")));
            }
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Builds the per-method network layout around a shared encoder.
pub fn network_spec(method: Method, encoder: EncoderSpec, head: HeadSpec, num_classes: u32) -> NetworkSpec {
    match method {
        Method::SupByol => NetworkSpec {
            encoder,
            projector: Some(head),
            predictor: Some(head),
            classifier: None,
        },
        Method::Ccp => NetworkSpec {
            encoder,
            projector: Some(head),
            predictor: None,
            classifier: None,
        },
        Method::Er | Method::Finetune => NetworkSpec {
            encoder,
            projector: None,
            predictor: None,
            classifier: Some(num_classes as usize),
        },
    }
}

#[derive(Debug, Clone)]
enum Backbone {
    Twin(TwinNetwork),
    Single(Network),
}

/// Scalars emitted after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub incoming_loss: f64,
    pub replay_loss: Option<f64>,
    pub total_loss: f64,
    pub replayed: usize,
    /// `c̄_y` used by the momentum prototype update this step.
    #[serde(skip)]
    pub momentum_targets: BTreeMap<u32, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSnapshot {
    pub method: Method,
    pub step: u64,
    pub online: BTreeMap<String, TensorSnapshot>,
    pub target: Option<BTreeMap<String, TensorSnapshot>>,
    pub prototypes: Option<PrototypeSnapshot>,
    pub buffer: Option<BufferSnapshot>,
    pub seen: Vec<u32>,
    pub augment_rng: RngState,
}

#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    backbone: Backbone,
    prototypes: Option<PrototypeStore>,
    buffer: Option<ReplayBuffer>,
    seen: BTreeSet<u32>,
    augment_rng: StreamRng,
    step: u64,
    device: Device,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

impl Learner {
    pub fn new(config: LearnerConfig, spec: &NetworkSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut init = StreamRng::derived(seed, INIT_STREAM);
        let online = Network::new(spec, &device, config.dtype, &mut init)?;
        let backbone = match config.method {
            Method::SupByol => Backbone::Twin(TwinNetwork::new(online, config.ema_rate, &mut init)?),
            _ => Backbone::Single(online),
        };
        let prototypes = if config.method.uses_prototypes() {
            let dim = spec
                .projection_dim()
                .ok_or_else(|| Error::Config(format!("{} needs a projector", config.method)))?;
            Some(PrototypeStore::new(
                dim,
                config.prototype_momentum,
                device.clone(),
                config.dtype,
                StreamRng::derived(seed, PROTO_STREAM),
            )?)
        } else {
            if spec.classifier.is_none() {
                return Err(Error::Config(format!("{} needs a classifier head", config.method)));
            }
            None
        };
        let buffer = config.method.uses_buffer().then(|| {
            ReplayBuffer::new(config.buffer_capacity, config.buffer_policy, StreamRng::derived(seed, BUFFER_STREAM))
        });
        Ok(Self {
            augment_rng: StreamRng::derived(seed, AUGMENT_STREAM),
            config,
            backbone,
            prototypes,
            buffer,
            seen: BTreeSet::new(),
            step: 0,
            device,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn online(&self) -> &Network {
        match &self.backbone {
            Backbone::Twin(t) => &t.online,
            Backbone::Single(n) => n,
        }
    }

    pub fn twin(&self) -> Option<&TwinNetwork> {
        match &self.backbone {
            Backbone::Twin(t) => Some(t),
            Backbone::Single(_) => None,
        }
    }

    pub fn prototypes(&self) -> Option<&PrototypeStore> {
        self.prototypes.as_ref()
    }

    pub fn prototypes_mut(&mut self) -> Option<&mut PrototypeStore> {
        self.prototypes.as_mut()
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    pub fn seen_classes(&self) -> &BTreeSet<u32> {
        &self.seen
    }

    fn draw_replay(&mut self) -> Result<Option<LabeledBatch>> {
        let n = self.config.rehearsal_batch_size;
        let Some(buffer) = self.buffer.as_mut() else { return Ok(None) };
        if buffer.is_empty() || n == 0 {
            return Ok(None);
        }
        let mut replay = buffer.sample(n)?;
        if self.config.replay_augment {
            replay = augment(&replay, &self.config.augment, &mut self.augment_rng);
        }
        Ok(Some(replay))
    }

    /// Raw batch followed by one view per sample.
    fn extended(&mut self, incoming: &LabeledBatch) -> Result<(LabeledBatch, PositiveSets)> {
        let views = augment(incoming, &self.config.augment, &mut self.augment_rng);
        let ext = incoming.concat(&views)?;
        let positives = build_positive_sets(&ext.labels, incoming.len())?;
        Ok((ext, positives))
    }

    fn tensor(&self, batch: &LabeledBatch) -> Result<Tensor> {
        batch.images_tensor(&self.device, self.config.dtype)
    }

    pub fn train_step(&mut self, incoming: &LabeledBatch) -> Result<StepLog> {
        if incoming.is_empty() {
            return Err(Error::EmptyBatch("train_step"));
        }
        let log = match self.config.method {
            Method::Ccp => self.step_ccp(incoming)?,
            Method::SupByol => self.step_supbyol(incoming)?,
            Method::Er | Method::Finetune => self.step_linear(incoming)?,
        };
        if let Some(buffer) = self.buffer.as_mut() {
            buffer.observe(incoming);
        }
        self.step += 1;
        Ok(log)
    }

    fn step_ccp(&mut self, incoming: &LabeledBatch) -> Result<StepLog> {
        let protos = self.prototypes.as_mut().ok_or(Error::EmptyStore)?;
        protos.set_incoming(&incoming.labels)?;
        let replay = self.draw_replay()?;
        let (ext, positives) = self.extended(incoming)?;
        let n_ext = ext.len();
        let input = match &replay {
            Some(r) => ext.concat(r)?,
            None => ext.clone(),
        };
        let x = self.tensor(&input)?;
        let net = self.online();
        let z = net
            .forward(&x, true)?
            .projection
            .ok_or_else(|| Error::Shape("ccp network has no projector".into()))?;
        let protos = self.prototypes.as_ref().ok_or(Error::EmptyStore)?;
        let (matrix, ids) = protos.matrix(true)?;
        let t = &self.config;
        let z_in = z.narrow(0, 0, n_ext)?;
        let l1 = ccp_incoming_loss(&z_in, &incoming.labels, &positives, &matrix, &ids, t.ccp_temperature)?;
        let (total, l2, z_bf) = match &replay {
            Some(r) => {
                let z_bf = z.narrow(0, n_ext, r.len())?;
                let l2 = buffer_ce_loss(&z_bf, &r.labels, &matrix, &ids, t.ce_temperature, t.ce_reduction)?;
                ((&l1 + &l2)?, Some(l2), Some(z_bf))
            }
            None => (l1.clone(), None, None),
        };
        let grads = total.backward()?;
        net.params().sgd_step(&grads, t.learning_rate)?;
        protos.sgd_step(&grads, t.learning_rate, Some(protos.incoming()))?;

        let momentum_targets = match (&replay, z_bf) {
            (Some(r), Some(z_bf)) => match t.prototype_mean {
                PrototypeMean::Batch => protos.momentum_update(&z_bf.detach(), &r.labels)?,
                PrototypeMean::Buffer => {
                    let replayed: BTreeSet<u32> = r.labels.iter().copied().collect();
                    self.buffer_momentum(&replayed)?
                }
            },
            _ => BTreeMap::new(),
        };
        Ok(StepLog {
            step: self.step,
            incoming_loss: scalar(&l1)?,
            replay_loss: l2.as_ref().map(scalar).transpose()?,
            total_loss: scalar(&total)?,
            replayed: replay.as_ref().map_or(0, LabeledBatch::len),
            momentum_targets,
        })
    }

    fn buffer_momentum(&self, classes: &BTreeSet<u32>) -> Result<BTreeMap<u32, Vec<f64>>> {
        let (Some(buffer), Some(protos)) = (self.buffer.as_ref(), self.prototypes.as_ref()) else {
            return Ok(BTreeMap::new());
        };
        let Some(all) = buffer.contents() else { return Ok(BTreeMap::new()) };
        let keep: Vec<usize> = (0..all.len()).filter(|&i| classes.contains(&all.labels[i])).collect();
        let mut picked = LabeledBatch::empty(all.shape);
        for &i in &keep {
            picked.images.extend_from_slice(all.image(i));
            picked.labels.push(all.labels[i]);
        }
        if picked.is_empty() {
            return Ok(BTreeMap::new());
        }
        let z = self.project_eval(&picked)?;
        protos.momentum_update(&z, &picked.labels)
    }

    fn step_supbyol(&mut self, incoming: &LabeledBatch) -> Result<StepLog> {
        self.prototypes
            .as_mut()
            .ok_or(Error::EmptyStore)?
            .set_incoming(&incoming.labels)?;
        let replay = self.draw_replay()?;
        let (ext, positives) = self.extended(incoming)?;
        let n = incoming.len();
        let online_in = match &replay {
            Some(r) => incoming.concat(r)?,
            None => incoming.clone(),
        };
        let x_online = self.tensor(&online_in)?;
        let x_ext = self.tensor(&ext)?;
        let Backbone::Twin(twin) = &self.backbone else {
            return Err(Error::Config("supbyol requires a twin network".into()));
        };
        let out = twin.forward_online(&x_online, true)?;
        let (Some(z), Some(pred)) = (out.projection, out.prediction) else {
            return Err(Error::Shape("supbyol network lacks projector or predictor".into()));
        };
        let targets = twin.forward_target(&x_ext)?;
        let t = &self.config;
        let protos = self.prototypes.as_ref().ok_or(Error::EmptyStore)?;
        let l1 = supbyol_loss(&pred.narrow(0, 0, n)?, &targets, &positives, t.byol_temperature, t.byol_target)?;
        let (total, l2) = match &replay {
            Some(r) => {
                let (matrix, ids) = protos.matrix(false)?;
                let z_bf = z.narrow(0, n, r.len())?;
                let l2 = buffer_ce_loss(&z_bf, &r.labels, &matrix, &ids, t.ce_temperature, t.ce_reduction)?;
                ((&l1 + &l2)?, Some(l2))
            }
            None => (l1.clone(), None),
        };
        let grads = total.backward()?;
        twin.online.params().sgd_step(&grads, t.learning_rate)?;
        protos.sgd_step(&grads, t.learning_rate, None)?;
        twin.ema_update()?;
        Ok(StepLog {
            step: self.step,
            incoming_loss: scalar(&l1)?,
            replay_loss: l2.as_ref().map(scalar).transpose()?,
            total_loss: scalar(&total)?,
            replayed: replay.as_ref().map_or(0, LabeledBatch::len),
            momentum_targets: BTreeMap::new(),
        })
    }

    /// Cross-entropy through encoder and linear head, logits restricted to seen classes.
    fn step_linear(&mut self, incoming: &LabeledBatch) -> Result<StepLog> {
        self.seen.extend(incoming.labels.iter().copied());
        let replay = self.draw_replay()?;
        let fresh = augment(incoming, &self.config.augment, &mut self.augment_rng);
        let n_in = fresh.len();
        let batch = match &replay {
            Some(r) => fresh.concat(r)?,
            None => fresh,
        };
        let seen: Vec<u32> = self.seen.iter().copied().collect();
        let x = self.tensor(&batch)?;
        let net = self.online();
        let logits = net
            .forward(&x, true)?
            .logits
            .ok_or_else(|| Error::Shape("network has no classifier".into()))?;
        let cols = Tensor::from_slice(&seen, seen.len(), &self.device)?;
        let logits = logits.index_select(&cols, 1)?;
        let targets: Vec<u32> = batch
            .labels
            .iter()
            .map(|y| seen.iter().position(|s| s == y).map(|p| p as u32).ok_or(Error::UnknownClass(*y)))
            .collect::<Result<_>>()?;
        let nll = {
            let idx = Tensor::from_vec(targets, (batch.len(), 1), &self.device)?;
            (logits.log_sum_exp(D::Minus1)? - logits.gather(&idx, D::Minus1)?.squeeze(D::Minus1)?)?
        };
        let total = nll.mean_all()?;
        let incoming_loss = scalar(&nll.narrow(0, 0, n_in)?.mean_all()?)?;
        let replay_loss = match &replay {
            Some(r) => Some(scalar(&nll.narrow(0, n_in, r.len())?.mean_all()?)?),
            None => None,
        };
        let grads = total.backward()?;
        net.params().sgd_step(&grads, self.config.learning_rate)?;
        Ok(StepLog {
            step: self.step,
            incoming_loss,
            replay_loss,
            total_loss: scalar(&total)?,
            replayed: replay.as_ref().map_or(0, LabeledBatch::len),
            momentum_targets: BTreeMap::new(),
        })
    }

    fn project_eval(&self, batch: &LabeledBatch) -> Result<Tensor> {
        let mut parts = Vec::new();
        for start in (0..batch.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(batch.len());
            let chunk = LabeledBatch {
                shape: batch.shape,
                images: batch.images[start * batch.shape.numel()..end * batch.shape.numel()].to_vec(),
                labels: batch.labels[start..end].to_vec(),
                indices: Vec::new(),
            };
            let z = self
                .online()
                .forward(&self.tensor(&chunk)?, false)?
                .projection
                .ok_or_else(|| Error::Shape("network has no projector".into()))?;
            parts.push(z.detach());
        }
        Ok(Tensor::cat(&parts, 0)?)
    }

    /// Single-head predictions over every class seen so far; no task identity.
    pub fn predict(&self, batch: &LabeledBatch) -> Result<Vec<u32>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(protos) = &self.prototypes {
            return protos.classify(&self.project_eval(batch)?);
        }
        let seen: Vec<u32> = self.seen.iter().copied().collect();
        if seen.is_empty() {
            return Err(Error::EmptyStore);
        }
        let cols = Tensor::from_slice(&seen, seen.len(), &self.device)?;
        let mut out = Vec::with_capacity(batch.len());
        for start in (0..batch.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(batch.len());
            let numel = batch.shape.numel();
            let s = batch.shape;
            let x = Tensor::from_slice(&batch.images[start * numel..end * numel], (end - start, s.channels, s.height, s.width), &self.device)?
                .to_dtype(self.config.dtype)?;
            let logits = self
                .online()
                .forward(&x, false)?
                .logits
                .ok_or_else(|| Error::Shape("network has no classifier".into()))?
                .index_select(&cols, 1)?;
            let rows: Vec<Vec<f64>> = logits.to_dtype(DType::F64)?.to_vec2()?;
            for r in rows {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                out.push(seen[best]);
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Result<LearnerSnapshot> {
        Ok(LearnerSnapshot {
            method: self.config.method,
            step: self.step,
            online: self.online().params().snapshot()?,
            target: self.twin().map(|t| t.target_params().snapshot()).transpose()?,
            prototypes: self.prototypes.as_ref().map(PrototypeStore::snapshot).transpose()?,
            buffer: self.buffer.as_ref().map(ReplayBuffer::snapshot),
            seen: self.seen.iter().copied().collect(),
            augment_rng: self.augment_rng.state(),
        })
    }

    /// Overwrites this learner's state; `self` must have been built with the same config and spec.
    pub fn restore(&mut self, snap: &LearnerSnapshot) -> Result<()> {
        if snap.method != self.config.method {
            return Err(Error::Checkpoint(format!("checkpoint is for {}, learner is {}", snap.method, self.config.method)));
        }
        self.online().params().restore(&snap.online)?;
        match (self.twin(), &snap.target) {
            (Some(t), Some(s)) => t.target_params().restore(s)?,
            (None, None) => {}
            _ => return Err(Error::Checkpoint("target network presence mismatch".into())),
        }
        self.prototypes = snap
            .prototypes
            .as_ref()
            .map(|p| PrototypeStore::restore(p, self.device.clone(), self.config.dtype))
            .transpose()?;
        self.buffer = snap.buffer.as_ref().map(ReplayBuffer::restore).transpose()?;
        self.seen = snap.seen.iter().copied().collect();
        self.augment_rng = StreamRng::from_state(&snap.augment_rng)?;
        self.step = snap.step;
        Ok(())
    }
}
