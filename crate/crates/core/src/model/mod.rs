//! Encoder / projector / predictor stacks and the EMA target network.

mod layers;
mod params;
mod resnet;

pub use layers::{BatchNorm, Conv2d, Linear, Mlp};
pub use params::{ParamStore, TensorSnapshot};
pub use resnet::ReducedResNet18;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Four residual stages of `widths`, two basic blocks each, global average pool.
    ReducedResnet18 { in_channels: usize, widths: [usize; 4] },
    /// Flattened input through `hidden` ReLU layers, optionally batch-normalized before each ReLU.
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        #[serde(default)]
        batch_norm: bool,
    },
}

impl EncoderSpec {
    pub fn reduced_resnet18() -> Self {
        EncoderSpec::ReducedResnet18 {
            in_channels: 3,
            widths: [20, 40, 80, 160],
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            EncoderSpec::ReducedResnet18 { widths, .. } => widths[3],
            EncoderSpec::Mlp { input_dim, hidden, .. } => hidden.last().copied().unwrap_or(*input_dim),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: usize,
    pub output: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self { hidden: 256, output: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder: EncoderSpec,
    pub projector: Option<HeadSpec>,
    pub predictor: Option<HeadSpec>,
    /// Linear classifier width over the embedding (experience replay and fine-tuning).
    pub classifier: Option<usize>,
}

impl NetworkSpec {
    pub fn embedding_dim(&self) -> usize {
        self.encoder.embedding_dim()
    }

    pub fn projection_dim(&self) -> Option<usize> {
        self.projector.map(|p| p.output)
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(p), None) = (self.predictor, self.projector) {
            return Err(Error::Config(format!("predictor {p:?} requires a projector")));
        }
        if let (Some(proj), Some(pred)) = (self.projector, self.predictor) {
            if pred.output != proj.output {
                return Err(Error::Config(format!(
                    "predictor output {} must equal projector output {}",
                    pred.output, proj.output
                )));
            }
        }
        Ok(())
    }

    /// The same stack without predictor or classifier.
    pub fn target_spec(&self) -> NetworkSpec {
        NetworkSpec {
            encoder: self.encoder.clone(),
            projector: self.projector,
            predictor: None,
            classifier: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Resnet(ReducedResNet18),
    Mlp(Vec<(Linear, Option<BatchNorm>)>),
}

impl Encoder {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Encoder::Resnet(r) => r.forward(x, train),
            Encoder::Mlp(layers) => {
                let mut h = x.flatten_from(1)?;
                for (l, bn) in layers {
                    h = l.forward(&h)?;
                    if let Some(bn) = bn {
                        h = bn.forward(&h, train)?;
                    }
                    h = h.relu()?;
                }
                Ok(h)
            }
        }
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embedding: Tensor,
    pub projection: Option<Tensor>,
    pub prediction: Option<Tensor>,
    pub logits: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamStore,
    encoder: Encoder,
    projector: Option<Mlp>,
    predictor: Option<Mlp>,
    classifier: Option<Linear>,
}

impl Network {
    pub fn new(spec: &NetworkSpec, device: &Device, dtype: DType, rng: &mut StreamRng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new(device.clone(), dtype);
        let encoder = match &spec.encoder {
            EncoderSpec::ReducedResnet18 { in_channels, widths } => {
                Encoder::Resnet(ReducedResNet18::new(&mut params, "encoder", *in_channels, *widths, rng)?)
            }
            EncoderSpec::Mlp {
                input_dim,
                hidden,
                batch_norm,
            } => {
                let mut layers = Vec::with_capacity(hidden.len());
                let mut prev = *input_dim;
                for (i, &h) in hidden.iter().enumerate() {
                    let linear = Linear::new(&mut params, &format!("encoder.{i}"), prev, h, rng)?;
                    let bn = if *batch_norm {
                        Some(BatchNorm::new(&mut params, &format!("encoder.{i}.bn"), h)?)
                    } else {
                        None
                    };
                    layers.push((linear, bn));
                    prev = h;
                }
                Encoder::Mlp(layers)
            }
        };
        let emb = spec.embedding_dim();
        let projector = spec
            .projector
            .map(|h| Mlp::new(&mut params, "projector", emb, h.hidden, h.output, rng))
            .transpose()?;
        let predictor = match (spec.predictor, spec.projector) {
            (Some(h), Some(p)) => Some(Mlp::new(&mut params, "predictor", p.output, h.hidden, h.output, rng)?),
            _ => None,
        };
        let classifier = spec
            .classifier
            .map(|k| Linear::new(&mut params, "classifier", emb, k, rng))
            .transpose()?;
        Ok(Self {
            spec: spec.clone(),
            params,
            encoder,
            projector,
            predictor,
            classifier,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn projector(&self) -> Option<&Mlp> {
        self.projector.as_ref()
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let dims = images.dims();
        let ok = match &self.spec.encoder {
            EncoderSpec::ReducedResnet18 { in_channels, .. } => dims.len() == 4 && dims[1] == *in_channels,
            EncoderSpec::Mlp { input_dim, .. } => {
                !dims.is_empty() && dims[1..].iter().product::<usize>() == *input_dim
            }
        };
        if ok && dims[0] > 0 {
            Ok(())
        } else {
            Err(Error::Shape(format!("encoder {:?} cannot take input {dims:?}", self.spec.encoder)))
        }
    }

    /// Full pass. `train` selects batch statistics (and running-stat updates)
    /// in normalization layers.
    pub fn forward(&self, images: &Tensor, train: bool) -> Result<Forward> {
        self.check_input(images)?;
        let images = images.to_dtype(self.params.dtype())?;
        let embedding = self.encoder.forward(&images, train)?;
        let projection = self.projector.as_ref().map(|p| p.forward(&embedding)).transpose()?;
        let prediction = match (&self.predictor, &projection) {
            (Some(q), Some(z)) => Some(q.forward(z)?),
            _ => None,
        };
        let logits = self.classifier.as_ref().map(|c| c.forward(&embedding)).transpose()?;
        Ok(Forward {
            embedding,
            projection,
            prediction,
            logits,
        })
    }

    pub fn embed(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(images)?;
        self.encoder.forward(&images.to_dtype(self.params.dtype())?, train)
    }
}

/// Online network `θ` plus a gradient-free EMA copy `ξ` of its encoder and projector.
#[derive(Debug, Clone)]
pub struct TwinNetwork {
    pub online: Network,
    target: Network,
    ema_rate: f64,
}

impl TwinNetwork {
    pub fn new(online: Network, ema_rate: f64, rng: &mut StreamRng) -> Result<Self> {
        if !(0.0..=1.0).contains(&ema_rate) {
            return Err(Error::Config(format!("ema_rate {ema_rate} outside [0, 1]")));
        }
        let spec = online.spec().target_spec();
        if spec.projector.is_none() {
            return Err(Error::Config("twin network needs a projector".into()));
        }
        let params = online.params();
        let target = Network::new(&spec, params.device(), params.dtype(), rng)?;
        let twin = Self {
            online,
            target,
            ema_rate,
        };
        twin.sync_target()?;
        Ok(twin)
    }

    pub fn ema_rate(&self) -> f64 {
        self.ema_rate
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target.params
    }

    /// `ξ := θ` for every target variable.
    pub fn sync_target(&self) -> Result<()> {
        self.target.params.copy_from(&self.online.params)
    }

    pub fn forward_online(&self, images: &Tensor, train: bool) -> Result<Forward> {
        self.online.forward(images, train)
    }

    /// `g_ξ(f_ξ(x))` in evaluation mode, detached from the graph.
    pub fn forward_target(&self, images: &Tensor) -> Result<Tensor> {
        let out = self.target.forward(images, false)?;
        let z = out.projection.ok_or_else(|| Error::Shape("target has no projector".into()))?;
        Ok(z.detach())
    }

    /// `ξ <- r ξ + (1 - r) θ` elementwise, running statistics included.
    pub fn ema_update(&self) -> Result<()> {
        let r = self.ema_rate;
        for (name, xi) in self.target.params.iter() {
            let theta = self
                .online
                .params
                .get(name)
                .ok_or_else(|| Error::Shape(format!("online network lacks {name}")))?;
            let mixed = (xi.as_tensor().affine(r, 0.0)? + theta.as_tensor().detach().affine(1.0 - r, 0.0)?)?;
            xi.set(&mixed)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
