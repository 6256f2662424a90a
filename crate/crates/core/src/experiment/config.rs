//! Flat, strictly parsed run configuration.
//!
//! Every key is optional in the file and falls back to the default listed in
//! [`RunConfig::default`]; unknown keys are an error.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synthetic::SyntheticSpec;
use crate::data::{AugmentationPolicy, ClassOrder, DatasetId, ImageShape, StreamConfig};
use crate::evaluation::AnytimeMode;
use crate::learner::{network_spec, LearnerConfig, Method, PrototypeMean};
use crate::model::{EncoderSpec, HeadSpec, NetworkSpec};
use crate::objectives::{ByolTarget, Reduction};
use crate::replay::{BufferUnits, InsertionPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ReducedResnet18,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetId,
    pub data_dir: PathBuf,
    pub classes_per_task: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub crop_padding: usize,
    pub flip_probability: f64,
    pub class_order: ClassOrder,

    pub method: Method,
    pub learning_rate: f64,
    pub rehearsal_batch_size: usize,
    pub temperature: f64,
    pub byol_temperature: Option<f64>,
    pub ce_temperature: Option<f64>,
    pub ccp_temperature: Option<f64>,
    pub ema_rate: f64,
    pub prototype_momentum: f64,
    pub prototype_mean: PrototypeMean,
    pub byol_target: ByolTarget,
    pub ce_reduction: Reduction,
    pub replay_augment: bool,

    pub buffer_m: usize,
    pub buffer_units: BufferUnits,
    pub buffer_policy: InsertionPolicy,

    pub encoder: EncoderKind,
    pub resnet_widths: [usize; 4],
    pub mlp_hidden: Vec<usize>,
    pub mlp_batch_norm: bool,
    pub projector_hidden: usize,
    pub projection_dim: usize,

    pub synthetic_classes: u32,
    pub synthetic_channels: usize,
    pub synthetic_height: usize,
    pub synthetic_width: usize,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,
    pub synthetic_spread: f64,
    pub synthetic_noise: f64,
    pub data_seed: u64,

    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub eval_mode: AnytimeMode,
    pub eval_points: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            dataset: DatasetId::Cifar10,
            data_dir: PathBuf::from("data"),
            classes_per_task: 1,
            batch_size: 10,
            augment: true,
            crop_padding: 4,
            flip_probability: 0.5,
            class_order: ClassOrder::Natural,
            method: Method::Ccp,
            learning_rate: 0.1,
            rehearsal_batch_size: 10,
            temperature: 0.2,
            byol_temperature: None,
            ce_temperature: None,
            ccp_temperature: None,
            ema_rate: 0.99,
            prototype_momentum: 0.9,
            prototype_mean: PrototypeMean::Batch,
            byol_target: ByolTarget::Positive,
            ce_reduction: Reduction::Mean,
            replay_augment: false,
            buffer_m: 100,
            buffer_units: BufferUnits::PerClass,
            buffer_policy: InsertionPolicy::Reservoir,
            encoder: EncoderKind::ReducedResnet18,
            resnet_widths: [20, 40, 80, 160],
            mlp_hidden: vec![64, 32],
            mlp_batch_norm: false,
            projector_hidden: 256,
            projection_dim: 128,
            synthetic_classes: synth.num_classes,
            synthetic_channels: synth.shape.channels,
            synthetic_height: synth.shape.height,
            synthetic_width: synth.shape.width,
            synthetic_train_per_class: synth.train_per_class,
            synthetic_test_per_class: synth.test_per_class,
            synthetic_spread: synth.spread,
            synthetic_noise: synth.noise,
            data_seed: 0,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            eval_mode: AnytimeMode::Boundary,
            eval_points: 10,
            checkpoint_every: 0,
            log_every: 0,
        }
    }
}

/// Splits `key=value`; the value is parsed as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides on top, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    pub fn num_classes(&self) -> u32 {
        self.dataset.fixed_class_count().unwrap_or(self.synthetic_classes)
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_units.capacity(self.buffer_m, self.num_classes())
    }

    pub fn augmentation(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            crop_padding: self.crop_padding,
            flip_probability: self.flip_probability,
            enabled: self.augment,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.synthetic_classes,
            shape: ImageShape {
                channels: self.synthetic_channels,
                height: self.synthetic_height,
                width: self.synthetic_width,
            },
            train_per_class: self.synthetic_train_per_class,
            test_per_class: self.synthetic_test_per_class,
            spread: self.synthetic_spread,
            noise: self.synthetic_noise,
        }
    }

    pub fn image_shape(&self) -> ImageShape {
        match self.dataset {
            DatasetId::Synthetic => self.synthetic_spec().shape,
            _ => ImageShape::CIFAR,
        }
    }

    pub fn stream_config(&self, seed: u64) -> StreamConfig {
        StreamConfig::new(
            self.dataset,
            self.num_classes(),
            self.classes_per_task,
            self.batch_size,
            self.augmentation(),
            seed,
            self.class_order,
        )
    }

    pub fn learner_config(&self) -> LearnerConfig {
        let mut c = LearnerConfig::new(self.method);
        c.learning_rate = self.learning_rate;
        c.rehearsal_batch_size = self.rehearsal_batch_size;
        c.byol_temperature = self.byol_temperature.unwrap_or(self.temperature);
        c.ce_temperature = self.ce_temperature.unwrap_or(self.temperature);
        c.ccp_temperature = self.ccp_temperature.unwrap_or(self.temperature);
        c.ema_rate = self.ema_rate;
        c.prototype_momentum = self.prototype_momentum;
        c.prototype_mean = self.prototype_mean;
        c.byol_target = self.byol_target;
        c.ce_reduction = self.ce_reduction;
        c.buffer_capacity = self.buffer_capacity();
        c.buffer_policy = self.buffer_policy;
        c.augment = self.augmentation();
        c.replay_augment = self.replay_augment;
        c
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        let shape = self.image_shape();
        match self.encoder {
            EncoderKind::ReducedResnet18 => EncoderSpec::ReducedResnet18 {
                in_channels: shape.channels,
                widths: self.resnet_widths,
            },
            EncoderKind::Mlp => EncoderSpec::Mlp {
                input_dim: shape.numel(),
                hidden: self.mlp_hidden.clone(),
                batch_norm: self.mlp_batch_norm,
            },
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let head = HeadSpec {
            hidden: self.projector_hidden,
            output: self.projection_dim,
        };
        network_spec(self.method, self.encoder_spec(), head, self.num_classes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.encoder == EncoderKind::ReducedResnet18 && self.dataset == DatasetId::Synthetic && self.synthetic_height < 8 {
            return Err(Error::Config("the residual encoder needs synthetic images of at least 8x8".into()));
        }
        if self.eval_mode == AnytimeMode::Even && self.eval_points == 0 {
            return Err(Error::Config("eval_points must be positive in even mode".into()));
        }
        if self.dataset == DatasetId::Synthetic && self.synthetic_classes == 0 {
            return Err(Error::Config("synthetic_classes must be positive".into()));
        }
        self.stream_config(0).validate()?;
        self.learner_config().validate()?;
        self.network_spec().validate()
    }

    /// Hex digest of everything that determines a run except seeds and output paths.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.output_dir = PathBuf::new();
        canonical.data_dir = PathBuf::new();
        canonical.checkpoint_every = 0;
        canonical.log_every = 0;
        let json = serde_json::to_string(&canonical).expect("run config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }

    /// Directory holding every seed of this configuration.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!(
            "{}-{}-s{}-m{}-{}",
            self.method,
            self.dataset,
            self.classes_per_task,
            self.buffer_m,
            self.config_hash()
        ))
    }
}

/// Named starting points for `run --preset`.
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "cifar10-s1",
        summary: "Split CIFAR-10, one class per task (10 tasks), reduced ResNet-18",
        toml: "dataset = \"cifar10\"\nclasses_per_task = 1\nbuffer_m = 100\nseeds = [0, 1, 2, 3, 4]\n",
    },
    Preset {
        name: "cifar10-s2",
        summary: "Split CIFAR-10, two classes per task (5 tasks), reduced ResNet-18",
        toml: "dataset = \"cifar10\"\nclasses_per_task = 2\nbuffer_m = 100\nseeds = [0, 1, 2, 3, 4]\n",
    },
    Preset {
        name: "cifar100-s1",
        summary: "Split CIFAR-100, one class per task (100 tasks), reduced ResNet-18",
        toml: "dataset = \"cifar100\"\nclasses_per_task = 1\nbuffer_m = 100\nseeds = [0, 1, 2, 3, 4]\n",
    },
    Preset {
        name: "cifar100-s5",
        summary: "Split CIFAR-100, five classes per task (20 tasks), reduced ResNet-18",
        toml: "dataset = \"cifar100\"\nclasses_per_task = 5\nbuffer_m = 100\nseeds = [0, 1, 2, 3, 4]\n",
    },
    Preset {
        name: "synthetic-s1",
        summary: "10 Gaussian-cluster classes, one class per task, small MLP encoder (CPU, seconds)",
        toml: SYNTHETIC_S1,
    },
];

pub const SYNTHETIC_S1: &str = "\
dataset = \"synthetic\"
classes_per_task = 1
augment = false
learning_rate = 0.05
encoder = \"mlp\"
mlp_hidden = [256, 128]
buffer_m = 20
buffer_units = \"per_class\"
synthetic_classes = 10
synthetic_train_per_class = 200
synthetic_test_per_class = 100
synthetic_spread = 0.15
synthetic_noise = 0.15
seeds = [0, 1, 2]
";

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))
}
