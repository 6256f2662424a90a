use candle_core::Tensor;

use super::layers::{global_avg_pool, BatchNorm, Conv2d};
use super::params::ParamStore;
use crate::rng::StreamRng;
use crate::Result;

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    shortcut: Option<(Conv2d, BatchNorm)>,
}

impl BasicBlock {
    fn new(params: &mut ParamStore, name: &str, input: usize, output: usize, stride: usize, rng: &mut StreamRng) -> Result<Self> {
        let shortcut = if stride != 1 || input != output {
            Some((
                Conv2d::new(params, &format!("{name}.shortcut.0"), input, output, 1, stride, 0, rng)?,
                BatchNorm::new(params, &format!("{name}.shortcut.1"), output)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(params, &format!("{name}.conv1"), input, output, 3, stride, 1, rng)?,
            bn1: BatchNorm::new(params, &format!("{name}.bn1"), output)?,
            conv2: Conv2d::new(params, &format!("{name}.conv2"), output, output, 3, 1, 1, rng)?,
            bn2: BatchNorm::new(params, &format!("{name}.bn2"), output)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// ResNet-18 layout (2-2-2-2 basic blocks) at reduced width, for 32x32 inputs.
#[derive(Debug, Clone)]
pub struct ReducedResNet18 {
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<BasicBlock>,
}

impl ReducedResNet18 {
    pub fn new(params: &mut ParamStore, name: &str, in_channels: usize, widths: [usize; 4], rng: &mut StreamRng) -> Result<Self> {
        let stem = Conv2d::new(params, &format!("{name}.stem"), in_channels, widths[0], 3, 1, 1, rng)?;
        let stem_bn = BatchNorm::new(params, &format!("{name}.stem_bn"), widths[0])?;
        let mut blocks = Vec::with_capacity(8);
        let mut prev = widths[0];
        for (stage, &w) in widths.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(params, &format!("{name}.layer{}.0", stage + 1), prev, w, stride, rng)?);
            blocks.push(BasicBlock::new(params, &format!("{name}.layer{}.1", stage + 1), w, w, 1, rng)?);
            prev = w;
        }
        Ok(Self { stem, stem_bn, blocks })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = self.stem_bn.forward(&self.stem.forward(x)?, train)?.relu()?;
        for b in &self.blocks {
            h = b.forward(&h, train)?;
        }
        global_avg_pool(&h)
    }
}
