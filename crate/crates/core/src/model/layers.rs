use candle_core::{Tensor, Var, D};

use super::params::ParamStore;
use crate::rng::StreamRng;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut StreamRng) -> Result<Self> {
        Ok(Self {
            weight: params.uniform(format!("{name}.weight"), &[output, input], input, rng)?,
            bias: params.uniform(format!("{name}.bias"), &[output], input, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let fan_in = input * kernel * kernel;
        Ok(Self {
            weight: params.uniform(format!("{name}.weight"), &[output, input, kernel, kernel], fan_in, rng)?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?)
    }
}

/// Batch normalization over the channel axis (dim 1) of 2-d or 4-d input.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(params: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: params.constant(format!("{name}.weight"), &[channels], 1.0, true)?,
            beta: params.constant(format!("{name}.bias"), &[channels], 0.0, true)?,
            running_mean: params.constant(format!("{name}.running_mean"), &[channels], 0.0, false)?,
            running_var: params.constant(format!("{name}.running_var"), &[channels], 1.0, false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let view: Vec<usize> = (0..x.rank()).map(|i| if i == 1 { c } else { 1 }).collect();
        let (mean, var) = if train {
            // Move channels last and flatten so statistics are one reduction.
            let flat = if x.rank() == 4 {
                x.permute((0, 2, 3, 1))?.reshape(((), c))?
            } else {
                x.clone()
            };
            let n = flat.dim(0)? as f64;
            let mean = flat.mean(0)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean(0)?;
            let m = self.momentum;
            let unbiased = if n > 1.0 { var.affine(n / (n - 1.0), 0.0)? } else { var.clone() };
            self.running_mean
                .set(&(self.running_mean.as_tensor().affine(1.0 - m, 0.0)? + mean.detach().affine(m, 0.0)?)?)?;
            self.running_var
                .set(&(self.running_var.as_tensor().affine(1.0 - m, 0.0)? + unbiased.detach().affine(m, 0.0)?)?)?;
            (mean, var)
        } else {
            (self.running_mean.as_tensor().detach(), self.running_var.as_tensor().detach())
        };
        let inv = (var + self.eps)?.sqrt()?.recip()?;
        let scale = (inv * self.gamma.as_tensor())?.reshape(view.as_slice())?;
        let shift = self.beta.as_tensor().reshape(view.as_slice())?;
        Ok(x.broadcast_sub(&mean.reshape(view.as_slice())?)?
            .broadcast_mul(&scale)?
            .broadcast_add(&shift)?)
    }
}

/// `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    hidden: Linear,
    output: Linear,
}

impl Mlp {
    pub fn new(params: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut StreamRng) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(params, &format!("{name}.0"), input, hidden, rng)?,
            output: Linear::new(params, &format!("{name}.1"), hidden, output, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.output.forward(&self.hidden.forward(x)?.relu()?)
    }

    pub fn output_layer(&self) -> &Linear {
        &self.output
    }
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}
