//! Parameterized layers shared by the encoder, decoder and denoiser.

use crate::rng::Rng;
use crate::tensor::{BatchNormStats, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn training(self) -> bool {
        self == Mode::Train
    }
}

pub trait Module {
    /// Trainable tensors in a fixed order.
    fn parameters(&self) -> Vec<Tensor>;

    /// Every persistent tensor (parameters and running statistics) under a
    /// stable dotted name.
    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>);

    fn all_named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.named_tensors("", &mut out);
        out
    }

    /// Batch-norm layers in a fixed order.
    fn batchnorms(&self) -> Vec<&BatchNorm> {
        Vec::new()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Sets every trainable parameter of `m` to zero.
pub fn zero_parameters(m: &impl Module) {
    for p in m.parameters() {
        p.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
}

fn uniform_param(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::param(data, shape).expect("finite init")
}

/// Pointwise (1x1) convolution; also serves as a linear layer on `(N,C,1,1)`.
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Conv1x1 {
    pub fn new(c_in: usize, c_out: usize, bias: bool, rng: &mut Rng) -> Self {
        Conv1x1 {
            weight: uniform_param(&[c_out, c_in], c_in, rng),
            bias: bias.then(|| Tensor::param(vec![0.0; c_out], &[c_out]).unwrap()),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv1x1(&self.weight, self.bias.as_ref())
    }
}

impl Module for Conv1x1 {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.weight.clone()];
        p.extend(self.bias.clone());
        p
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalConv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl TemporalConv {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, dilation: usize, rng: &mut Rng) -> Self {
        TemporalConv {
            weight: uniform_param(&[c_out, c_in, kernel], c_in * kernel, rng),
            bias: Tensor::param(vec![0.0; c_out], &[c_out]).unwrap(),
            dilation,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.temporal_conv(&self.weight, Some(&self.bias), self.dilation)
    }
}

impl Module for TemporalConv {
    fn parameters(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: BatchNormStats,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(vec![1.0; channels], &[channels]).unwrap(),
            beta: Tensor::param(vec![0.0; channels], &[channels]).unwrap(),
            stats: BatchNormStats::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        x.batchnorm(&self.gamma, &self.beta, &self.stats, mode.training())
    }
}

impl Module for BatchNorm {
    fn parameters(&self) -> Vec<Tensor> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    fn batchnorms(&self) -> Vec<&BatchNorm> {
        vec![self]
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
        out.push((join(prefix, "running_mean"), self.stats.running_mean.clone()));
        out.push((join(prefix, "running_var"), self.stats.running_var.clone()));
    }
}
