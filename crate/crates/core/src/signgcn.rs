//! The Sign-GCN block: partitioned spatial graph convolution, a four-branch
//! multi-scale temporal network, and a residual sum.
//!
//! ```text
//! f_out = ReLU(BN(Σ_k (f_in · A_k) W_k))
//! y     = ReLU(BN(concat(b1, b2, b3, b4)(f_out))) + residual(f_in)
//! ```
//!
//! Branches: `b1` is a 1x1 reduction to `C_out/4`; `b2`/`b3` add a temporal
//! convolution with dilation 1 and `d`; `b4` adds a 3-frame max pool.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PartitionedAdjacency;
use crate::nn::{join, BatchNorm, Conv1x1, Mode, Module, TemporalConv};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Number of spatial kernels (root, centripetal, centrifugal).
pub const SPATIAL_KERNELS: usize = 3;
const POOL_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignGcnConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub temporal_kernel: usize,
    pub dilation: usize,
}

impl SignGcnConfig {
    pub fn new(c_in: usize, c_out: usize) -> Self {
        SignGcnConfig {
            c_in,
            c_out,
            temporal_kernel: 7,
            dilation: 2,
        }
    }

    pub fn with_temporal(mut self, kernel: usize, dilation: usize) -> Self {
        self.temporal_kernel = kernel;
        self.dilation = dilation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.c_out % 4 != 0 {
            return Err(Error::Config(format!(
                "output channels {} are not divisible into four branches",
                self.c_out
            )));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel {} must be odd",
                self.temporal_kernel
            )));
        }
        if self.dilation == 0 {
            return Err(Error::Config("dilation must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SignGcnLayer {
    pub config: SignGcnConfig,
    /// One channel-mixing kernel per adjacency partition; only the first
    /// carries a bias.
    pub spatial: [Conv1x1; SPATIAL_KERNELS],
    pub spatial_bn: BatchNorm,
    /// 1x1 reductions to `C_out/4`, one per branch.
    pub reduce: [Conv1x1; 4],
    /// Temporal convolutions for branches 2 (dilation 1) and 3 (dilation `d`).
    pub temporal: [TemporalConv; 2],
    pub tcn_bn: BatchNorm,
    /// `None` means identity (`c_in == c_out`).
    pub residual: Option<Conv1x1>,
}

impl SignGcnLayer {
    pub fn new(config: SignGcnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let SignGcnConfig {
            c_in,
            c_out,
            temporal_kernel: k,
            dilation,
        } = config;
        let quarter = c_out / 4;
        let spatial = [
            Conv1x1::new(c_in, c_out, true, rng),
            Conv1x1::new(c_in, c_out, false, rng),
            Conv1x1::new(c_in, c_out, false, rng),
        ];
        let reduce = std::array::from_fn(|_| Conv1x1::new(c_out, quarter, true, rng));
        let temporal = [
            TemporalConv::new(quarter, quarter, k, 1, rng),
            TemporalConv::new(quarter, quarter, k, dilation, rng),
        ];
        let residual = (c_in != c_out).then(|| Conv1x1::new(c_in, c_out, true, rng));
        Ok(SignGcnLayer {
            config,
            spatial,
            spatial_bn: BatchNorm::new(c_out),
            reduce,
            temporal,
            tcn_bn: BatchNorm::new(c_out),
            residual,
        })
    }

    fn check_joints(&self, x: &Tensor, adj: &PartitionedAdjacency) -> Result<()> {
        let v = *x.shape().last().unwrap();
        if v != adj.num_joints() {
            return Err(Error::JointMismatch {
                expected: adj.num_joints(),
                found: v,
            });
        }
        Ok(())
    }

    /// `Σ_k (f_in · A_k) W_k` before normalization.
    pub fn spatial_aggregate(&self, x: &Tensor, adj: &PartitionedAdjacency) -> Result<Tensor> {
        self.check_joints(x, adj)?;
        let mut acc: Option<Tensor> = None;
        for (conv, a) in self.spatial.iter().zip(adj.tensors()) {
            let term = conv.forward(&x.matmul_lastdim(a)?)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => prev.add(&term)?,
            });
        }
        Ok(acc.expect("three partitions"))
    }

    pub fn spatial_gcn(&self, x: &Tensor, adj: &PartitionedAdjacency, mode: Mode) -> Result<Tensor> {
        let agg = self.spatial_aggregate(x, adj)?;
        Ok(self.spatial_bn.forward(&agg, mode)?.relu()?)
    }

    /// The four concatenated branches before normalization.
    pub fn tcn_branches(&self, f: &Tensor) -> Result<Tensor> {
        let b1 = self.reduce[0].forward(f)?;
        let b2 = self.temporal[0].forward(&self.reduce[1].forward(f)?)?;
        let b3 = self.temporal[1].forward(&self.reduce[2].forward(f)?)?;
        let b4 = self.reduce[3].forward(f)?.maxpool_temporal(POOL_WINDOW)?;
        Ok(Tensor::concat_channels(&[b1, b2, b3, b4])?)
    }

    pub fn multiscale_tcn(&self, f: &Tensor, mode: Mode) -> Result<Tensor> {
        let channels = f.shape()[f.shape().len() - 3];
        if channels != self.config.c_out {
            return Err(Error::Config(format!(
                "temporal network expects {} channels, got {channels}",
                self.config.c_out
            )));
        }
        let cat = self.tcn_branches(f)?;
        Ok(self.tcn_bn.forward(&cat, mode)?.relu()?)
    }

    pub fn forward(&self, x: &Tensor, adj: &PartitionedAdjacency, mode: Mode) -> Result<Tensor> {
        let f_out = self.spatial_gcn(x, adj, mode)?;
        let temporal = self.multiscale_tcn(&f_out, mode)?;
        let res = match &self.residual {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(temporal.add(&res)?)
    }
}

impl Module for SignGcnLayer {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        self.spatial.iter().for_each(|c| p.extend(c.parameters()));
        p.extend(self.spatial_bn.parameters());
        self.reduce.iter().for_each(|c| p.extend(c.parameters()));
        self.temporal.iter().for_each(|c| p.extend(c.parameters()));
        p.extend(self.tcn_bn.parameters());
        if let Some(r) = &self.residual {
            p.extend(r.parameters());
        }
        p
    }

    fn batchnorms(&self) -> Vec<&BatchNorm> {
        vec![&self.spatial_bn, &self.tcn_bn]
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (k, c) in self.spatial.iter().enumerate() {
            c.named_tensors(&join(prefix, &format!("spatial{k}")), out);
        }
        self.spatial_bn.named_tensors(&join(prefix, "spatial_bn"), out);
        for (k, c) in self.reduce.iter().enumerate() {
            c.named_tensors(&join(prefix, &format!("branch{k}.reduce")), out);
        }
        for (k, c) in self.temporal.iter().enumerate() {
            c.named_tensors(&join(prefix, &format!("branch{}.temporal", k + 1)), out);
        }
        self.tcn_bn.named_tensors(&join(prefix, "tcn_bn"), out);
        if let Some(r) = &self.residual {
            r.named_tensors(&join(prefix, "residual"), out);
        }
    }
}
