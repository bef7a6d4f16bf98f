//! Per-channel batch normalization over `(N, T, V)`.

use std::cell::Cell;

use super::{nctv, Result, Tensor, TensorError};

/// Running statistics of one batch-norm layer. `momentum` is the weight kept
/// by the old running value at each update; it can be changed between
/// updates, e.g. to accumulate a plain average.
#[derive(Debug, Clone)]
pub struct BatchNormStats {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: Cell<f64>,
    pub eps: f64,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: Cell::new(0.9),
            eps: 1e-5,
        }
    }
}

impl Tensor {
    /// Training mode normalizes with the batch statistics and folds them into
    /// `stats`; eval mode uses the running statistics.
    pub fn batchnorm(&self, gamma: &Tensor, beta: &Tensor, stats: &BatchNormStats, training: bool) -> Result<Tensor> {
        const OP: &str = "batchnorm";
        let (n, c, t, v) = nctv(OP, self.shape())?;
        for p in [gamma, beta, &stats.running_mean, &stats.running_var] {
            if p.shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let plane = t * v;
        let count = (n * plane) as f64;
        let x = self.data();
        let (mean, var) = if training {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let start = (s * c + ch) * plane;
                    mean[ch] += x[start..start + plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for s in 0..n {
                for ch in 0..c {
                    let start = (s * c + ch) * plane;
                    let mu = mean[ch];
                    var[ch] += x[start..start + plane].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|s| *s /= count);
            (mean, var)
        } else {
            (stats.running_mean.to_vec(), stats.running_var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let (gm, bt) = (gamma.to_vec(), beta.to_vec());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let start = (s * c + ch) * plane;
                for i in start..start + plane {
                    let h = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gm[ch] * h + bt[ch];
                }
            }
        }
        drop(x);
        if training {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = stats.momentum.get();
            let mut rm = stats.running_mean.data_mut();
            let mut rv = stats.running_var.data_mut();
            for ch in 0..c {
                rm[ch] = m * rm[ch] + (1.0 - m) * mean[ch];
                rv[ch] = m * rv[ch] + (1.0 - m) * var[ch] * unbias;
            }
        }
        Tensor::from_op(OP, out, self.shape().to_vec(), &[self, gamma, beta], move |g, needs| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let start = (s * c + ch) * plane;
                    for i in start..start + plane {
                        sum_g[ch] += g[i];
                        sum_gx[ch] += g[i] * xhat[i];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                for s in 0..n {
                    for ch in 0..c {
                        let start = (s * c + ch) * plane;
                        let k = gm[ch] * inv_std[ch];
                        for i in start..start + plane {
                            gx[i] = if training {
                                k * (g[i] - sum_g[ch] / count - xhat[i] * sum_gx[ch] / count)
                            } else {
                                k * g[i]
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
        })
    }
}
