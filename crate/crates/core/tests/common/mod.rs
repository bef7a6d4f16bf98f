//! Naive-loop oracles and a finite-difference gradient checker shared by the
//! integration suites.

#![allow(dead_code)]

use poseinfill::graph::{Matrix, PartitionedAdjacency, SkeletonGraph};
use poseinfill::nn::BatchNorm;
use poseinfill::rng::Rng;
use poseinfill::signgcn::SignGcnLayer;
use poseinfill::tensor::{no_grad, Tensor};

/// Dense `(N, C, T, V)` array with plain indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct Arr4 {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub v: usize,
    pub data: Vec<f64>,
}

impl Arr4 {
    pub fn zeros(n: usize, c: usize, t: usize, v: usize) -> Self {
        Arr4 {
            n,
            c,
            t,
            v,
            data: vec![0.0; n * c * t * v],
        }
    }

    pub fn from_tensor(x: &Tensor) -> Self {
        let s = x.shape();
        let (n, c, t, v) = match s.len() {
            3 => (1, s[0], s[1], s[2]),
            4 => (s[0], s[1], s[2], s[3]),
            _ => panic!("expected rank 3 or 4, got {s:?}"),
        };
        Arr4 {
            n,
            c,
            t,
            v,
            data: x.to_vec(),
        }
    }

    fn idx(&self, n: usize, c: usize, t: usize, v: usize) -> usize {
        ((n * self.c + c) * self.t + t) * self.v + v
    }

    pub fn at(&self, n: usize, c: usize, t: usize, v: usize) -> f64 {
        self.data[self.idx(n, c, t, v)]
    }

    pub fn put(&mut self, n: usize, c: usize, t: usize, v: usize, x: f64) {
        let i = self.idx(n, c, t, v);
        self.data[i] = x;
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        assert_eq!(self.data.len(), other.len());
        self.data.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::new(random_vec(rng, shape.iter().product()), shape).unwrap()
}

pub fn random_param(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::param(random_vec(rng, shape.iter().product()), shape).unwrap()
}

/// Random tree on `v` joints with a random center.
pub fn random_tree(rng: &mut Rng, v: usize) -> SkeletonGraph {
    let edges: Vec<(usize, usize)> = (1..v).map(|j| (rng.below(j), j)).collect();
    SkeletonGraph::new(v, &edges, rng.below(v)).unwrap()
}

pub fn matmul_lastdim(x: &Arr4, a: &[f64], u: usize) -> Arr4 {
    let mut out = Arr4::zeros(x.n, x.c, x.t, u);
    for n in 0..x.n {
        for c in 0..x.c {
            for t in 0..x.t {
                for j in 0..u {
                    let mut s = 0.0;
                    for i in 0..x.v {
                        s += x.at(n, c, t, i) * a[i * u + j];
                    }
                    out.put(n, c, t, j, s);
                }
            }
        }
    }
    out
}

pub fn conv1x1(x: &Arr4, w: &[f64], bias: Option<&[f64]>, c_out: usize) -> Arr4 {
    let mut out = Arr4::zeros(x.n, c_out, x.t, x.v);
    for n in 0..x.n {
        for o in 0..c_out {
            for t in 0..x.t {
                for v in 0..x.v {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for i in 0..x.c {
                        s += w[o * x.c + i] * x.at(n, i, t, v);
                    }
                    out.put(n, o, t, v, s);
                }
            }
        }
    }
    out
}

pub fn temporal_conv(x: &Arr4, w: &[f64], bias: Option<&[f64]>, c_out: usize, k: usize, d: usize) -> Arr4 {
    let pad = (d * (k - 1) / 2) as isize;
    let mut out = Arr4::zeros(x.n, c_out, x.t, x.v);
    for n in 0..x.n {
        for o in 0..c_out {
            for t in 0..x.t {
                for v in 0..x.v {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for i in 0..x.c {
                        for j in 0..k {
                            let src = t as isize + (j * d) as isize - pad;
                            if src >= 0 && (src as usize) < x.t {
                                s += w[(o * x.c + i) * k + j] * x.at(n, i, src as usize, v);
                            }
                        }
                    }
                    out.put(n, o, t, v, s);
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &Arr4, k: usize) -> Arr4 {
    let half = k / 2;
    let mut out = Arr4::zeros(x.n, x.c, x.t, x.v);
    for n in 0..x.n {
        for c in 0..x.c {
            for t in 0..x.t {
                for v in 0..x.v {
                    let lo = t.saturating_sub(half);
                    let hi = (t + half).min(x.t - 1);
                    let m = (lo..=hi).map(|s| x.at(n, c, s, v)).fold(f64::NEG_INFINITY, f64::max);
                    out.put(n, c, t, v, m);
                }
            }
        }
    }
    out
}

/// Batch norm with explicit statistics taken from the batch (`training`) or
/// from the running buffers.
pub fn batchnorm(x: &Arr4, bn: &BatchNorm, training: bool) -> Arr4 {
    let gamma = bn.gamma.to_vec();
    let beta = bn.beta.to_vec();
    let eps = bn.stats.eps;
    let count = (x.n * x.t * x.v) as f64;
    let mut out = x.clone();
    for c in 0..x.c {
        let cells = || (0..x.n).flat_map(move |n| (0..x.t).flat_map(move |t| (0..x.v).map(move |v| (n, t, v))));
        let (mean, var) = if training {
            let mean = cells().map(|(n, t, v)| x.at(n, c, t, v)).sum::<f64>() / count;
            let var = cells().map(|(n, t, v)| (x.at(n, c, t, v) - mean).powi(2)).sum::<f64>() / count;
            (mean, var)
        } else {
            (bn.stats.running_mean.to_vec()[c], bn.stats.running_var.to_vec()[c])
        };
        for (n, t, v) in cells() {
            let y = gamma[c] * (x.at(n, c, t, v) - mean) / (var + eps).sqrt() + beta[c];
            out.put(n, c, t, v, y);
        }
    }
    out
}

pub fn relu(x: &Arr4) -> Arr4 {
    let mut out = x.clone();
    out.data.iter_mut().for_each(|y| *y = y.max(0.0));
    out
}

fn concat(parts: &[Arr4]) -> Arr4 {
    let c = parts.iter().map(|p| p.c).sum();
    let (n, t, v) = (parts[0].n, parts[0].t, parts[0].v);
    let mut out = Arr4::zeros(n, c, t, v);
    for s in 0..n {
        let mut base = 0;
        for p in parts {
            for ch in 0..p.c {
                for ti in 0..t {
                    for vi in 0..v {
                        out.put(s, base + ch, ti, vi, p.at(s, ch, ti, vi));
                    }
                }
            }
            base += p.c;
        }
    }
    out
}

fn conv_of(conv: &poseinfill::nn::Conv1x1, x: &Arr4) -> Arr4 {
    let b = conv.bias.as_ref().map(Tensor::to_vec);
    conv1x1(x, &conv.weight.to_vec(), b.as_deref(), conv.c_out())
}

/// `ReLU(BN(Σ_k Σ_i W_k[o,i] Σ_v x[i,t,v] A_k[v,u] + b))`.
pub fn spatial_gcn(layer: &SignGcnLayer, x: &Arr4, adj: &[Matrix; 3], training: bool) -> Arr4 {
    let c_out = layer.config.c_out;
    let mut acc = Arr4::zeros(x.n, c_out, x.t, x.v);
    for (k, a) in adj.iter().enumerate() {
        let w = layer.spatial[k].weight.to_vec();
        let bias = layer.spatial[k].bias.as_ref().map(Tensor::to_vec);
        for n in 0..x.n {
            for o in 0..c_out {
                for t in 0..x.t {
                    for u in 0..x.v {
                        let mut s = bias.as_ref().map_or(0.0, |b| b[o]);
                        for i in 0..x.c {
                            for v in 0..x.v {
                                s += w[o * x.c + i] * x.at(n, i, t, v) * a.get(v, u);
                            }
                        }
                        let cur = acc.at(n, o, t, u);
                        acc.put(n, o, t, u, cur + s);
                    }
                }
            }
        }
    }
    relu(&batchnorm(&acc, &layer.spatial_bn, training))
}

pub fn multiscale_tcn(layer: &SignGcnLayer, f: &Arr4, training: bool) -> Arr4 {
    let k = layer.config.temporal_kernel;
    let q = layer.config.c_out / 4;
    let red: Vec<Arr4> = layer.reduce.iter().map(|c| conv_of(c, f)).collect();
    let tconv = |i: usize, x: &Arr4| {
        let tc = &layer.temporal[i];
        temporal_conv(x, &tc.weight.to_vec(), Some(&tc.bias.to_vec()), q, k, tc.dilation)
    };
    let b1 = red[0].clone();
    let b2 = tconv(0, &red[1]);
    let b3 = tconv(1, &red[2]);
    let b4 = maxpool(&red[3], 3);
    relu(&batchnorm(&concat(&[b1, b2, b3, b4]), &layer.tcn_bn, training))
}

/// Randomizes batch-norm affine parameters and running statistics so the
/// oracles exercise every term.
pub fn perturb_batchnorm(bn: &BatchNorm, rng: &mut Rng) {
    let c = bn.gamma.numel();
    bn.gamma.assign(&(0..c).map(|_| rng.uniform_range(0.5, 1.5)).collect::<Vec<_>>()).unwrap();
    bn.beta.assign(&random_vec(rng, c)).unwrap();
    bn.stats.running_mean.assign(&random_vec(rng, c)).unwrap();
    bn.stats
        .running_var
        .assign(&(0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect::<Vec<_>>())
        .unwrap();
}

/// Randomizes every bias (zero at init) of a Sign-GCN layer.
pub fn perturb_layer(layer: &SignGcnLayer, rng: &mut Rng) {
    perturb_batchnorm(&layer.spatial_bn, rng);
    perturb_batchnorm(&layer.tcn_bn, rng);
    for conv in layer.spatial.iter().chain(&layer.reduce) {
        if let Some(b) = &conv.bias {
            b.assign(&random_vec(rng, b.numel())).unwrap();
        }
    }
    for tc in &layer.temporal {
        tc.bias.assign(&random_vec(rng, tc.bias.numel())).unwrap();
    }
}

/// Norm-wise relative error between the autodiff gradient of `f` and its
/// central finite difference with step `h`, taken over every element of
/// every input.
pub fn gradcheck(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> Tensor, h: f64) -> f64 {
    inputs.iter().for_each(Tensor::zero_grad);
    let loss = f(inputs);
    loss.backward().unwrap();
    let mut analytic = Vec::new();
    for x in inputs {
        analytic.extend(x.grad().unwrap_or_else(|| vec![0.0; x.numel()]));
    }
    let mut numeric = Vec::new();
    no_grad(|| {
        for x in inputs {
            for i in 0..x.numel() {
                let orig = x.data()[i];
                x.data_mut()[i] = orig + h;
                let up = f(inputs).item();
                x.data_mut()[i] = orig - h;
                let down = f(inputs).item();
                x.data_mut()[i] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
    });
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Scalar probe `Σ out ⊙ r` with a fixed random `r`, so every output element
/// contributes a distinct weight to the gradient.
pub fn probe(out: &Tensor, r: &Tensor) -> Tensor {
    out.mul(r).unwrap().sum().unwrap()
}

pub type Loss = Box<dyn Fn(&[Tensor]) -> Tensor>;

/// One gradient check: differentiable inputs and the scalar function of them.
pub struct GradCase {
    pub inputs: Vec<Tensor>,
    pub f: Loss,
}

fn case(inputs: Vec<Tensor>, f: impl Fn(&[Tensor]) -> Tensor + 'static) -> GradCase {
    GradCase {
        inputs,
        f: Box::new(f),
    }
}

/// Every differentiable operation, each as a builder of one random instance.
pub fn gradient_ops() -> Vec<(&'static str, fn(&mut Rng) -> GradCase)> {
    fn shape(rng: &mut Rng) -> [usize; 4] {
        [1 + rng.below(2), 1 + rng.below(3), 2 + rng.below(4), 1 + rng.below(4)]
    }
    vec![
        ("add", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s), random_param(rng, &s)], move |x| probe(&x[0].add(&x[1]).unwrap(), &r))
        }),
        ("add_broadcast", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s), random_param(rng, &[s[1], 1, 1])], move |x| {
                probe(&x[0].add(&x[1]).unwrap(), &r)
            })
        }),
        ("sub", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s), random_param(rng, &s)], move |x| probe(&x[0].sub(&x[1]).unwrap(), &r))
        }),
        ("mul", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s), random_param(rng, &s)], move |x| probe(&x[0].mul(&x[1]).unwrap(), &r))
        }),
        ("mul_broadcast", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s), random_param(rng, &[s[2], s[3]])], move |x| {
                probe(&x[0].mul(&x[1]).unwrap(), &r)
            })
        }),
        ("scale", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            let k = rng.uniform_range(-3.0, 3.0);
            case(vec![random_param(rng, &s)], move |x| probe(&x[0].scale(k).unwrap(), &r))
        }),
        ("relu", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &s);
            case(vec![random_param(rng, &s)], move |x| probe(&x[0].relu().unwrap(), &r))
        }),
        ("sum", |rng| {
            let s = shape(rng);
            case(vec![random_param(rng, &s)], |x| x[0].mul(&x[0]).unwrap().sum().unwrap())
        }),
        ("mean", |rng| {
            let s = shape(rng);
            case(vec![random_param(rng, &s)], |x| x[0].mul(&x[0]).unwrap().mean().unwrap())
        }),
        ("mean_abs", |rng| {
            let s = shape(rng);
            case(vec![random_param(rng, &s), random_param(rng, &s)], |x| x[0].mean_abs(&x[1]).unwrap())
        }),
        ("mean_abs_weighted", |rng| {
            let s = shape(rng);
            let n: usize = s.iter().product();
            let w: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { rng.uniform() + 0.1 }).collect();
            case(vec![random_param(rng, &s), random_param(rng, &s)], move |x| {
                x[0].mean_abs_weighted(&x[1], &w).unwrap()
            })
        }),
        ("reshape", |rng| {
            let s = shape(rng);
            let r = random_tensor(rng, &[s[0] * s[1], s[2] * s[3]]);
            case(vec![random_param(rng, &s)], move |x| {
                probe(&x[0].reshape(&[s[0] * s[1], s[2] * s[3]]).unwrap(), &r)
            })
        }),
        ("concat_channels", |rng| {
            let [n, c, t, v] = shape(rng);
            let c2 = 1 + rng.below(3);
            let r = random_tensor(rng, &[n, c + c2, t, v]);
            case(vec![random_param(rng, &[n, c, t, v]), random_param(rng, &[n, c2, t, v])], move |x| {
                probe(&Tensor::concat_channels(x).unwrap(), &r)
            })
        }),
        ("stack", |rng| {
            let [_, c, t, v] = shape(rng);
            let r = random_tensor(rng, &[3, c, t, v]);
            let inputs = (0..3).map(|_| random_param(rng, &[c, t, v])).collect();
            case(inputs, move |x| probe(&Tensor::stack(x).unwrap(), &r))
        }),
        ("matmul_lastdim", |rng| {
            let [n, c, t, v] = shape(rng);
            let u = 1 + rng.below(4);
            let r = random_tensor(rng, &[n, c, t, u]);
            case(vec![random_param(rng, &[n, c, t, v]), random_param(rng, &[v, u])], move |x| {
                probe(&x[0].matmul_lastdim(&x[1]).unwrap(), &r)
            })
        }),
        ("conv1x1", |rng| {
            let [n, c, t, v] = shape(rng);
            let o = 1 + rng.below(4);
            let r = random_tensor(rng, &[n, o, t, v]);
            let inputs = vec![random_param(rng, &[n, c, t, v]), random_param(rng, &[o, c]), random_param(rng, &[o])];
            case(inputs, move |x| probe(&x[0].conv1x1(&x[1], Some(&x[2])).unwrap(), &r))
        }),
        ("temporal_conv_d1", |rng| temporal_case(rng, 1)),
        ("temporal_conv_d2", |rng| temporal_case(rng, 2)),
        ("maxpool_temporal", |rng| {
            let [n, c, _, v] = shape(rng);
            let t = 4 + rng.below(6);
            let r = random_tensor(rng, &[n, c, t, v]);
            case(vec![random_param(rng, &[n, c, t, v])], move |x| probe(&x[0].maxpool_temporal(3).unwrap(), &r))
        }),
        ("batchnorm_train", |rng| batchnorm_case(rng, true)),
        ("batchnorm_eval", |rng| batchnorm_case(rng, false)),
        ("signgcn_layer", |rng| {
            use poseinfill::nn::{Mode, Module};
            use poseinfill::signgcn::SignGcnConfig;
            let v = 2 + rng.below(4);
            let g = random_tree(rng, v);
            let adj = PartitionedAdjacency::new(&g);
            let (c_in, c_out) = (1 + rng.below(3), 4);
            let layer = SignGcnLayer::new(SignGcnConfig::new(c_in, c_out).with_temporal(3, 2), rng).unwrap();
            perturb_layer(&layer, rng);
            let t = 3 + rng.below(4);
            let r = random_tensor(rng, &[2, c_out, t, v]);
            let mut inputs = vec![random_param(rng, &[2, c_in, t, v])];
            inputs.extend(layer.parameters());
            case(inputs, move |x| probe(&layer.forward(&x[0], &adj, Mode::Train).unwrap(), &r))
        }),
    ]
}

fn temporal_case(rng: &mut Rng, d: usize) -> GradCase {
    let (n, c, v) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
    let t = 3 + rng.below(12);
    let (o, k) = (1 + rng.below(3), 7);
    let r = random_tensor(rng, &[n, o, t, v]);
    let inputs = vec![random_param(rng, &[n, c, t, v]), random_param(rng, &[o, c, k]), random_param(rng, &[o])];
    case(inputs, move |x| probe(&x[0].temporal_conv(&x[1], Some(&x[2]), d).unwrap(), &r))
}

fn batchnorm_case(rng: &mut Rng, training: bool) -> GradCase {
    let (n, c, t, v) = (1 + rng.below(3), 1 + rng.below(3), 2 + rng.below(3), 1 + rng.below(3));
    let bn = BatchNorm::new(c);
    perturb_batchnorm(&bn, rng);
    let r = random_tensor(rng, &[n, c, t, v]);
    let inputs = vec![random_param(rng, &[n, c, t, v]), bn.gamma.clone(), bn.beta.clone()];
    let stats = bn.stats.clone();
    case(inputs, move |x| probe(&x[0].batchnorm(&x[1], &x[2], &stats, training).unwrap(), &r))
}

/// Worst relative error of one operation over `points` random instances.
pub fn check_gradient(build: fn(&mut Rng) -> GradCase, points: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..points)
        .map(|_| {
            let c = build(&mut rng);
            gradcheck(&c.inputs, &*c.f, GRAD_STEP)
        })
        .fold(0.0, f64::max)
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_POINTS: usize = 10;

pub const ORACLE_TOL: f64 = 1e-12;
pub const ORACLE_INSTANCES: usize = 20;

/// Worst absolute deviation from the naive oracle of each operation over
/// `instances` random instances.
pub fn oracle_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use poseinfill::nn::Mode;
    use poseinfill::signgcn::SignGcnConfig;

    let mut rng = Rng::new(seed);
    let mut worst = vec![
        ("matmul_lastdim", 0.0f64),
        ("conv1x1", 0.0),
        ("temporal_conv_d1", 0.0),
        ("temporal_conv_d2", 0.0),
        ("maxpool_temporal", 0.0),
        ("spatial_gcn", 0.0),
        ("multiscale_tcn", 0.0),
    ];
    let mut record = |slot: usize, err: f64| worst[slot].1 = worst[slot].1.max(err);
    for i in 0..instances {
        let batched = i % 2 == 0;
        let (n, c, t, v) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(20), 1 + rng.below(13));
        let shape: Vec<usize> = if batched { vec![n, c, t, v] } else { vec![c, t, v] };
        let x = random_tensor(&mut rng, &shape);
        let xa = Arr4::from_tensor(&x);

        let u = 1 + rng.below(13);
        let a = random_vec(&mut rng, v * u);
        let got = x.matmul_lastdim(&Tensor::new(a.clone(), &[v, u]).unwrap()).unwrap();
        record(0, matmul_lastdim(&xa, &a, u).max_abs_diff(&got.to_vec()));

        let o = 1 + rng.below(8);
        let w = random_vec(&mut rng, o * c);
        let b = random_vec(&mut rng, o);
        let wt = Tensor::new(w.clone(), &[o, c]).unwrap();
        let bt = Tensor::new(b.clone(), &[o]).unwrap();
        let with_bias = i % 3 != 0;
        let got = x.conv1x1(&wt, with_bias.then_some(&bt)).unwrap();
        record(1, conv1x1(&xa, &w, with_bias.then_some(&b[..]), o).max_abs_diff(&got.to_vec()));

        for (slot, d) in [(2, 1), (3, 2)] {
            let k = 7;
            let w = random_vec(&mut rng, o * c * k);
            let wt = Tensor::new(w.clone(), &[o, c, k]).unwrap();
            let got = x.temporal_conv(&wt, with_bias.then_some(&bt), d).unwrap();
            let want = temporal_conv(&xa, &w, with_bias.then_some(&b[..]), o, k, d);
            record(slot, want.max_abs_diff(&got.to_vec()));
        }

        let window = [1, 3, 5][rng.below(3)];
        let got = x.maxpool_temporal(window).unwrap();
        record(4, maxpool(&xa, window).max_abs_diff(&got.to_vec()));

        let joints = 1 + rng.below(12);
        let g = random_tree(&mut rng, joints);
        let adj = PartitionedAdjacency::new(&g);
        let (c_in, c_out) = (1 + rng.below(6), 4 * (1 + rng.below(3)));
        let k = [3, 5, 7][rng.below(3)];
        let layer = SignGcnLayer::new(SignGcnConfig::new(c_in, c_out).with_temporal(k, 1 + rng.below(2)), &mut rng).unwrap();
        perturb_layer(&layer, &mut rng);
        let mut gshape = shape.clone();
        let rank = gshape.len();
        gshape[rank - 3] = c_in;
        gshape[rank - 1] = joints;
        let gx = random_tensor(&mut rng, &gshape);
        let gxa = Arr4::from_tensor(&gx);
        let mode = if i % 4 < 2 { Mode::Eval } else { Mode::Train };
        let got = no_grad(|| layer.spatial_gcn(&gx, &adj, mode).unwrap());
        let want = spatial_gcn(&layer, &gxa, &adj.matrices, mode.training());
        record(5, want.max_abs_diff(&got.to_vec()));

        let f = Arr4::from_tensor(&got);
        let got = no_grad(|| layer.multiscale_tcn(&got, mode).unwrap());
        record(6, multiscale_tcn(&layer, &f, mode.training()).max_abs_diff(&got.to_vec()));
    }
    worst
}
