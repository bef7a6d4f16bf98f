//! Sign-GCN encoder/decoder pre-trained to reconstruct pose sequences.
//!
//! The encoder lifts `3 → 8` channels with a pointwise linear map and batch
//! norm, then runs the Sign-GCN ladder `8 → 16 → 64 → 128`. The decoder runs
//! `128 → 64 → 16 → 16` and maps back to coordinates with a linear `16 → 3`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonGraph};
use crate::nn::{join, BatchNorm, Conv1x1, Mode, Module};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::pose::{Normalization, PoseSequence};
use crate::rng::Rng;
use crate::signgcn::{SignGcnConfig, SignGcnLayer};
use crate::tensor::{no_grad, Tensor};

pub const COORDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    /// Lifted width followed by the encoder's Sign-GCN output widths.
    pub encoder_ladder: Vec<usize>,
    /// Latent width followed by the decoder's Sign-GCN output widths.
    pub decoder_ladder: Vec<usize>,
    pub temporal_kernel: usize,
    pub dilation: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            encoder_ladder: vec![8, 16, 64, 128],
            decoder_ladder: vec![128, 64, 16, 16],
            temporal_kernel: 7,
            dilation: 2,
        }
    }
}

impl AutoencoderConfig {
    pub fn latent_channels(&self) -> usize {
        *self.encoder_ladder.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_ladder.len() < 2 || self.decoder_ladder.len() < 2 {
            return Err(Error::Config("encoder and decoder need at least one layer each".into()));
        }
        if self.decoder_ladder[0] != self.latent_channels() {
            return Err(Error::Config(format!(
                "decoder starts at {} channels but the latent has {}",
                self.decoder_ladder[0],
                self.latent_channels()
            )));
        }
        Ok(())
    }

    fn layer(&self, c_in: usize, c_out: usize) -> SignGcnConfig {
        SignGcnConfig::new(c_in, c_out).with_temporal(self.temporal_kernel, self.dilation)
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    graph: SkeletonGraph,
    adjacency: PartitionedAdjacency,
    pub lift: Conv1x1,
    pub lift_bn: BatchNorm,
    pub encoder: Vec<SignGcnLayer>,
    pub decoder: Vec<SignGcnLayer>,
    pub output: Conv1x1,
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig, graph: SkeletonGraph, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let enc = &config.encoder_ladder;
        let dec = &config.decoder_ladder;
        let lift = Conv1x1::new(COORDS, enc[0], true, rng);
        let encoder = enc
            .windows(2)
            .map(|w| SignGcnLayer::new(config.layer(w[0], w[1]), rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = dec
            .windows(2)
            .map(|w| SignGcnLayer::new(config.layer(w[0], w[1]), rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Conv1x1::new(*dec.last().unwrap(), COORDS, true, rng);
        Ok(Autoencoder {
            lift_bn: BatchNorm::new(enc[0]),
            adjacency: PartitionedAdjacency::new(&graph),
            graph,
            config,
            lift,
            encoder,
            decoder,
            output,
        })
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn adjacency(&self) -> &PartitionedAdjacency {
        &self.adjacency
    }

    pub fn latent_channels(&self) -> usize {
        self.config.latent_channels()
    }

    fn check_input(&self, x: &Tensor, channels: usize) -> Result<()> {
        let shape = x.shape();
        if shape.len() < 3 || shape.len() > 4 {
            return Err(Error::Invalid(format!("expected (C,T,V) or (N,C,T,V), got {shape:?}")));
        }
        let v = shape[shape.len() - 1];
        if v != self.graph.num_joints() {
            return Err(Error::JointMismatch {
                expected: self.graph.num_joints(),
                found: v,
            });
        }
        let c = shape[shape.len() - 3];
        if c != channels {
            return Err(Error::Invalid(format!("expected {channels} channels, got {c}")));
        }
        Ok(())
    }

    /// `(3,T,V)` or `(N,3,T,V)` coordinates to `(128,T,V)` latents.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x, COORDS)?;
        let mut h = self.lift_bn.forward(&self.lift.forward(x)?, mode)?;
        for layer in &self.encoder {
            h = layer.forward(&h, &self.adjacency, mode)?;
        }
        Ok(h)
    }

    pub fn decode(&self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(z, self.latent_channels())?;
        let mut h = z.clone();
        for layer in &self.decoder {
            h = layer.forward(&h, &self.adjacency, mode)?;
        }
        Ok(self.output.forward(&h)?)
    }

    pub fn reconstruct(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.decode(&self.encode(x, mode)?, mode)
    }
}

impl Module for Autoencoder {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.lift.parameters();
        p.extend(self.lift_bn.parameters());
        self.encoder.iter().for_each(|l| p.extend(l.parameters()));
        self.decoder.iter().for_each(|l| p.extend(l.parameters()));
        p.extend(self.output.parameters());
        p
    }

    fn batchnorms(&self) -> Vec<&BatchNorm> {
        let mut b = vec![&self.lift_bn];
        self.encoder.iter().chain(&self.decoder).for_each(|l| b.extend(l.batchnorms()));
        b
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.lift.named_tensors(&join(prefix, "lift"), out);
        self.lift_bn.named_tensors(&join(prefix, "lift_bn"), out);
        for (i, l) in self.encoder.iter().enumerate() {
            l.named_tensors(&join(prefix, &format!("encoder{i}")), out);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            l.named_tensors(&join(prefix, &format!("decoder{i}")), out);
        }
        self.output.named_tensors(&join(prefix, "output"), out);
    }
}

/// `L_rst`: mean absolute error over all `3·T·V` coordinates.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    Ok(x_hat.mean_abs(x)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequences are randomly cropped (or padded by repeating the last frame,
    /// with the padding excluded from the loss) to this length.
    pub crop_frames: usize,
    pub adam: AdamConfig,
    /// Decay of `adam.lr` over all updates of the run.
    pub lr_schedule: LrSchedule,
    /// Final learning rate as a fraction of `adam.lr`.
    pub lr_floor: f64,
    /// Decay of the running average of the weights that is evaluated after
    /// each epoch and kept at the end; 0 keeps the raw weights.
    pub weight_average: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 50,
            batch_size: 8,
            crop_frames: 60,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Cosine,
            lr_floor: 0.01,
            weight_average: 0.99,
        }
    }
}

/// Stacks crops of `seqs` into `(N,3,T,V)` plus per-element loss weights
/// (`None` when nothing was padded).
pub(crate) fn make_batch(seqs: &[&PoseSequence], crop: usize, rng: &mut Rng) -> (Tensor, Option<Vec<f64>>) {
    let joints = seqs[0].joints();
    let plane = crop * joints;
    let mut data = Vec::with_capacity(seqs.len() * COORDS * plane);
    let mut weights = Vec::with_capacity(seqs.len() * COORDS * plane);
    let mut padded = false;
    for s in seqs {
        let start = if s.frames() > crop { rng.below(s.frames() - crop + 1) } else { 0 };
        let valid = (s.frames() - start).min(crop);
        padded |= valid < crop;
        for axis in 0..COORDS {
            for t in 0..crop {
                let src = start + t.min(valid - 1);
                for v in 0..joints {
                    data.push(s.get(src, v)[axis]);
                }
                let w = if t < valid { 1.0 } else { 0.0 };
                weights.extend(std::iter::repeat_n(w, joints));
            }
        }
    }
    let batch = Tensor::new(data, &[seqs.len(), COORDS, crop, joints]).expect("finite poses");
    (batch, padded.then_some(weights))
}

/// Losses recorded after one pretraining epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// `L_rst` of the end-of-epoch model over the whole dataset, in eval mode.
    pub rst: f64,
    /// Running mean of the mini-batch losses seen during the epoch.
    pub train: f64,
}

/// Consecutive runs of at most `EVAL_BATCH` equal-length sequences, stacked
/// to `(N,3,T,V)`.
fn eval_batches(seqs: &[PoseSequence]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < seqs.len() {
        let frames = seqs[i].frames();
        let mut j = i + 1;
        while j < seqs.len() && j - i < EVAL_BATCH && seqs[j].frames() == frames {
            j += 1;
        }
        out.push(Tensor::stack(&seqs[i..j].iter().map(PoseSequence::to_tensor).collect::<Vec<_>>())?);
        i = j;
    }
    Ok(out)
}

/// Mean `L_rst` over every coordinate of `seqs` in eval mode.
pub fn dataset_loss(model: &Autoencoder, seqs: &[PoseSequence]) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    no_grad(|| -> Result<()> {
        for x in eval_batches(seqs)? {
            let x_hat = model.reconstruct(&x, Mode::Eval)?;
            sum += reconstruction_loss(&x, &x_hat)?.item() * x.numel() as f64;
            count += x.numel();
        }
        Ok(())
    })?;
    Ok(sum / count as f64)
}

/// Replaces the running batch-norm statistics of `model` by their plain
/// average over train-mode passes of `seqs`.
pub fn refresh_batchnorm(model: &Autoencoder, seqs: &[PoseSequence]) -> Result<()> {
    let layers = model.batchnorms();
    let saved: Vec<f64> = layers.iter().map(|b| b.stats.momentum.get()).collect();
    let result = no_grad(|| -> Result<()> {
        for (k, x) in eval_batches(seqs)?.iter().enumerate() {
            let keep = k as f64 / (k + 1) as f64;
            layers.iter().for_each(|b| b.stats.momentum.set(keep));
            model.reconstruct(x, Mode::Train)?;
        }
        Ok(())
    });
    layers.iter().zip(saved).for_each(|(b, m)| b.stats.momentum.set(m));
    result
}

const EVAL_BATCH: usize = 16;

/// Mean absolute error of predicting every frame by one constant pose, the
/// per-joint mean of the normalized dataset.
pub fn constant_pose_mae(dataset: &[PoseSequence], graph: &SkeletonGraph) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let v = graph.num_joints();
    let normalized: Vec<PoseSequence> = dataset
        .iter()
        .map(|s| Normalization::fit_all(s, graph).apply(s))
        .collect();
    let frames: usize = normalized.iter().map(PoseSequence::frames).sum();
    let mut mean = vec![[0.0; COORDS]; v];
    for s in &normalized {
        for t in 0..s.frames() {
            for (j, m) in mean.iter_mut().enumerate() {
                let p = s.get(t, j);
                (0..COORDS).for_each(|c| m[c] += p[c] / frames as f64);
            }
        }
    }
    let mut total = 0.0;
    for s in &normalized {
        for t in 0..s.frames() {
            for (j, m) in mean.iter().enumerate() {
                let p = s.get(t, j);
                total += (0..COORDS).map(|c| (p[c] - m[c]).abs()).sum::<f64>();
            }
        }
    }
    Ok(total / (frames * v * COORDS) as f64)
}

/// Trains `model` to reconstruct `dataset`; returns the losses of each epoch.
pub fn pretrain(model: &Autoencoder, dataset: &[PoseSequence], cfg: &PretrainConfig, rng: &mut Rng) -> Result<Vec<EpochLoss>> {
    pretrain_with(model, dataset, cfg, rng, |_, _| {})
}

/// As [`pretrain`], calling `on_epoch(epoch, losses)` after every epoch.
pub fn pretrain_with(
    model: &Autoencoder,
    dataset: &[PoseSequence],
    cfg: &PretrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(usize, EpochLoss),
) -> Result<Vec<EpochLoss>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.crop_frames == 0 {
        return Err(Error::Config("batch size and crop length must be positive".into()));
    }
    let graph = model.graph();
    if let Some(s) = dataset.iter().find(|s| s.joints() != graph.num_joints()) {
        return Err(Error::JointMismatch {
            expected: graph.num_joints(),
            found: s.joints(),
        });
    }
    let normalized: Vec<PoseSequence> = dataset
        .iter()
        .map(|s| Normalization::fit_all(s, graph).apply(s))
        .collect();
    let params = model.parameters();
    let mut opt = Adam::new(&params, cfg.adam);
    let mut average: Vec<Vec<f64>> = params.iter().map(Tensor::to_vec).collect();
    let mut order: Vec<usize> = (0..normalized.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * order.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&PoseSequence> = chunk.iter().map(|&i| &normalized[i]).collect();
            let (x, weights) = make_batch(&seqs, cfg.crop_frames, rng);
            let x_hat = model.reconstruct(&x, Mode::Train).map_err(|e| e.during("pretraining"))?;
            let loss = match &weights {
                None => reconstruction_loss(&x, &x_hat)?,
                Some(w) => x_hat.mean_abs_weighted(&x, w)?,
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("pretraining epoch {epoch}")));
            }
            loss.backward()?;
            opt.config.lr = cfg.adam.lr * cfg.lr_schedule.factor(opt.step_count() as usize, total_steps, cfg.lr_floor);
            opt.step(&params)?;
            let k = opt.step_count() as f64;
            let decay = cfg.weight_average.min(k / (k + 9.0));
            for (avg, p) in average.iter_mut().zip(&params) {
                avg.iter_mut().zip(p.data().iter()).for_each(|(a, x)| *a = decay * *a + (1.0 - decay) * x);
            }
            total += value * chunk.len() as f64;
        }
        let raw: Vec<Vec<f64>> = params.iter().map(Tensor::to_vec).collect();
        if cfg.weight_average > 0.0 {
            for (p, avg) in params.iter().zip(&average) {
                p.data_mut().copy_from_slice(avg);
            }
            refresh_batchnorm(model, &normalized)?;
        }
        let losses = EpochLoss {
            rst: dataset_loss(model, &normalized).map_err(|e| e.during("pretraining"))?,
            train: total / normalized.len() as f64,
        };
        if cfg.weight_average > 0.0 && epoch + 1 < cfg.epochs {
            for (p, r) in params.iter().zip(&raw) {
                p.data_mut().copy_from_slice(r);
            }
        }
        on_epoch(epoch, losses);
        curve.push(losses);
    }
    Ok(curve)
}
