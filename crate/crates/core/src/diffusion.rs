//! Conditional latent diffusion: noise schedule, forward corruption, the
//! Sign-GCN denoiser with residual condition injection, training and the
//! few-step sampler.

use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::{Error, Result};
use crate::graph::PartitionedAdjacency;
use crate::masking::{random_mask, FillMode, MaskSpec};
use crate::nn::{join, Conv1x1, Mode, Module};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::pose::{Normalization, PoseSequence};
use crate::rng::Rng;
use crate::signgcn::{SignGcnConfig, SignGcnLayer};
use crate::tensor::{no_grad, Tensor};

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` at `t = 1` to `beta_end` at `t = num_steps`.
    pub fn linear(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if num_steps == 0 {
            return Err(Error::Config("the noise schedule needs at least one step".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("betas must satisfy 0 < {beta_start} <= {beta_end} < 1")));
        }
        let betas: Vec<f64> = (0..num_steps)
            .map(|i| {
                if num_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(num_steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_steps() {
            return Err(Error::Invalid(format!("timestep {t} is outside 1..={}", self.num_steps())));
        }
        Ok(())
    }
}

pub fn make_schedule(num_steps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(num_steps, BETA_START, BETA_END)
}

/// `z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε` for a given `ε`.
pub fn diffuse_with(z0: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    sched.check(t)?;
    let (a, s) = (sched.alpha_bar(t).sqrt(), (1.0 - sched.alpha_bar(t)).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + s * e).collect())
}

/// Draws `ε ~ N(0, I)` and returns `(z_t, ε)`.
pub fn forward_diffuse(z0: &Tensor, t: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Result<(Tensor, Tensor)> {
    sched.check(t)?;
    let eps = rng.normals(z0.numel());
    let zt = diffuse_with(&z0.data(), &eps, t, sched)?;
    Ok((Tensor::new(zt, z0.shape())?, Tensor::new(eps, z0.shape())?))
}

/// Per-sample timesteps for a batched `(N,C,T,V)` latent.
fn diffuse_batch(z0: &Tensor, ts: &[usize], sched: &NoiseSchedule, rng: &mut Rng) -> Result<Tensor> {
    let each = z0.numel() / ts.len();
    let data = z0.data();
    let mut out = Vec::with_capacity(z0.numel());
    for (i, &t) in ts.iter().enumerate() {
        let eps = rng.normals(each);
        out.extend(diffuse_with(&data[i * each..(i + 1) * each], &eps, t, sched)?);
    }
    Ok(Tensor::new(out, z0.shape())?)
}

/// Transformer-style sinusoidal features of `t`: `dim/2` sines then `dim/2` cosines.
pub fn sinusoidal_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_channels: usize,
    /// Projection width followed by the Sign-GCN output widths.
    pub ladder: Vec<usize>,
    pub time_embedding: usize,
    pub temporal_kernel: usize,
    pub dilation: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            latent_channels: 128,
            ladder: vec![32, 64, 128],
            time_embedding: 128,
            temporal_kernel: 7,
            dilation: 2,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.len() < 2 || self.ladder.last() != Some(&self.latent_channels) {
            return Err(Error::Config(format!(
                "denoiser ladder {:?} must end at the latent width {}",
                self.ladder, self.latent_channels
            )));
        }
        if self.time_embedding == 0 || self.time_embedding % 2 != 0 {
            return Err(Error::Config("time embedding width must be even and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub time_mlp: [Conv1x1; 2],
    pub proj: Conv1x1,
    pub layers: Vec<SignGcnLayer>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (lat, emb) = (config.latent_channels, config.time_embedding);
        let time_mlp = [Conv1x1::new(emb, lat, true, rng), Conv1x1::new(lat, lat, true, rng)];
        let proj = Conv1x1::new(2 * lat, config.ladder[0], true, rng);
        let layers = config
            .ladder
            .windows(2)
            .map(|w| {
                let c = SignGcnConfig::new(w[0], w[1]).with_temporal(config.temporal_kernel, config.dilation);
                SignGcnLayer::new(c, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Denoiser {
            config,
            time_mlp,
            proj,
            layers,
        })
    }

    /// `MLP(sinusoidal(t))` shaped `(C,1,1)`, or `(N,C,1,1)` when batched.
    pub fn time_bias(&self, ts: &[usize], batched: bool) -> Result<Tensor> {
        let dim = self.config.time_embedding;
        let feats: Vec<f64> = ts.iter().flat_map(|&t| sinusoidal_embedding(t, dim)).collect();
        let shape: Vec<usize> = if batched { vec![ts.len(), dim, 1, 1] } else { vec![dim, 1, 1] };
        let e = Tensor::new(feats, &shape)?;
        let h = self.time_mlp[0].forward(&e)?.relu()?;
        Ok(self.time_mlp[1].forward(&h)?)
    }

    /// `z̃′0 = z̃0 + MLP(t)`, broadcast over frames and joints. `ts` holds one
    /// timestep per batch sample (exactly one for an unbatched latent).
    pub fn condition(&self, z_tilde: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let batched = z_tilde.shape().len() == 4;
        let n = if batched { z_tilde.shape()[0] } else { 1 };
        if ts.len() != n {
            return Err(Error::Invalid(format!("{} timesteps for a batch of {n}", ts.len())));
        }
        Ok(z_tilde.add(&self.time_bias(ts, batched)?)?)
    }

    /// `ẑ0 = SignGCN₂(SignGCN₁(proj([z_t, z̃′0]))) + z̃0`.
    pub fn denoise(
        &self,
        z_t: &Tensor,
        z_cond: &Tensor,
        z_tilde: &Tensor,
        adj: &PartitionedAdjacency,
        mode: Mode,
    ) -> Result<Tensor> {
        let lat = self.config.latent_channels;
        for z in [z_t, z_cond, z_tilde] {
            let c = z.shape().len().checked_sub(3).map(|i| z.shape()[i]);
            if c != Some(lat) || z.shape() != z_t.shape() {
                return Err(Error::Invalid(format!(
                    "denoiser inputs must share a ({lat},T,V) shape, got {:?} and {:?}",
                    z_t.shape(),
                    z.shape()
                )));
            }
        }
        let mut h = self.proj.forward(&Tensor::concat_channels(&[z_t.clone(), z_cond.clone()])?)?;
        for layer in &self.layers {
            h = layer.forward(&h, adj, mode)?;
        }
        Ok(h.add(z_tilde)?)
    }

    /// Conditions on `t` and predicts `ẑ0`.
    pub fn predict(
        &self,
        z_t: &Tensor,
        ts: &[usize],
        z_tilde: &Tensor,
        adj: &PartitionedAdjacency,
        mode: Mode,
    ) -> Result<Tensor> {
        let z_cond = self.condition(z_tilde, ts)?;
        self.denoise(z_t, &z_cond, z_tilde, adj, mode)
    }
}

impl Module for Denoiser {
    fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.time_mlp[0].parameters();
        p.extend(self.time_mlp[1].parameters());
        p.extend(self.proj.parameters());
        self.layers.iter().for_each(|l| p.extend(l.parameters()));
        p
    }

    fn named_tensors(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.time_mlp[0].named_tensors(&join(prefix, "time0"), out);
        self.time_mlp[1].named_tensors(&join(prefix, "time1"), out);
        self.proj.named_tensors(&join(prefix, "proj"), out);
        for (i, l) in self.layers.iter().enumerate() {
            l.named_tensors(&join(prefix, &format!("layer{i}")), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Strictly decreasing timesteps; the sampler returns the prediction made
    /// at the last one.
    pub timesteps: Vec<usize>,
    /// Re-noise with fresh Gaussian noise instead of the recovered `ε′`.
    pub stochastic: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::evenly_spaced(DEFAULT_STEPS, 5)
    }
}

impl SamplerConfig {
    /// `T, T − T/i, …, T/i`.
    pub fn evenly_spaced(num_steps: usize, inference_steps: usize) -> Self {
        let n = inference_steps.max(1);
        let timesteps = (0..n)
            .map(|j| num_steps - j * num_steps / n)
            .filter(|&t| t >= 1)
            .collect();
        SamplerConfig {
            timesteps,
            stochastic: false,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        let ok = !self.timesteps.is_empty()
            && self.timesteps.windows(2).all(|w| w[0] > w[1])
            && self.timesteps.iter().all(|&t| t >= 1 && t <= sched.num_steps());
        if !ok {
            return Err(Error::Config(format!(
                "sampler timesteps {:?} must be strictly decreasing within 1..={}",
                self.timesteps,
                sched.num_steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub mask_ratio: f64,
    pub fill: FillMode,
    pub adam: AdamConfig,
    /// Decay of `adam.lr` over all updates of the run.
    pub lr_schedule: LrSchedule,
    /// Final learning rate as a fraction of `adam.lr`.
    pub lr_floor: f64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            epochs: 60,
            batch_size: 8,
            crop_frames: 60,
            mask_ratio: 0.5,
            fill: FillMode::Interpolate,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::Cosine,
            lr_floor: 0.01,
        }
    }
}

/// Pretrained autoencoder, denoiser and schedule used together for inpainting.
#[derive(Debug, Clone)]
pub struct InfillModel {
    pub autoencoder: Autoencoder,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
    pub fill: FillMode,
}

impl InfillModel {
    pub fn new(autoencoder: Autoencoder, denoiser: Denoiser, schedule: NoiseSchedule, sampler: SamplerConfig) -> Result<Self> {
        sampler.validate(&schedule)?;
        if denoiser.config.latent_channels != autoencoder.latent_channels() {
            return Err(Error::Config(format!(
                "denoiser expects {} latent channels, autoencoder produces {}",
                denoiser.config.latent_channels,
                autoencoder.latent_channels()
            )));
        }
        Ok(InfillModel {
            autoencoder,
            denoiser,
            schedule,
            sampler,
            fill: FillMode::Interpolate,
        })
    }

    fn adjacency(&self) -> &PartitionedAdjacency {
        self.autoencoder.adjacency()
    }

    /// Masks, normalizes and encodes a batch of equal-length crops, then
    /// returns the denoising loss `mean |z0 − ẑ0|` with the graph attached to
    /// the denoiser parameters. The encoder runs frozen in eval mode.
    pub fn train_step(&self, x0: &[&PoseSequence], ratio: f64, rng: &mut Rng) -> Result<Tensor> {
        let graph = self.autoencoder.graph();
        let mut clean = Vec::with_capacity(x0.len());
        let mut masked = Vec::with_capacity(x0.len());
        for x in x0 {
            let mask = random_mask(x.frames(), ratio, rng)?;
            let norm = Normalization::fit(x, graph, &mask.observed());
            let xn = norm.apply(x);
            masked.push(self.fill.apply(&xn, &mask)?.to_tensor());
            clean.push(xn.to_tensor());
        }
        let (z0, z_tilde) = no_grad(|| -> Result<(Tensor, Tensor)> {
            let ae = &self.autoencoder;
            Ok((
                ae.encode(&Tensor::stack(&clean)?, Mode::Eval)?,
                ae.encode(&Tensor::stack(&masked)?, Mode::Eval)?,
            ))
        })?;
        let ts: Vec<usize> = (0..x0.len()).map(|_| 1 + rng.below(self.schedule.num_steps())).collect();
        let z_t = diffuse_batch(&z0, &ts, &self.schedule, rng)?;
        let z_hat = self
            .denoiser
            .predict(&z_t, &ts, &z_tilde, self.adjacency(), Mode::Train)
            .map_err(|e| e.during("diffusion training"))?;
        Ok(z_hat.mean_abs(&z0)?)
    }

    /// Iterates the reverse process from pure noise, conditioned on `z_obs`.
    pub fn sample_latent(&self, z_obs: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let sched = &self.schedule;
        let steps = &self.sampler.timesteps;
        no_grad(|| {
            let mut z = Tensor::new(rng.normals(z_obs.numel()), z_obs.shape())?;
            for (j, &tau) in steps.iter().enumerate() {
                let z_hat = self.denoiser.predict(&z, &[tau], z_obs, self.adjacency(), Mode::Eval)?;
                let Some(&next) = steps.get(j + 1) else {
                    return Ok(z_hat);
                };
                let eps: Vec<f64> = if self.sampler.stochastic {
                    rng.normals(z.numel())
                } else {
                    let (a, s) = (sched.alpha_bar(tau).sqrt(), (1.0 - sched.alpha_bar(tau)).sqrt());
                    z.data().iter().zip(z_hat.data().iter()).map(|(zt, z0)| (zt - a * z0) / s).collect()
                };
                z = Tensor::new(diffuse_with(&z_hat.data(), &eps, next, sched)?, z.shape())?;
            }
            unreachable!("sampler timesteps are validated non-empty")
        })
    }

    /// Fills the masked frames of `x`. Observed frames of the output are
    /// copied from `x` unchanged; values on masked frames of `x` are ignored.
    pub fn inpaint(&self, x: &PoseSequence, mask: &MaskSpec, rng: &mut Rng) -> Result<PoseSequence> {
        let graph = self.autoencoder.graph();
        if x.joints() != graph.num_joints() {
            return Err(Error::JointMismatch {
                expected: graph.num_joints(),
                found: x.joints(),
            });
        }
        if mask.total_frames() != x.frames() {
            return Err(Error::Invalid(format!(
                "mask covers {} frames but the sequence has {}",
                mask.total_frames(),
                x.frames()
            )));
        }
        let norm = Normalization::fit(x, graph, &mask.observed());
        let x_obs = self.fill.apply(&norm.apply(x), mask)?;
        let decoded = no_grad(|| -> Result<Tensor> {
            let z_obs = self.autoencoder.encode(&x_obs.to_tensor(), Mode::Eval)?;
            let z_hat = self.sample_latent(&z_obs, rng)?;
            self.autoencoder.decode(&z_hat, Mode::Eval)
        })?;
        let generated = norm.invert(&PoseSequence::from_tensor(&decoded)?);
        let mut out = x.clone();
        for &t in mask.masked() {
            out.copy_frame_from(t, &generated, t);
        }
        Ok(out)
    }

    /// Generates `n_trans` frames bridging `pre` and `post`; the output is
    /// `pre ++ transition ++ post`.
    pub fn sample_transitions(
        &self,
        pre: &PoseSequence,
        post: &PoseSequence,
        n_trans: usize,
        rng: &mut Rng,
    ) -> Result<PoseSequence> {
        if n_trans == 0 {
            return Err(Error::Invalid("at least one transition frame is required".into()));
        }
        if pre.joints() != post.joints() {
            return Err(Error::JointMismatch {
                expected: pre.joints(),
                found: post.joints(),
            });
        }
        let gap = PoseSequence::zeros(n_trans, pre.joints());
        let x = PoseSequence::concat(&[pre, &gap, post])?;
        let start = pre.frames();
        let mask = MaskSpec::new(x.frames(), (start..start + n_trans).collect())?;
        self.inpaint(&x, &mask, rng)
    }
}

/// Trains the denoiser of `model` on `dataset`; returns per-epoch mean losses.
pub fn train_diffusion(
    model: &InfillModel,
    dataset: &[PoseSequence],
    cfg: &DiffusionTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    train_diffusion_with(model, dataset, cfg, rng, |_, _| {})
}

/// As [`train_diffusion`], calling `on_epoch(epoch, loss)` after every epoch.
/// Crops are `min(crop_frames, shortest sequence)` frames long.
pub fn train_diffusion_with(
    model: &InfillModel,
    dataset: &[PoseSequence],
    cfg: &DiffusionTrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let graph = model.autoencoder.graph();
    if let Some(s) = dataset.iter().find(|s| s.joints() != graph.num_joints()) {
        return Err(Error::JointMismatch {
            expected: graph.num_joints(),
            found: s.joints(),
        });
    }
    let crop = dataset.iter().map(PoseSequence::frames).min().unwrap().min(cfg.crop_frames);
    let model = InfillModel {
        fill: cfg.fill,
        ..model.clone()
    };
    let params = model.denoiser.parameters();
    let mut opt = Adam::new(&params, cfg.adam);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * order.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let crops = chunk
                .iter()
                .map(|&i| {
                    let s = &dataset[i];
                    let start = rng.below(s.frames() - crop + 1);
                    s.slice(start, start + crop)
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PoseSequence> = crops.iter().collect();
            let loss = model.train_step(&refs, cfg.mask_ratio, rng)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("diffusion epoch {epoch}")));
            }
            loss.backward()?;
            opt.config.lr = cfg.adam.lr * cfg.lr_schedule.factor(opt.step_count() as usize, total_steps, cfg.lr_floor);
            opt.step(&params)?;
            total += value * chunk.len() as f64;
        }
        let mean = total / dataset.len() as f64;
        on_epoch(epoch, mean);
        curve.push(mean);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderConfig;
    use crate::graph::SkeletonGraph;
    use crate::nn::zero_parameters;

    fn tiny_model(seed: u64) -> InfillModel {
        let mut rng = Rng::new(seed);
        let graph = SkeletonGraph::new(3, &[(0, 1), (1, 2)], 1).unwrap();
        let ae_cfg = AutoencoderConfig {
            encoder_ladder: vec![4, 8],
            decoder_ladder: vec![8, 4],
            temporal_kernel: 3,
            dilation: 2,
        };
        let ae = Autoencoder::new(ae_cfg, graph, &mut rng).unwrap();
        let dn_cfg = DenoiserConfig {
            latent_channels: 8,
            ladder: vec![4, 8],
            time_embedding: 8,
            temporal_kernel: 3,
            dilation: 2,
        };
        let dn = Denoiser::new(dn_cfg, &mut rng).unwrap();
        let sched = make_schedule(DEFAULT_STEPS).unwrap();
        InfillModel::new(ae, dn, sched, SamplerConfig::default()).unwrap()
    }

    fn wave(frames: usize, phase: f64) -> PoseSequence {
        let f: Vec<Vec<[f64; 3]>> = (0..frames)
            .map(|t| {
                let a = 0.3 * t as f64 + phase;
                vec![[0.0, -1.0, 0.0], [0.0, 0.0, 0.1], [a.cos(), a.sin(), 0.2]]
            })
            .collect();
        PoseSequence::from_frames(&f).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1000).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        assert!((1..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1)));
        assert!(s.alpha_bar(1000) < 0.01);
        assert!(make_schedule(0).is_err());
        assert_eq!(make_schedule(1).unwrap().alpha_bar(1), 1.0 - 1e-4);
    }

    #[test]
    fn forward_diffuse_limits() {
        let s = make_schedule(1000).unwrap();
        let z0 = [1.0, -2.0];
        let zt = diffuse_with(&z0, &[0.0, 0.0], 10, &s).unwrap();
        assert_eq!(zt, vec![s.alpha_bar(10).sqrt(), -2.0 * s.alpha_bar(10).sqrt()]);
        let zt = diffuse_with(&z0, &[0.5, 0.5], 1000, &s).unwrap();
        assert!((zt[0] - 0.5).abs() < 0.02 && (zt[1] - 0.5).abs() < 0.03);
        assert!(diffuse_with(&z0, &[0.0; 2], 0, &s).is_err());
        assert!(forward_diffuse(&Tensor::zeros(&[2]), 1001, &s, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn sinusoidal_features() {
        let e = sinusoidal_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_ne!(sinusoidal_embedding(3, 8), sinusoidal_embedding(4, 8));
    }

    #[test]
    fn condition_is_a_channel_bias() {
        let m = tiny_model(1);
        let mut rng = Rng::new(2);
        let z = Tensor::new(rng.normals(8 * 4 * 3), &[8, 4, 3]).unwrap();
        let a = m.denoiser.condition(&z, &[10]).unwrap();
        let b = m.denoiser.condition(&z, &[500]).unwrap();
        assert_ne!(a.to_vec(), b.to_vec());
        let (za, zd) = (a.to_vec(), z.to_vec());
        for c in 0..8 {
            let d0 = za[c * 12] - zd[c * 12];
            for i in 1..12 {
                assert!((za[c * 12 + i] - zd[c * 12 + i] - d0).abs() < 1e-12);
            }
        }
        zero_parameters(&m.denoiser);
        assert_eq!(m.denoiser.condition(&z, &[10]).unwrap().to_vec(), zd);
    }

    #[test]
    fn zero_network_returns_condition() {
        let m = tiny_model(3);
        zero_parameters(&m.denoiser);
        let mut rng = Rng::new(4);
        let zt = Tensor::new(rng.normals(8 * 5 * 3), &[8, 5, 3]).unwrap();
        let zc = Tensor::new(rng.normals(8 * 5 * 3), &[8, 5, 3]).unwrap();
        let out = m.denoiser.predict(&zt, &[700], &zc, m.adjacency(), Mode::Eval).unwrap();
        assert_eq!(out.shape(), &[8, 5, 3]);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(out.to_vec()), bits(zc.to_vec()));
    }

    #[test]
    fn denoise_rejects_bad_shapes() {
        let m = tiny_model(0);
        let a = Tensor::zeros(&[8, 5, 3]);
        let b = Tensor::zeros(&[6, 5, 3]);
        assert!(m.denoiser.denoise(&a, &b, &a, m.adjacency(), Mode::Eval).is_err());
        assert!(m.denoiser.condition(&a, &[1, 2]).is_err());
    }

    #[test]
    fn sampler_defaults() {
        let s = SamplerConfig::default();
        assert_eq!(s.timesteps, vec![1000, 800, 600, 400, 200]);
        assert!(!s.stochastic);
        let sched = make_schedule(1000).unwrap();
        assert!(SamplerConfig { timesteps: vec![5, 5], stochastic: false }.validate(&sched).is_err());
        assert!(SamplerConfig { timesteps: vec![1001], stochastic: false }.validate(&sched).is_err());
    }

    #[test]
    fn train_step_smoke_and_determinism() {
        let data = [wave(12, 0.0), wave(12, 1.0)];
        let refs: Vec<&PoseSequence> = data.iter().collect();
        let run = || {
            let m = tiny_model(5);
            let loss = m.train_step(&refs, 0.5, &mut Rng::new(6)).unwrap();
            loss.backward().unwrap();
            let gamma = &m.denoiser.layers.last().unwrap().tcn_bn.gamma;
            let nonzero = gamma.grad().is_some_and(|g| g.iter().any(|x| *x != 0.0));
            let encoder_untouched = m.autoencoder.lift.weight.grad().is_none();
            (loss.item(), nonzero, encoder_untouched)
        };
        let (a, nz, frozen) = run();
        assert!(a.is_finite() && a > 0.0 && nz && frozen);
        assert_eq!(run().0, a);
    }

    #[test]
    fn transitions_splice_observed_frames() {
        let m = tiny_model(7);
        let pre = wave(4, 0.0);
        let post = wave(3, 2.0);
        let out = m.sample_transitions(&pre, &post, 5, &mut Rng::new(8)).unwrap();
        assert_eq!(out.frames(), 12);
        for t in 0..4 {
            assert_eq!(out.frame(t), pre.frame(t));
        }
        for t in 0..3 {
            assert_eq!(out.frame(9 + t), post.frame(t));
        }
        assert!(m.sample_transitions(&pre, &post, 0, &mut Rng::new(8)).is_err());
        assert!(matches!(
            m.sample_transitions(&pre, &PoseSequence::zeros(2, 4), 3, &mut Rng::new(8)),
            Err(Error::JointMismatch { .. })
        ));
        let again = m.sample_transitions(&pre, &post, 5, &mut Rng::new(8)).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn short_training_run_is_finite() {
        let m = tiny_model(9);
        let data = vec![wave(10, 0.0), wave(10, 0.5), wave(10, 1.5)];
        let cfg = DiffusionTrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let curve = train_diffusion(&m, &data, &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(curve.len(), 2);
        assert!(curve.iter().all(|l| l.is_finite()));
    }
}
