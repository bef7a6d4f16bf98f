//! Flat run configuration shared by every pipeline stage, and helpers that
//! build, save and restore the full model from it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Autoencoder, AutoencoderConfig, PretrainConfig};
use crate::data_io::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::diffusion::{
    make_schedule, Denoiser, DenoiserConfig, DiffusionTrainConfig, InfillModel, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::eval::Protocol;
use crate::graph::SkeletonGraph;
use crate::masking::FillMode;
use crate::optim::{AdamConfig, LrSchedule};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    #[default]
    Interval,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `"default"` or a path to a skeleton JSON file.
    pub skeleton: String,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub denoiser_channels: Vec<usize>,
    pub time_embedding: usize,
    pub temporal_kernel: usize,
    pub dilation: usize,
    pub mask_ratio: f64,
    pub fill: FillMode,
    pub diffusion_steps: usize,
    pub inference_steps: usize,
    pub stochastic: bool,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub lr_floor: f64,
    /// Weight-average decay used by pretraining; 0 disables it.
    pub weight_average: f64,
    pub pretrain_epochs: usize,
    pub diffusion_epochs: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub mask_mode: MaskMode,
    pub remove: usize,
    pub every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            skeleton: "default".into(),
            encoder_channels: vec![8, 16, 64, 128],
            decoder_channels: vec![128, 64, 16, 16],
            denoiser_channels: vec![32, 64, 128],
            time_embedding: 128,
            temporal_kernel: 7,
            dilation: 2,
            mask_ratio: 0.5,
            fill: FillMode::Interpolate,
            diffusion_steps: 1000,
            inference_steps: 5,
            stochastic: false,
            lr: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            lr_floor: 0.01,
            weight_average: 0.99,
            pretrain_epochs: 50,
            diffusion_epochs: 60,
            batch_size: 8,
            crop_frames: 60,
            mask_mode: MaskMode::Interval,
            remove: 20,
            every: 30,
        }
    }
}

/// Stream ids carved out of the run seed, one per pipeline stage.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const DIFFUSION: u64 = 3;
    pub const EVAL_MASK: u64 = 4;
    pub const SAMPLE: u64 = 5;
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("run config", &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn skeleton_graph(&self) -> Result<SkeletonGraph> {
        if self.skeleton == "default" {
            Ok(SkeletonGraph::default_skeleton())
        } else {
            Ok(SkeletonGraph::load(Path::new(&self.skeleton))?)
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn autoencoder(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            encoder_ladder: self.encoder_channels.clone(),
            decoder_ladder: self.decoder_channels.clone(),
            temporal_kernel: self.temporal_kernel,
            dilation: self.dilation,
        }
    }

    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_channels: *self.encoder_channels.last().unwrap_or(&0),
            ladder: self.denoiser_channels.clone(),
            time_embedding: self.time_embedding,
            temporal_kernel: self.temporal_kernel,
            dilation: self.dilation,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            crop_frames: self.crop_frames,
            adam: self.adam(),
            lr_schedule: self.lr_schedule,
            lr_floor: self.lr_floor,
            weight_average: self.weight_average,
        }
    }

    pub fn diffusion_training(&self) -> DiffusionTrainConfig {
        DiffusionTrainConfig {
            epochs: self.diffusion_epochs,
            batch_size: self.batch_size,
            crop_frames: self.crop_frames,
            mask_ratio: self.mask_ratio,
            fill: self.fill,
            adam: self.adam(),
            lr_schedule: self.lr_schedule,
            lr_floor: self.lr_floor,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            stochastic: self.stochastic,
            ..SamplerConfig::evenly_spaced(self.diffusion_steps, self.inference_steps)
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self.mask_mode {
            MaskMode::Interval => Protocol::Interval {
                remove: self.remove,
                every: self.every,
            },
            MaskMode::Random => Protocol::Random {
                ratio: self.mask_ratio,
                seed: Rng::stream(self.seed, streams::EVAL_MASK).next_u64(),
            },
        }
    }

    pub fn rng(&self, stream: u64) -> Rng {
        Rng::stream(self.seed, stream)
    }

    /// Freshly initialized autoencoder and denoiser.
    pub fn build_model(&self, graph: SkeletonGraph) -> Result<InfillModel> {
        let mut rng = self.rng(streams::INIT);
        let ae = Autoencoder::new(self.autoencoder(), graph, &mut rng)?;
        let dn = Denoiser::new(self.denoiser(), &mut rng)?;
        let mut model = InfillModel::new(ae, dn, make_schedule(self.diffusion_steps)?, self.sampler())?;
        model.fill = self.fill;
        Ok(model)
    }
}

pub const AUTOENCODER_PREFIX: &str = "autoencoder";
pub const DENOISER_PREFIX: &str = "denoiser";

/// Snapshot of both networks with the config, skeleton and `stage` label.
pub fn capture_model(model: &InfillModel, cfg: &RunConfig, stage: &str) -> Checkpoint {
    let skeleton: serde_json::Value =
        serde_json::from_str(&model.autoencoder.graph().to_json()).expect("skeleton json is valid");
    let metadata = serde_json::json!({
        "stage": stage,
        "seed": cfg.seed,
        "config": cfg.to_value(),
        "skeleton": skeleton,
    });
    Checkpoint::capture(
        &[(AUTOENCODER_PREFIX, &model.autoencoder), (DENOISER_PREFIX, &model.denoiser)],
        metadata,
    )
}

/// Rebuilds the model described by a checkpoint and loads its tensors.
pub fn restore_model(ckpt: &Checkpoint) -> Result<(InfillModel, RunConfig)> {
    let meta = &ckpt.metadata;
    let cfg: RunConfig = serde_json::from_value(meta.get("config").cloned().unwrap_or_default())
        .map_err(|e| Error::Invalid(format!("checkpoint config: {e}")))?;
    let graph = match meta.get("skeleton") {
        Some(s) => SkeletonGraph::from_json(&s.to_string())?,
        None => cfg.skeleton_graph()?,
    };
    let model = cfg.build_model(graph)?;
    ckpt.restore(AUTOENCODER_PREFIX, &model.autoencoder)?;
    ckpt.restore(DENOISER_PREFIX, &model.denoiser)?;
    Ok((model, cfg))
}

pub fn save_model(path: &Path, model: &InfillModel, cfg: &RunConfig, stage: &str) -> Result<()> {
    save_checkpoint(path, &capture_model(model, cfg, stage))
}

pub fn load_model(path: &Path) -> Result<(InfillModel, RunConfig)> {
    restore_model(&load_checkpoint(path)?)
}
