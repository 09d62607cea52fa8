//! Flat run configuration shared by every subcommand.
//!
//! A JSON file supplies any subset of the fields below; command-line flags
//! override the file, and everything else falls back to its default. Unknown
//! keys are rejected so typos never silently change an experiment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{make_schedule, NoiseSchedule, SamplerConfig, ScheduleKind, TrainConfig};
use crate::error::{Error, Result};
use crate::mesh_uv::{bundled_humanoid, load_mesh, Mesh};
use crate::metrics::{MaskMode, NamedCamera};
use crate::renderer::CameraPreset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed for every random stream (data, init, training, sampling).
    pub seed: u64,

    // Denoiser architecture.
    pub texture_resolution: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub time_embed_dim: usize,
    pub num_classes: usize,

    // Noise schedule.
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    // Reverse chain.
    pub steps: usize,
    pub guidance: f64,
    pub eta: f64,
    pub clamp_x0: bool,
    /// Erosion (in texels) applied to the observed region before inpainting.
    pub erode_radius: usize,

    // Training.
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub cond_drop_prob: f64,
    pub log_every: u64,

    // Data generation and curation.
    /// Number of outfit classes generated by `gendata` (the first N defaults).
    pub classes: usize,
    pub per_class: usize,
    pub previews: bool,
    pub curation_threshold: f64,

    // Paths. `None` means: bundled mesh / no dataset / no checkpoint /
    // `runs/<command>-<hash>`.
    pub mesh: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,

    // Cameras.
    pub camera: String,
    pub eval_cameras: Vec<String>,
    pub width: usize,
    pub height: usize,
    pub background: [f32; 3],
    pub mask_mode: MaskMode,

    // Correspondence corruption applied by `render`.
    pub noise_sigma: f64,
    pub dilation: usize,
    /// Mask correspondences by the silhouette before projection.
    pub silhouette_mask: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = DenoiserConfig::default();
        let sampler = SamplerConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            texture_resolution: model.texture_resolution,
            base_channels: model.base_channels,
            channel_multipliers: model.channel_multipliers,
            time_embed_dim: model.time_embed_dim,
            num_classes: model.num_classes,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            steps: sampler.num_steps,
            guidance: sampler.guidance_weight,
            eta: sampler.eta,
            clamp_x0: sampler.clamp_x0,
            erode_radius: 1,
            iterations: train.iterations,
            batch_size: train.batch_size,
            lr: train.lr,
            cond_drop_prob: train.cond_drop_prob,
            log_every: train.log_every,
            classes: 8,
            per_class: 64,
            previews: false,
            curation_threshold: 0.05,
            mesh: None,
            dataset: None,
            checkpoint: None,
            out: None,
            camera: "frontal".into(),
            eval_cameras: CameraPreset::ALL.iter().map(|c| c.name().to_string()).collect(),
            width: 64,
            height: 128,
            background: [0.5, 0.5, 0.5],
            mask_mode: MaskMode::Silhouette,
            noise_sigma: 0.0,
            dilation: 0,
            silhouette_mask: true,
        }
    }
}

impl RunConfig {
    /// Reads a config file; missing keys take their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::BadConfig(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> DenoiserConfig {
        DenoiserConfig {
            texture_resolution: self.texture_resolution,
            base_channels: self.base_channels,
            channel_multipliers: self.channel_multipliers.clone(),
            time_embed_dim: self.time_embed_dim,
            num_classes: self.num_classes,
            timesteps: self.timesteps,
            seed: self.seed,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end, ScheduleKind::Linear)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            num_steps: self.steps,
            guidance_weight: self.guidance,
            eta: self.eta,
            seed: self.seed,
            clamp_x0: self.clamp_x0,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            batch_size: self.batch_size,
            lr: self.lr,
            cond_drop_prob: self.cond_drop_prob,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn load_mesh(&self) -> Result<Mesh> {
        match &self.mesh {
            Some(p) => load_mesh(p),
            None => Ok(bundled_humanoid()),
        }
    }

    pub fn camera_preset(&self) -> Result<CameraPreset> {
        CameraPreset::parse(&self.camera)
    }

    pub fn eval_cameras(&self) -> Result<Vec<NamedCamera>> {
        self.eval_cameras
            .iter()
            .map(|name| {
                let preset = CameraPreset::parse(name)?;
                Ok(NamedCamera { name: preset.name().to_string(), camera: preset.camera(self.width, self.height) })
            })
            .collect()
    }

    /// Cheap checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        self.camera_preset()?;
        self.eval_cameras()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::BadConfig("width and height must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::BadConfig(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        self.schedule()?;
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}
