//! The desk-scale smoke model: resolution 32, 8 classes x 64 procedural
//! textures, 2,000 Adam iterations at batch 16 and lr 2e-4.
//!
//! Training takes roughly twenty minutes on one core, so the first test
//! binary that needs the model trains it and caches the checkpoint (plus the
//! loss history and wall time) under the cargo test tmp dir, keyed by a hash
//! of the full configuration. Delete `target/tmp/smoke-*` to force a retrain.

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uvtex::dataset::{build_training_set, default_classes, load_training_set, ClassSpec};
use uvtex::denoiser::{init_params, load_checkpoint, save_checkpoint, DenoiserConfig, DenoiserParams};
use uvtex::diffusion::{make_schedule, train, NoiseSchedule, ScheduleKind, TrainConfig};
use uvtex::mesh_uv::{build_texel_table, bundled_humanoid, Mesh, TexelTable};

pub const RESOLUTION: usize = 32;
pub const PER_CLASS: usize = 64;
/// Bump when a library change invalidates cached smoke models.
const CACHE_VERSION: u32 = 1;

pub fn model_config() -> DenoiserConfig {
    DenoiserConfig {
        texture_resolution: RESOLUTION,
        base_channels: 32,
        channel_multipliers: vec![1, 2, 4],
        time_embed_dim: 64,
        num_classes: 8,
        timesteps: 1000,
        seed: 0,
    }
}

pub fn train_config() -> TrainConfig {
    TrainConfig { iterations: 2000, batch_size: 16, lr: 2e-4, cond_drop_prob: 0.1, seed: 0, log_every: 250 }
}

pub fn schedule() -> NoiseSchedule {
    make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap()
}

#[derive(Serialize, Deserialize)]
struct Meta {
    losses: Vec<f32>,
    train_seconds: f64,
}

pub struct Smoke {
    pub mesh: Mesh,
    pub table: TexelTable,
    pub specs: Vec<ClassSpec>,
    pub params: DenoiserParams<f32>,
    pub schedule: NoiseSchedule,
    pub losses: Vec<f32>,
    pub train_seconds: f64,
    /// True when this process trained the model rather than loading it.
    pub fresh: bool,
}

impl Smoke {
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().map(|&l| l as f64).sum::<f64>() / s.len() as f64
    }
}

pub fn cache_dir() -> PathBuf {
    let key = serde_json::to_string(&(CACHE_VERSION, model_config(), train_config(), PER_CLASS)).unwrap();
    let hash = hex::encode(Sha256::digest(key.as_bytes()));
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("smoke-{}", &hash[..16]))
}

pub fn smoke() -> &'static Smoke {
    static CELL: OnceLock<Smoke> = OnceLock::new();
    CELL.get_or_init(load_or_train)
}

fn load_or_train() -> Smoke {
    let mesh = bundled_humanoid();
    let table = build_texel_table(&mesh, RESOLUTION).unwrap();
    let specs = default_classes();
    let schedule = schedule();
    let dir = cache_dir();
    let (ckpt, meta_path) = (dir.join("model.dnz"), dir.join("meta.json"));
    if ckpt.exists() && meta_path.exists() {
        let params = load_checkpoint(&ckpt).unwrap().params;
        let meta: Meta = serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
        return Smoke {
            mesh,
            table,
            specs,
            params,
            schedule,
            losses: meta.losses,
            train_seconds: meta.train_seconds,
            fresh: false,
        };
    }
    let data = dir.join("data");
    build_training_set(&specs, &table, PER_CLASS, 0, &data, false).unwrap();
    let (_, textures, classes) = load_training_set(&data).unwrap();
    let start = Instant::now();
    let outcome = train(
        init_params(&model_config()).unwrap(),
        &textures,
        &classes,
        &schedule,
        &train_config(),
        None,
        |it, loss| eprintln!("smoke training: iter {it:>5} loss {loss:.4}"),
    )
    .unwrap();
    let train_seconds = start.elapsed().as_secs_f64();
    // Checkpoint last so an interrupted run never leaves a half-written cache.
    let meta = Meta { losses: outcome.losses.clone(), train_seconds };
    fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
    save_checkpoint(&ckpt, &outcome.params, outcome.optimizer.step, None).unwrap();
    Smoke {
        mesh,
        table,
        specs,
        params: outcome.params,
        schedule,
        losses: outcome.losses,
        train_seconds,
        fresh: true,
    }
}
