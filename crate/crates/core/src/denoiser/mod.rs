//! Noise-prediction network `eps(x_t, t, c)`: a small convolutional U-Net
//! with a sinusoidal time embedding and a learned class-embedding table.
//!
//! # Architecture
//!
//! With `L = channel_multipliers.len()` levels, `C_l = base_channels *
//! channel_multipliers[l]` and `E = time_embed_dim`:
//!
//! * time MLP: sinusoidal(t) -> Linear(E, E) -> SiLU -> Linear(E, E); the
//!   class embedding (a `(K + 1) x E` table whose last row is the null class)
//!   is added to its output, giving the per-sample embedding `emb`;
//! * `conv_in`: 3x3 conv, 3 -> C_0;
//! * down path: one residual block per level, 2x2 average pooling between
//!   levels;
//! * middle: one residual block at C_{L-1};
//! * up path (levels L-2 down to 0): nearest 2x upsampling, 3x3 conv
//!   C_{l+1} -> C_l, channel concat with the down-path output of level `l`,
//!   residual block 2C_l -> C_l;
//! * head: GroupNorm -> SiLU -> 3x3 conv C_0 -> 3, zero-initialized.
//!
//! A residual block `in -> out` computes `GN -> SiLU -> conv3 -> (+
//! Linear(SiLU(emb))) -> GN -> SiLU -> conv3`, plus the input (through a 1x1
//! conv when `in != out`). GroupNorm uses `gcd(8, channels / 2)` groups: 8
//! for every layer of the default configuration, and always at least two
//! channels per group.
//!
//! # Parameter count
//!
//! ```text
//! res(i, o)   = 2i + 9io + o + Eo + o + 2o + 9o^2 + o + [i != o](io + o)
//! total       = 2E^2 + 2E + (K+1)E
//!             + 27C_0 + C_0
//!             + sum_l res(C_{l-1}, C_l)          (C_{-1} := C_0)
//!             + res(C_{L-1}, C_{L-1})
//!             + sum_{l<L-1} [9 C_{l+1} C_l + C_l + res(2C_l, C_l)]
//!             + 2C_0 + 27C_0 + 3
//! ```
//!
//! Parameters live in one flat vector; [`param_layout`] lists each tensor's
//! name, shape and offset in that (checkpoint) order.

mod adam;
mod checkpoint;
mod net;
mod ops;
mod scalar;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use scalar::Scalar;

/// Hyperparameters fixing the network shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub texture_resolution: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub time_embed_dim: usize,
    /// Number of real classes `K`; class id `K` is the null class.
    pub num_classes: usize,
    /// Largest timestep the network accepts (the schedule length `T`).
    pub timesteps: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            texture_resolution: 64,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            time_embed_dim: 64,
            num_classes: 8,
            timesteps: 1000,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return bad("channel_multipliers must be non-empty and positive".into());
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad(format!("time_embed_dim must be even and >= 2, got {}", self.time_embed_dim));
        }
        if self.timesteps == 0 {
            return bad("timesteps must be at least 1".into());
        }
        let div = 1usize << (self.levels() - 1);
        if self.texture_resolution == 0 || self.texture_resolution % div != 0 {
            return bad(format!(
                "texture_resolution {} not divisible by {div}",
                self.texture_resolution
            ));
        }
        Ok(())
    }
}

/// Closed-form parameter count (see the module docs).
pub fn param_count(config: &DenoiserConfig) -> usize {
    let e = config.time_embed_dim;
    let res = |i: usize, o: usize| {
        let skip = if i != o { i * o + o } else { 0 };
        2 * i + 9 * i * o + o + e * o + o + 2 * o + 9 * o * o + o + skip
    };
    let l = config.levels();
    let c = |k: usize| config.channels(k);
    let mut total = 2 * e * e + 2 * e + (config.num_classes + 1) * e;
    total += 28 * c(0);
    for k in 0..l {
        total += res(if k == 0 { c(0) } else { c(k - 1) }, c(k));
    }
    total += res(c(l - 1), c(l - 1));
    for k in 0..l.saturating_sub(1) {
        total += 9 * c(k + 1) * c(k) + c(k) + res(2 * c(k), c(k));
    }
    total + 29 * c(0) + 3
}

/// Name, shape and flat offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The tensors of `config` in storage order.
pub fn param_layout(config: &DenoiserConfig) -> Result<Vec<TensorInfo>> {
    config.validate()?;
    Ok(net::Arch::new(config).tensors)
}

/// Network weights in one flat vector laid out as [`param_layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<S = f32> {
    pub config: DenoiserConfig,
    pub data: Vec<S>,
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn new(config: DenoiserConfig, data: Vec<S>) -> Result<Self> {
        config.validate()?;
        let n = param_count(&config);
        if data.len() != n {
            return Err(Error::shape(&[n], &[data.len()]));
        }
        Ok(Self { config, data })
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        DenoiserParams {
            config: self.config.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice of the named tensor, if present.
    pub fn tensor(&self, name: &str) -> Option<&[S]> {
        let arch = net::Arch::new(&self.config);
        let info = arch.tensors.iter().find(|t| t.name == name)?;
        Some(&self.data[info.offset..info.offset + info.len()])
    }
}

/// Deterministic initialization from `config.seed`.
///
/// Convolution and linear weights are uniform in `±1/sqrt(fan_in)` with zero
/// biases, GroupNorm scales are 1 and shifts 0, class embeddings are unit
/// normal except the null row (zeros), and the output convolution is zero so
/// the fresh network predicts `eps = 0`.
pub fn init_params(config: &DenoiserConfig) -> Result<DenoiserParams<f32>> {
    config.validate()?;
    let arch = net::Arch::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = vec![0.0f32; arch.total];
    for info in &arch.tensors {
        let slot = &mut data[info.offset..info.offset + info.len()];
        let leaf = info.name.rsplit('.').next().unwrap_or("");
        if info.name.starts_with("out.conv") {
            continue;
        }
        match leaf {
            "weight" => {
                let fan_in: usize = info.shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f32).sqrt();
                for v in slot.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
            "gamma" => slot.fill(1.0),
            "table" => {
                let e = config.time_embed_dim;
                for v in slot[..config.num_classes * e].iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            _ => {}
        }
    }
    Ok(DenoiserParams { config: config.clone(), data })
}

fn check_batch<S>(config: &DenoiserConfig, x: &[S], t: &[usize], c: &[usize]) -> Result<usize> {
    let n = t.len();
    let r = config.texture_resolution;
    if c.len() != n {
        return Err(Error::shape(&[n], &[c.len()]));
    }
    if x.len() != n * r * r * 3 {
        return Err(Error::shape(&[n, r, r, 3], &[x.len()]));
    }
    for &ti in t {
        if ti > config.timesteps {
            return Err(Error::BadTimestep { t: ti, max: config.timesteps });
        }
    }
    for &ci in c {
        if ci > config.num_classes {
            return Err(Error::BadClass { class: ci, null: config.num_classes });
        }
    }
    Ok(n)
}

/// Predicts the noise for a batch of `N = t.len()` textures stored
/// back-to-back as `N x R x R x 3`. Timesteps may range over `0..=T`; class
/// ids over `0..=K` with `K` the null class.
pub fn forward<S: Scalar>(params: &DenoiserParams<S>, x_t: &[S], t: &[usize], c: &[usize]) -> Result<Vec<S>> {
    let n = check_batch(&params.config, x_t, t, c)?;
    let arch = net::Arch::new(&params.config);
    let (out, _) = arch.forward(&params.data, x_t, n, t, c, false);
    Ok(out)
}

/// Mean squared error between `eps` and the prediction at
/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, with its exact gradient
/// (same layout as the parameters).
pub fn loss_and_grads<S: Scalar>(
    params: &DenoiserParams<S>,
    x0: &[S],
    t: &[usize],
    eps: &[S],
    c: &[usize],
    schedule: &NoiseSchedule,
) -> Result<(S, Vec<S>)> {
    let n = check_batch(&params.config, x0, t, c)?;
    if eps.len() != x0.len() {
        return Err(Error::shape(&[x0.len()], &[eps.len()]));
    }
    if params.config.timesteps > schedule.timesteps {
        return Err(Error::BadConfig(format!(
            "network accepts timesteps up to {} but schedule has {}",
            params.config.timesteps, schedule.timesteps
        )));
    }
    let per = x0.len() / n.max(1);
    let mut x_t = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        let a = S::lit(schedule.alpha_bars[ti].sqrt());
        let b = S::lit((1.0 - schedule.alpha_bars[ti]).sqrt());
        for k in i * per..(i + 1) * per {
            x_t.push(a * x0[k] + b * eps[k]);
        }
    }
    let arch = net::Arch::new(&params.config);
    let (pred, cache) = arch.forward(&params.data, &x_t, n, t, c, true);
    let count = S::from_usize(pred.len().max(1)).unwrap();
    let mut loss = S::zero();
    let mut dpred = Vec::with_capacity(pred.len());
    for (p, e) in pred.iter().zip(eps) {
        let r = *p - *e;
        loss += r * r;
        dpred.push(S::lit(2.0) * r / count);
    }
    loss = loss / count;
    let grads = arch.backward(&params.data, cache.expect("cache requested"), &dpred);
    Ok((loss, grads))
}
