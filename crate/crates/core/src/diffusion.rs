//! Forward noising, the deterministic/stochastic DDIM reverse chain with
//! classifier-free guidance, known-region replacement inpainting, and the
//! training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{self, adam_step, AdamConfig, DenoiserParams, OptimizerState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::projection::{erode_validity, mask_correspondence, project, PartialTexture};
use crate::renderer::{CorrespondenceMap, Silhouette};
use crate::texture::TextureMap;

/// Number of textures pushed through the network at once while sampling.
const SAMPLE_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
}

/// Variance schedule. All tables have length `T + 1`; index 0 is the clean
/// endpoint (`beta_0 = 0`, `alpha_bar_0 = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(timesteps: usize, beta_start: f64, beta_end: f64, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(Error::BadRange("schedule needs at least one timestep".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::BadRange(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let ScheduleKind::Linear = kind;
    let mut betas = vec![0.0];
    for t in 1..=timesteps {
        let frac = if timesteps == 1 { 0.0 } else { (t - 1) as f64 / (timesteps - 1) as f64 };
        betas.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = vec![1.0];
    for t in 1..=timesteps {
        alpha_bars.push(alpha_bars[t - 1] * alphas[t]);
    }
    Ok(NoiseSchedule { timesteps, betas, alphas, alpha_bars })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).expect("default schedule is valid")
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn q_sample(x0: &[f32], t: usize, eps: &[f32], schedule: &NoiseSchedule) -> Result<Vec<f32>> {
    if eps.len() != x0.len() {
        return Err(Error::shape(&[x0.len()], &[eps.len()]));
    }
    if t > schedule.timesteps {
        return Err(Error::BadTimestep { t, max: schedule.timesteps });
    }
    if t == 0 {
        return Ok(x0.to_vec());
    }
    let a = schedule.alpha_bars[t].sqrt();
    let b = (1.0 - schedule.alpha_bars[t]).sqrt();
    Ok(x0.iter().zip(eps).map(|(&x, &e)| (a * x as f64 + b * e as f64) as f32).collect())
}

/// Classifier-free guidance `eps_u + w (eps_c - eps_u)`, evaluated as
/// `(1 - w) eps_u + w eps_c` so both endpoints are exact.
pub fn guided_epsilon(eps_cond: &[f32], eps_uncond: &[f32], w: f64) -> Result<Vec<f32>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::shape(&[eps_cond.len()], &[eps_uncond.len()]));
    }
    if !(w >= 0.0) {
        return Err(Error::BadConfig(format!("guidance weight must be >= 0, got {w}")));
    }
    Ok(eps_cond
        .iter()
        .zip(eps_uncond)
        .map(|(&c, &u)| ((1.0 - w) * u as f64 + w * c as f64) as f32)
        .collect())
}

/// Reverse-chain settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub guidance_weight: f64,
    pub eta: f64,
    pub seed: u64,
    pub clamp_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { num_steps: 50, guidance_weight: 2.0, eta: 0.0, seed: 0, clamp_x0: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.num_steps == 0 || self.num_steps > schedule.timesteps {
            return Err(Error::BadConfig(format!(
                "num_steps must be in 1..={}, got {}",
                schedule.timesteps, self.num_steps
            )));
        }
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return Err(Error::BadConfig(format!("guidance weight must be >= 0, got {}", self.guidance_weight)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::BadConfig(format!("eta must be in [0, 1], got {}", self.eta)));
        }
        Ok(())
    }
}

/// Descending timesteps `T - floor(i T / n)` for `i = 0..n`; always starts at
/// `T` and ends at or above 1.
pub fn sampler_timesteps(timesteps: usize, num_steps: usize) -> Vec<usize> {
    (0..num_steps).map(|i| timesteps - i * timesteps / num_steps).collect()
}

/// SplitMix64 finalizer used to derive independent stream seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

struct ChainItem<'a> {
    class: Option<usize>,
    known: Option<&'a PartialTexture>,
}

fn check_model(params: &DenoiserParams<f32>, schedule: &NoiseSchedule) -> Result<()> {
    if params.config.timesteps < schedule.timesteps {
        return Err(Error::BadConfig(format!(
            "model accepts timesteps up to {} but schedule has {}",
            params.config.timesteps, schedule.timesteps
        )));
    }
    Ok(())
}

/// Predicts guided noise for every chain item at its current state.
fn predict(params: &DenoiserParams<f32>, items: &[ChainItem], xs: &[Vec<f32>], t: usize, w: f64) -> Result<Vec<Vec<f32>>> {
    let null = params.config.null_class();
    // Every item gets an unconditional pass; items with a class also get a
    // conditional one.
    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        jobs.push((i, null));
        if let Some(c) = item.class {
            jobs.push((i, c));
        }
    }
    let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(SAMPLE_CHUNK) {
        let mut x = Vec::with_capacity(chunk.len() * xs[0].len());
        for &(i, _) in chunk {
            x.extend_from_slice(&xs[i]);
        }
        let ts = vec![t; chunk.len()];
        let cs: Vec<usize> = chunk.iter().map(|&(_, c)| c).collect();
        let out = denoiser::forward(params, &x, &ts, &cs)?;
        outputs.extend(out.chunks_exact(xs[0].len()).map(|s| s.to_vec()));
    }
    let mut eps = Vec::with_capacity(items.len());
    let mut k = 0;
    for item in items {
        let uncond = std::mem::take(&mut outputs[k]);
        k += 1;
        if item.class.is_some() {
            let cond = std::mem::take(&mut outputs[k]);
            k += 1;
            eps.push(guided_epsilon(&cond, &uncond, w)?);
        } else {
            eps.push(uncond);
        }
    }
    Ok(eps)
}

fn run_chain(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    items: &[ChainItem],
) -> Result<Vec<TextureMap>> {
    sampler.validate(schedule)?;
    check_model(params, schedule)?;
    let r = params.config.texture_resolution;
    let null = params.config.null_class();
    for item in items {
        if let Some(c) = item.class {
            if c > null {
                return Err(Error::BadClass { class: c, null });
            }
        }
        if let Some(k) = item.known {
            if k.resolution() != r {
                return Err(Error::ResolutionMismatch {
                    expected: format!("{r}x{r} texture"),
                    actual: format!("{0}x{0} texture", k.resolution()),
                });
            }
        }
    }
    let items: Vec<ChainItem> = items
        .iter()
        .map(|it| ChainItem { class: it.class.filter(|&c| c != null), known: it.known })
        .collect();
    let w = sampler.guidance_weight;
    ddim_chain(schedule, sampler, r, &items, |items, xs, t| predict(params, items, xs, t, w))
}

/// The DDIM loop proper, for any noise predictor `eps(items, x_t, t)`.
fn ddim_chain(
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    r: usize,
    items: &[ChainItem],
    mut eps_fn: impl FnMut(&[ChainItem], &[Vec<f32>], usize) -> Result<Vec<Vec<f32>>>,
) -> Result<Vec<TextureMap>> {
    let len = r * r * 3;
    let mut main_rngs: Vec<ChaCha8Rng> = (0..items.len())
        .map(|i| ChaCha8Rng::seed_from_u64(derive_seed(sampler.seed, 0, i as u64)))
        .collect();
    let mut known_rngs: Vec<ChaCha8Rng> = (0..items.len())
        .map(|i| ChaCha8Rng::seed_from_u64(derive_seed(sampler.seed, 1, i as u64)))
        .collect();
    let mut xs: Vec<Vec<f32>> = main_rngs.iter_mut().map(|rng| normals(rng, len)).collect();

    let replace = |x: &mut Vec<f32>, known: &PartialTexture, t: usize, rng: &mut ChaCha8Rng| -> Result<()> {
        let eps = normals(rng, len);
        let noised = q_sample(&known.values.data, t, &eps, schedule)?;
        for (texel, &valid) in known.valid.iter().enumerate() {
            if valid {
                x[3 * texel..3 * texel + 3].copy_from_slice(&noised[3 * texel..3 * texel + 3]);
            }
        }
        Ok(())
    };

    let steps = sampler_timesteps(schedule.timesteps, sampler.num_steps);
    for (i, item) in items.iter().enumerate() {
        if let Some(k) = item.known {
            replace(&mut xs[i], k, steps[0], &mut known_rngs[i])?;
        }
    }
    for (s, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(s + 1).copied().unwrap_or(0);
        let eps = eps_fn(items, &xs, t)?;
        let ab = schedule.alpha_bars[t];
        let ab_prev = schedule.alpha_bars[t_prev];
        let sigma = sampler.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        let dir_coef = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        for (i, item) in items.iter().enumerate() {
            let noise = if sigma > 0.0 { normals(&mut main_rngs[i], len) } else { Vec::new() };
            let x = &mut xs[i];
            for k in 0..len {
                let e = eps[i][k] as f64;
                let mut x0 = (x[k] as f64 - (1.0 - ab).sqrt() * e) / ab.sqrt();
                if sampler.clamp_x0 {
                    x0 = x0.clamp(-1.0, 1.0);
                }
                let mut next = ab_prev.sqrt() * x0 + dir_coef * e;
                if sigma > 0.0 {
                    next += sigma * noise[k] as f64;
                }
                x[k] = next as f32;
            }
            if let Some(known) = item.known {
                if t_prev > 0 {
                    replace(x, known, t_prev, &mut known_rngs[i])?;
                }
            }
        }
    }
    Ok(items
        .iter()
        .zip(xs)
        .map(|(item, x)| {
            let mut data: Vec<f32> = x.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            if let Some(known) = item.known {
                for (texel, &valid) in known.valid.iter().enumerate() {
                    if valid {
                        data[3 * texel..3 * texel + 3].copy_from_slice(&known.values.data[3 * texel..3 * texel + 3]);
                    }
                }
            }
            TextureMap { resolution: r, data }
        })
        .collect())
}

/// Draws one texture. `class = None` (or the null class) samples
/// unconditionally; otherwise guidance mixes conditional and null passes.
pub fn sample(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    class: Option<usize>,
) -> Result<TextureMap> {
    Ok(sample_batch(params, schedule, sampler, &[class])?.remove(0))
}

/// Draws one texture per entry of `classes`; item `i` uses seed streams
/// derived from `(sampler.seed, i)`, so item 0 reproduces [`sample`].
pub fn sample_batch(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    classes: &[Option<usize>],
) -> Result<Vec<TextureMap>> {
    let items: Vec<ChainItem> = classes.iter().map(|&class| ChainItem { class, known: None }).collect();
    run_chain(params, schedule, sampler, &items)
}

/// Completes `u_part`: after every step the valid texels are overwritten by a
/// freshly noised copy of the known values at the next timestep, and the
/// result carries the known values verbatim.
pub fn inpaint(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    u_part: &PartialTexture,
    class: Option<usize>,
) -> Result<TextureMap> {
    Ok(inpaint_batch(params, schedule, sampler, std::slice::from_ref(u_part), &[class])?.remove(0))
}

pub fn inpaint_batch(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    parts: &[PartialTexture],
    classes: &[Option<usize>],
) -> Result<Vec<TextureMap>> {
    if parts.len() != classes.len() {
        return Err(Error::shape(&[parts.len()], &[classes.len()]));
    }
    let items: Vec<ChainItem> =
        parts.iter().zip(classes).map(|(p, &class)| ChainItem { class, known: Some(p) }).collect();
    run_chain(params, schedule, sampler, &items)
}

/// Intermediate and final textures of single-image estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub u_part: PartialTexture,
    pub u_full: TextureMap,
}

/// Projects the silhouette-masked pixels of `x` into the atlas, erodes the
/// observed region by `erode_radius` texels and inpaints the rest.
#[allow(clippy::too_many_arguments)]
pub fn estimate_from_image(
    x: &Image,
    d: &CorrespondenceMap,
    s: &Silhouette,
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    class: Option<usize>,
    erode_radius: usize,
) -> Result<Estimate> {
    let masked = mask_correspondence(d, s)?;
    let u_part = erode_validity(&project(x, &masked, params.config.texture_resolution)?, erode_radius);
    let u_full = inpaint(params, schedule, sampler, &u_part, class)?;
    Ok(Estimate { u_part, u_full })
}

/// Training-loop settings. `iterations` is the total target; a resumed run
/// continues from the optimizer's step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f32,
    pub cond_drop_prob: f64,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 20_000, batch_size: 16, lr: 2e-4, cond_drop_prob: 0.1, seed: 0, log_every: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams<f32>,
    pub optimizer: OptimizerState,
    /// Loss of every iteration run in this call, in order.
    pub losses: Vec<f32>,
}

/// Minimizes the noise-prediction error with Adam. Each iteration draws its
/// batch from an RNG seeded by `(seed, iteration)`, so interrupted and
/// resumed runs reproduce the uninterrupted trajectory bit for bit.
pub fn train(
    params: DenoiserParams<f32>,
    textures: &[TextureMap],
    classes: &[usize],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    resume: Option<OptimizerState>,
    mut on_log: impl FnMut(u64, f32),
) -> Result<TrainOutcome> {
    if textures.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if classes.len() != textures.len() {
        return Err(Error::shape(&[textures.len()], &[classes.len()]));
    }
    if cfg.batch_size == 0 {
        return Err(Error::BadConfig("batch_size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.cond_drop_prob) {
        return Err(Error::BadConfig(format!("cond_drop_prob must be in [0, 1], got {}", cfg.cond_drop_prob)));
    }
    check_model(&params, schedule)?;
    let r = params.config.texture_resolution;
    let null = params.config.null_class();
    for (tex, &c) in textures.iter().zip(classes) {
        if tex.resolution != r {
            return Err(Error::ResolutionMismatch { expected: format!("{r}"), actual: format!("{}", tex.resolution) });
        }
        if c >= null {
            return Err(Error::BadClass { class: c, null });
        }
    }
    let mut params = params;
    let mut state = resume.unwrap_or_else(|| OptimizerState::new(params.data.len()));
    if state.m.len() != params.data.len() {
        return Err(Error::shape(&[params.data.len()], &[state.m.len()]));
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let len = r * r * 3;
    let mut losses = Vec::new();
    for iter in state.step..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, iter));
        let mut x0 = Vec::with_capacity(cfg.batch_size * len);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        let mut cs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = rng.random_range(0..textures.len());
            x0.extend_from_slice(&textures[idx].data);
            ts.push(rng.random_range(1..=schedule.timesteps));
            let drop = rng.random::<f64>() < cfg.cond_drop_prob;
            cs.push(if drop { null } else { classes[idx] });
        }
        let eps = normals(&mut rng, cfg.batch_size * len);
        let (loss, grads) = denoiser::loss_and_grads(&params, &x0, &ts, &eps, &cs, schedule)?;
        adam_step(&mut params.data, &grads, &mut state, &adam)?;
        losses.push(loss);
        if cfg.log_every > 0 && (iter + 1) % cfg.log_every == 0 {
            on_log(iter + 1, loss);
        }
    }
    Ok(TrainOutcome { params, optimizer: state, losses })
}
