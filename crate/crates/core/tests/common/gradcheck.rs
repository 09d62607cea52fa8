use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uvtex::denoiser::{init_params, loss_and_grads, param_layout, DenoiserConfig, DenoiserParams};
use uvtex::diffusion::NoiseSchedule;

/// Resolution 8, base width 4, otherwise default shape.
pub fn tiny_config() -> DenoiserConfig {
    DenoiserConfig {
        texture_resolution: 8,
        base_channels: 4,
        channel_multipliers: vec![1, 2, 4],
        time_embed_dim: 8,
        num_classes: 3,
        timesteps: 1000,
        seed: 11,
    }
}

pub struct GradCheck {
    /// Worst `|fd - g| / max(|fd|, |g|, max_tensor |g|)` over all coordinates.
    pub worst_tensor_scaled: f64,
    /// Largest absolute discrepancy `|fd - g|`.
    pub worst_abs: f64,
    pub worst_name: String,
    pub coordinates: usize,
    /// Tensors whose analytic gradient is identically zero.
    pub dead_tensors: Vec<String>,
}

/// Central finite differences of the training loss for every parameter of
/// the tiny network in float64. The zero output head is replaced by small
/// random weights (and biases/shifts by small offsets) so every tensor sits
/// on a path with non-zero gradient.
pub fn run(h: f64) -> GradCheck {
    let cfg = tiny_config();
    let layout = param_layout(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p: DenoiserParams<f64> = init_params(&cfg).unwrap().cast();
    for info in &layout {
        let slot = &mut p.data[info.offset..info.offset + info.len()];
        if info.name.starts_with("out.conv") {
            slot.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        } else if info.name.ends_with("beta") || info.name.ends_with("bias") {
            slot.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let len = 2 * 8 * 8 * 3;
    let x0: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let (t, c) = ([37, 640], [1, 3]);
    let s = NoiseSchedule::default();
    let (_, g) = loss_and_grads(&p, &x0, &t, &eps, &c, &s).unwrap();
    let mut out = GradCheck {
        worst_tensor_scaled: 0.0,
        worst_abs: 0.0,
        worst_name: String::new(),
        coordinates: 0,
        dead_tensors: Vec::new(),
    };
    for info in &layout {
        let range = info.offset..info.offset + info.len();
        let scale = g[range.clone()].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            out.dead_tensors.push(info.name.clone());
        }
        for i in range {
            let orig = p.data[i];
            p.data[i] = orig + h;
            let (lp, _) = loss_and_grads(&p, &x0, &t, &eps, &c, &s).unwrap();
            p.data[i] = orig - h;
            let (lm, _) = loss_and_grads(&p, &x0, &t, &eps, &c, &s).unwrap();
            p.data[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - g[i]).abs();
            let mag = fd.abs().max(g[i].abs());
            let scaled = err / mag.max(scale).max(1e-300);
            if scaled > out.worst_tensor_scaled {
                out.worst_tensor_scaled = scaled;
                out.worst_name = info.name.clone();
            }
            out.worst_abs = out.worst_abs.max(err);
            out.coordinates += 1;
        }
    }
    out
}
