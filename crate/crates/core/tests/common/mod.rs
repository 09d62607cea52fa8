#![allow(dead_code)]

pub mod checks;
pub mod gradcheck;
pub mod smoke;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uvtex::denoiser::{init_params, param_layout, DenoiserConfig, DenoiserParams};

/// Outcome of one check: `Ok(detail)` or `Err(reason)`.
pub type Check = Result<String, String>;

/// `ensure!`-style helper for checks.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Tiny network whose zero output head is replaced by small random weights,
/// so its noise prediction is a non-trivial function of every input.
pub fn tiny_model(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams<f32> {
    let mut p = init_params(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for info in param_layout(cfg).unwrap() {
        if info.name.starts_with("out.conv") {
            for v in &mut p.data[info.offset..info.offset + info.len()] {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    p
}
