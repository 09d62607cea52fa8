//! Image similarity metrics and multi-view texture evaluation.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh_uv::Mesh;
use crate::renderer::{render, Camera};
use crate::texture::TextureMap;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// SSIM on channel-mean grayscale with dynamic range 1, averaged over
/// non-overlapping `8 x 8` tiles.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, None, SSIM_WINDOW, SSIM_K1, SSIM_K2, 1.0)
}

/// SSIM restricted to pixels where `mask` is set: each tile uses only its
/// masked pixels and tiles without any are skipped.
pub fn ssim_masked(a: &Image, b: &Image, mask: &[bool]) -> Result<f64> {
    ssim_with(a, b, Some(mask), SSIM_WINDOW, SSIM_K1, SSIM_K2, 1.0)
}

/// General tile SSIM. Tiles start every `window` pixels; when the size is not
/// a multiple of `window`, the last row/column of tiles is narrower so every
/// pixel belongs to exactly one tile. Statistics are population moments.
#[allow(clippy::too_many_arguments)]
pub fn ssim_with(
    a: &Image,
    b: &Image,
    mask: Option<&[bool]>,
    window: usize,
    k1: f64,
    k2: f64,
    range: f64,
) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(&[a.height, a.width], &[b.height, b.width]));
    }
    if let Some(m) = mask {
        if m.len() != a.width * a.height {
            return Err(Error::shape(&[a.height * a.width], &[m.len()]));
        }
    }
    if window == 0 || a.width < window || a.height < window {
        return Err(Error::TooSmall { width: a.width, height: a.height, window });
    }
    let ga = a.grayscale();
    let gb = b.grayscale();
    let c1 = (k1 * range).powi(2);
    let c2 = (k2 * range).powi(2);
    let mut total = 0.0;
    let mut tiles = 0usize;
    for y0 in (0..a.height).step_by(window) {
        for x0 in (0..a.width).step_by(window) {
            let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
            let idx = |x: usize, y: usize| y * a.width + x;
            let rows = y0..(y0 + window).min(a.height);
            let cols = x0..(x0 + window).min(a.width);
            for y in rows.clone() {
                for x in cols.clone() {
                    let i = idx(x, y);
                    if mask.is_none_or(|m| m[i]) {
                        n += 1.0;
                        sa += ga[i];
                        sb += gb[i];
                    }
                }
            }
            if n == 0.0 {
                continue;
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in rows.clone() {
                for x in cols.clone() {
                    let i = idx(x, y);
                    if mask.is_none_or(|m| m[i]) {
                        let (da, db) = (ga[i] - ma, gb[i] - mb);
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
            }
            let (va, vb, cov) = (va / n, vb / n, cov / n);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            tiles += 1;
        }
    }
    if tiles == 0 {
        return Err(Error::BadConfig("ssim mask selects no pixels".into()));
    }
    Ok(total / tiles as f64)
}

/// `10 log10(L^2 / MSE)` over all channels, `f64::INFINITY` for identical
/// images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(&[a.height, a.width], &[b.height, b.width]));
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// Total amount by which red exceeds green, `sum max(0, r - g)` in `[0, 1]`
/// color units, over the texels selected by `mask`.
pub fn red_leakage(texture: &TextureMap, mask: &[bool]) -> f64 {
    texture
        .data
        .chunks_exact(3)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(px, _)| ((px[0] as f64 - px[1] as f64) * 0.5).max(0.0))
        .sum()
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Full,
    Silhouette,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedCamera {
    pub name: String,
    pub camera: Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViewMetrics {
    pub camera: String,
    pub ssim: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim_masked: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr_masked: f64,
}

/// Per-view scores plus aggregates. `mean_ssim`/`mean_psnr` follow
/// `mask_mode`; the `_full` and `_masked` means are always reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mask_mode: MaskMode,
    pub views: Vec<ViewMetrics>,
    pub mean_ssim: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub mean_psnr: f64,
    pub mean_ssim_full: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub mean_psnr_full: f64,
    pub mean_ssim_masked: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub mean_psnr_masked: f64,
    pub cameras: Vec<NamedCamera>,
    pub background: [f32; 3],
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Renders both textures from every camera and compares the frames, both in
/// full and with pixels outside the intersection of the two silhouettes
/// replaced by the shared background.
pub fn evaluate_multiview(
    mesh: &Mesh,
    texture_est: &TextureMap,
    texture_gt: &TextureMap,
    cameras: &[NamedCamera],
    mask_mode: MaskMode,
    background: [f32; 3],
) -> Result<EvalReport> {
    if cameras.is_empty() {
        return Err(Error::BadConfig("evaluation needs at least one camera".into()));
    }
    if texture_est.resolution != texture_gt.resolution {
        return Err(Error::ResolutionMismatch {
            expected: format!("{}", texture_gt.resolution),
            actual: format!("{}", texture_est.resolution),
        });
    }
    let mut views = Vec::with_capacity(cameras.len());
    for nc in cameras {
        let est = render(mesh, texture_est, &nc.camera, background)?;
        let gt = render(mesh, texture_gt, &nc.camera, background)?;
        let mut est_m = est.color.clone();
        let mut gt_m = gt.color.clone();
        for i in 0..est.silhouette.data.len() {
            if est.silhouette.data[i] == 0 || gt.silhouette.data[i] == 0 {
                est_m.data[3 * i..3 * i + 3].copy_from_slice(&background);
                gt_m.data[3 * i..3 * i + 3].copy_from_slice(&background);
            }
        }
        views.push(ViewMetrics {
            camera: nc.name.clone(),
            ssim: ssim(&est.color, &gt.color)?,
            psnr: psnr(&est.color, &gt.color)?,
            ssim_masked: ssim(&est_m, &gt_m)?,
            psnr_masked: psnr(&est_m, &gt_m)?,
        });
    }
    let mean_ssim_full = mean(views.iter().map(|v| v.ssim));
    let mean_psnr_full = mean(views.iter().map(|v| v.psnr));
    let mean_ssim_masked = mean(views.iter().map(|v| v.ssim_masked));
    let mean_psnr_masked = mean(views.iter().map(|v| v.psnr_masked));
    let (mean_ssim, mean_psnr) = match mask_mode {
        MaskMode::Full => (mean_ssim_full, mean_psnr_full),
        MaskMode::Silhouette => (mean_ssim_masked, mean_psnr_masked),
    };
    Ok(EvalReport {
        mask_mode,
        views,
        mean_ssim,
        mean_psnr,
        mean_ssim_full,
        mean_psnr_full,
        mean_ssim_masked,
        mean_psnr_masked,
        cameras: cameras.to_vec(),
        background,
    })
}
