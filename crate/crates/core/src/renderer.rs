//! Deterministic software rasterizer producing color, pixel-to-surface
//! correspondences, silhouette, and depth for a textured mesh.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh_uv::{covered_barycentric, Mesh};
use crate::tensor_io::RawTensor;
use crate::texture::TextureMap;

pub const DEFAULT_BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

/// Named viewpoints around the bundled humanoid (which faces `+z`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraPreset {
    Frontal,
    Back,
    Left,
    Right,
}

impl CameraPreset {
    pub const ALL: [CameraPreset; 4] = [
        CameraPreset::Frontal,
        CameraPreset::Back,
        CameraPreset::Left,
        CameraPreset::Right,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CameraPreset::Frontal => "frontal",
            CameraPreset::Back => "back",
            CameraPreset::Left => "left",
            CameraPreset::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frontal" | "front" => Ok(CameraPreset::Frontal),
            "back" => Ok(CameraPreset::Back),
            "left" | "side" => Ok(CameraPreset::Left),
            "right" => Ok(CameraPreset::Right),
            _ => Err(Error::BadConfig(format!(
                "unknown camera preset {s:?} (expected frontal, back, left, right)"
            ))),
        }
    }

    pub fn camera(self, width: usize, height: usize) -> Camera {
        const DIST: f64 = 3.2;
        let target = [0.0, 0.9, 0.0];
        let eye = match self {
            CameraPreset::Frontal => [0.0, 1.0, DIST],
            CameraPreset::Back => [0.0, 1.0, -DIST],
            CameraPreset::Left => [DIST, 1.0, 0.0],
            CameraPreset::Right => [-DIST, 1.0, 0.0],
        };
        Camera {
            eye,
            look_at: target,
            up: [0.0, 1.0, 0.0],
            vertical_fov: 36f64.to_radians(),
            width,
            height,
            near: 0.1,
            far: 100.0,
        }
    }
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Orthonormal camera frame: `right`, `up`, `forward`.
struct Frame {
    right: [f64; 3],
    up: [f64; 3],
    forward: [f64; 3],
    focal: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateCamera(m.to_string()));
        if !(self.near > 0.0) {
            return bad("near must be positive");
        }
        if !(self.far > self.near) {
            return bad("far must exceed near");
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return bad("field of view must lie in (0, pi)");
        }
        if self.width == 0 || self.height == 0 {
            return bad("resolution must be non-zero");
        }
        let f = sub3(self.look_at, self.eye);
        if dot3(f, f) == 0.0 {
            return bad("eye coincides with look_at");
        }
        let c = cross3(normalize3(f), self.up);
        if dot3(self.up, self.up) == 0.0 || dot3(c, c).sqrt() < 1e-9 {
            return bad("up is parallel to the view direction");
        }
        Ok(())
    }

    fn frame(&self) -> Frame {
        let forward = normalize3(sub3(self.look_at, self.eye));
        let right = normalize3(cross3(forward, self.up));
        let up = cross3(right, forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.vertical_fov).tan();
        Frame {
            right,
            up,
            forward,
            focal,
        }
    }
}

/// Per-pixel surface coordinates. `part` and `uv` are meaningful only where
/// `defined` is set (they are zero elsewhere).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub width: usize,
    pub height: usize,
    pub defined: Vec<bool>,
    pub part: Vec<u16>,
    pub uv: Vec<[f32; 2]>,
}

impl CorrespondenceMap {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            defined: vec![false; n],
            part: vec![0; n],
            uv: vec![[0.0; 2]; n],
        }
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|&&d| d).count()
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        self.defined[i] = false;
        self.part[i] = 0;
        self.uv[i] = [0.0; 2];
    }

    /// `H x W x 4` tensor of `[defined, part, u, v]`.
    pub fn to_tensor(&self) -> RawTensor {
        let mut data = Vec::with_capacity(self.defined.len() * 4);
        for i in 0..self.defined.len() {
            data.extend_from_slice(&[
                if self.defined[i] { 1.0 } else { 0.0 },
                self.part[i] as f32,
                self.uv[i][0],
                self.uv[i][1],
            ]);
        }
        RawTensor {
            dims: vec![self.height, self.width, 4],
            data,
        }
    }

    pub fn from_tensor(t: &RawTensor) -> Result<Self> {
        let [h, w, 4] = t.dims[..] else {
            return Err(Error::shape(&[0, 0, 4], &t.dims));
        };
        let mut out = Self::empty(w, h);
        for (i, px) in t.data.chunks_exact(4).enumerate() {
            if px[0] != 0.0 {
                out.defined[i] = true;
                out.part[i] = px[1] as u16;
                out.uv[i] = [px[2], px[3]];
            }
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_tensor().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tensor(&RawTensor::read(path)?)
    }
}

/// Binary foreground mask, values exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Silhouette {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Silhouette {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value as u8; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_tensor(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.height, self.width],
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(t: &RawTensor) -> Result<Self> {
        let [h, w] = t.dims[..] else {
            return Err(Error::shape(&[0, 0], &t.dims));
        };
        let mut data = Vec::with_capacity(w * h);
        for &v in &t.data {
            if v == 0.0 {
                data.push(0);
            } else if v == 1.0 {
                data.push(1);
            } else {
                return Err(Error::BadConfig(format!("silhouette value {v} is not 0/1")));
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_tensor().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tensor(&RawTensor::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Image,
    pub correspondence: CorrespondenceMap,
    pub silhouette: Silhouette,
    /// Camera-space depth per pixel, `f32::INFINITY` where nothing was hit.
    pub depth: Vec<f32>,
}

#[derive(Clone, Copy)]
struct ClipVertex {
    cam: [f64; 3], // (x, y, depth)
    bary: [f64; 3],
}

/// Renders `mesh` textured with `texture` over a uniform `background`.
///
/// Z-buffered rasterization with the top-left fill rule at pixel centers,
/// perspective-correct barycentric interpolation, near-plane clipping, and
/// bilinear clamp-to-edge texture lookup. Depth ties go to the lower face id.
pub fn render(
    mesh: &Mesh,
    texture: &TextureMap,
    camera: &Camera,
    background: [f32; 3],
) -> Result<RenderOutput> {
    camera.validate()?;
    let r = texture.resolution;
    if r < 4 || texture.data.len() != r * r * 3 {
        return Err(Error::ResolutionMismatch {
            expected: "square texture, resolution >= 4".into(),
            actual: format!("resolution {r} with {} values", texture.data.len()),
        });
    }
    let (w, h) = (camera.width, camera.height);
    let fr = camera.frame();
    let to_cam = |p: [f64; 3]| {
        let d = sub3(p, camera.eye);
        [dot3(d, fr.right), dot3(d, fr.up), dot3(d, fr.forward)]
    };
    let cam_verts: Vec<[f64; 3]> = mesh.vertices.iter().map(|&p| to_cam(p)).collect();
    let (cx, cy) = (0.5 * w as f64, 0.5 * h as f64);

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut hit_face = vec![usize::MAX; w * h];
    let mut hit_bary = vec![[0.0f64; 3]; w * h];

    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for (f, face) in mesh.faces.iter().enumerate() {
        let tri: Vec<ClipVertex> = (0..3)
            .map(|k| ClipVertex {
                cam: cam_verts[face[k]],
                bary: identity[k],
            })
            .collect();
        let poly = clip_near(&tri, camera.near);
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<[f64; 2]> = poly
            .iter()
            .map(|v| {
                [
                    cx + fr.focal * v.cam[0] / v.cam[2],
                    cy - fr.focal * v.cam[1] / v.cam[2],
                ]
            })
            .collect();
        for k in 1..poly.len() - 1 {
            let idx = [0, k, k + 1];
            let s = [screen[0], screen[k], screen[k + 1]];
            let (x0, x1, y0, y1) = pixel_span(&s, w, h);
            for py in y0..y1 {
                for px in x0..x1 {
                    let p = [px as f64 + 0.5, py as f64 + 0.5];
                    let Some(lambda) = covered_barycentric(s, p) else {
                        continue;
                    };
                    let mut inv_depth = 0.0;
                    let mut bary = [0.0; 3];
                    for j in 0..3 {
                        let v = &poly[idx[j]];
                        let wgt = lambda[j] / v.cam[2];
                        inv_depth += wgt;
                        for (b, vb) in bary.iter_mut().zip(v.bary) {
                            *b += wgt * vb;
                        }
                    }
                    let depth = 1.0 / inv_depth;
                    if depth > camera.far {
                        continue;
                    }
                    let i = py * w + px;
                    if depth < zbuf[i] {
                        zbuf[i] = depth;
                        hit_face[i] = f;
                        hit_bary[i] = bary.map(|b| b * depth);
                    }
                }
            }
        }
    }

    let mut color = Image::filled(w, h, background);
    let mut corr = CorrespondenceMap::empty(w, h);
    let mut sil = Silhouette::filled(w, h, false);
    let mut depth = vec![f32::INFINITY; w * h];
    for i in 0..w * h {
        let f = hit_face[i];
        if f == usize::MAX {
            continue;
        }
        let b = hit_bary[i];
        let uvc = mesh.uv_corners[f];
        let u = b[0] * uvc[0][0] + b[1] * uvc[1][0] + b[2] * uvc[2][0];
        let v = b[0] * uvc[0][1] + b[1] * uvc[1][1] + b[2] * uvc[2][1];
        let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        let s = texture.sample_bilinear(u, v);
        color.set_pixel(i % w, i / w, s.map(|c| ((c + 1.0) * 0.5).clamp(0.0, 1.0)));
        corr.defined[i] = true;
        corr.part[i] = mesh.part_labels[f] as u16;
        corr.uv[i] = [u as f32, v as f32];
        sil.data[i] = 1;
        depth[i] = zbuf[i] as f32;
    }
    Ok(RenderOutput {
        color,
        correspondence: corr,
        silhouette: sil,
        depth,
    })
}

fn pixel_span(s: &[[f64; 2]; 3], w: usize, h: usize) -> (usize, usize, usize, usize) {
    let lo_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let lo_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let hi_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = (lo - 0.5).ceil().clamp(0.0, n as f64) as usize;
        let b = ((hi - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
        (a, b.max(a))
    };
    let (x0, x1) = span(lo_x, hi_x, w);
    let (y0, y1) = span(lo_y, hi_y, h);
    (x0, x1, y0, y1)
}

fn clip_near(poly: &[ClipVertex], near: f64) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.cam[2] >= near, b.cam[2] >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a.cam[2]) / (b.cam[2] - a.cam[2]);
            let lerp = |x: [f64; 3], y: [f64; 3]| {
                [
                    x[0] + t * (y[0] - x[0]),
                    x[1] + t * (y[1] - x[1]),
                    x[2] + t * (y[2] - x[2]),
                ]
            };
            let mut cam = lerp(a.cam, b.cam);
            cam[2] = near;
            out.push(ClipVertex {
                cam,
                bary: lerp(a.bary, b.bary),
            });
        }
    }
    out
}

/// Simulates an imperfect correspondence estimator: Gaussian jitter on every
/// defined uv (clamped to the atlas) and a `dilation`-pixel growth of the
/// defined region that copies the nearest defined value. The silhouette is
/// returned untouched.
pub fn corrupt_correspondence(
    d: &CorrespondenceMap,
    s: &Silhouette,
    noise_sigma: f64,
    dilation: usize,
    seed: u64,
) -> Result<(CorrespondenceMap, Silhouette)> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::BadRange(format!("noise_sigma {noise_sigma} < 0")));
    }
    let mut out = d.clone();
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..out.defined.len() {
            if !out.defined[i] {
                continue;
            }
            let nu: f64 = StandardNormal.sample(&mut rng);
            let nv: f64 = StandardNormal.sample(&mut rng);
            let [u, v] = out.uv[i];
            out.uv[i] = [
                (u as f64 + noise_sigma * nu).clamp(0.0, 1.0) as f32,
                (v as f64 + noise_sigma * nv).clamp(0.0, 1.0) as f32,
            ];
        }
    }
    let (w, h) = (out.width, out.height);
    const NEIGHBORS: [(isize, isize); 8] = [
        (0, -1),
        (-1, 0),
        (1, 0),
        (0, 1),
        (-1, -1),
        (1, -1),
        (-1, 1),
        (1, 1),
    ];
    for _ in 0..dilation {
        let prev = out.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev.defined[i] {
                    continue;
                }
                for (dx, dy) in NEIGHBORS {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if prev.defined[j] {
                        out.defined[i] = true;
                        out.part[i] = prev.part[j];
                        out.uv[i] = prev.uv[j];
                        break;
                    }
                }
            }
        }
    }
    Ok((out, s.clone()))
}
