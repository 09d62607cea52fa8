//! UV-space color grids.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{to_u8, write_rgb_png, Image};
use crate::tensor_io::RawTensor;

/// Square `R x R x 3` texture with values in `[-1, 1]`, row-major; row index
/// follows the atlas `v` axis (top row is `v = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub resolution: usize,
    pub data: Vec<f32>,
}

impl TextureMap {
    pub fn zeros(resolution: usize) -> Self {
        Self {
            resolution,
            data: vec![0.0; resolution * resolution * 3],
        }
    }

    pub fn constant(resolution: usize, value: [f32; 3]) -> Self {
        let mut t = Self::zeros(resolution);
        for px in t.data.chunks_exact_mut(3) {
            px.copy_from_slice(&value);
        }
        t
    }

    pub fn from_data(resolution: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != resolution * resolution * 3 {
            return Err(Error::shape(&[resolution, resolution, 3], &[data.len()]));
        }
        Ok(Self { resolution, data })
    }

    #[inline]
    pub fn texel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = 3 * (row * self.resolution + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_texel(&mut self, row: usize, col: usize, v: [f32; 3]) {
        let i = 3 * (row * self.resolution + col);
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// Bilinear lookup at atlas coordinate `(u, v)` with clamp-to-edge
    /// addressing. Texel `(row, col)` has its center at
    /// `((col + 0.5) / R, (row + 0.5) / R)`.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f32; 3] {
        let r = self.resolution;
        let x = u * r as f64 - 0.5;
        let y = v * r as f64 - 0.5;
        let x0f = x.floor();
        let y0f = y.floor();
        let fx = (x - x0f) as f32;
        let fy = (y - y0f) as f32;
        let clamp = |i: f64| -> usize { i.max(0.0).min((r - 1) as f64) as usize };
        let (x0, x1) = (clamp(x0f), clamp(x0f + 1.0));
        let (y0, y1) = (clamp(y0f), clamp(y0f + 1.0));
        let a = self.texel(y0, x0);
        let b = self.texel(y0, x1);
        let c = self.texel(y1, x0);
        let d = self.texel(y1, x1);
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            let top = lerp(a[k], b[k], fx);
            let bottom = lerp(c[k], d[k], fx);
            out[k] = lerp(top, bottom, fy);
        }
        out
    }

    pub fn to_tensor(&self) -> RawTensor {
        RawTensor {
            dims: vec![self.resolution, self.resolution, 3],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: RawTensor) -> Result<Self> {
        match t.dims.as_slice() {
            [h, w, 3] if h == w => Ok(Self {
                resolution: *h,
                data: t.data,
            }),
            _ => Err(Error::shape(&[0, 0, 3], &t.dims)),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_tensor().write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_tensor(RawTensor::read(path)?)
    }

    /// The texture as an image with values mapped to `[0, 1]`.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.resolution,
            height: self.resolution,
            data: self.data.iter().map(|&v| ((v + 1.0) * 0.5).clamp(0.0, 1.0)).collect(),
        }
    }

    /// 8-bit preview with values mapped from `[-1, 1]` to `[0, 1]`.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8((v + 1.0) * 0.5)).collect();
        write_rgb_png(path, self.resolution, self.resolution, &bytes)
    }
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}
