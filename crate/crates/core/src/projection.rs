//! Image-to-atlas projection: mask correspondences by the silhouette and
//! splat visible pixel colors into a partial UV texture.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{to_u8, write_rgb_png, Image};
use crate::renderer::{CorrespondenceMap, Silhouette};
use crate::tensor_io::RawTensor;
use crate::texture::TextureMap;

/// Partially observed texture. Invalid texels hold exactly 0 and have no hits.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTexture {
    pub values: TextureMap,
    pub valid: Vec<bool>,
    pub hits: Vec<u32>,
}

impl PartialTexture {
    pub fn empty(resolution: usize) -> Self {
        let n = resolution * resolution;
        Self { values: TextureMap::zeros(resolution), valid: vec![false; n], hits: vec![0; n] }
    }

    /// Fully observed texture (every texel valid with one hit).
    pub fn from_full(texture: &TextureMap) -> Self {
        let n = texture.resolution * texture.resolution;
        Self { values: texture.clone(), valid: vec![true; n], hits: vec![1; n] }
    }

    pub fn resolution(&self) -> usize {
        self.values.resolution
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Keeps only texels where `mask` is set.
    pub fn restrict(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                out.invalidate(i);
            }
        }
        out
    }

    fn invalidate(&mut self, i: usize) {
        self.valid[i] = false;
        self.hits[i] = 0;
        self.values.data[3 * i..3 * i + 3].fill(0.0);
    }

    /// Baseline completion: every invalid texel takes the mean color of the
    /// valid ones (0 when nothing is valid).
    pub fn mean_fill(&self) -> TextureMap {
        let mut sum = [0.0f64; 3];
        let n = self.valid_count();
        for (i, _) in self.valid.iter().enumerate().filter(|(_, &v)| v) {
            for k in 0..3 {
                sum[k] += self.values.data[3 * i + k] as f64;
            }
        }
        let mean = sum.map(|s| if n > 0 { (s / n as f64) as f32 } else { 0.0 });
        let mut out = self.values.clone();
        for (i, &v) in self.valid.iter().enumerate() {
            if !v {
                out.data[3 * i..3 * i + 3].copy_from_slice(&mean);
            }
        }
        out
    }

    /// Writes `values` and the 0/1 validity grid as two `UVT1` files.
    pub fn write(&self, values: &Path, validity: &Path) -> Result<()> {
        self.values.write(values)?;
        let r = self.resolution();
        RawTensor { dims: vec![r, r], data: self.valid.iter().map(|&v| v as u8 as f32).collect() }.write(validity)
    }

    /// Reads the pair written by [`PartialTexture::write`]; hit counts are
    /// not stored, so valid texels come back with one hit.
    pub fn read(values: &Path, validity: &Path) -> Result<Self> {
        let values = TextureMap::read(values)?;
        let mask = RawTensor::read(validity)?;
        let r = values.resolution;
        if mask.dims != [r, r] {
            return Err(Error::ResolutionMismatch {
                expected: format!("{r}x{r} validity"),
                actual: format!("{:?}", mask.dims),
            });
        }
        let mut out = Self { values, valid: vec![false; r * r], hits: vec![0; r * r] };
        for (i, &m) in mask.data.iter().enumerate() {
            if m != 0.0 {
                out.valid[i] = true;
                out.hits[i] = 1;
            } else {
                out.invalidate(i);
            }
        }
        Ok(out)
    }

    /// Preview PNG with invalid texels drawn magenta.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let r = self.resolution();
        let mut bytes = Vec::with_capacity(r * r * 3);
        for (i, px) in self.values.data.chunks_exact(3).enumerate() {
            if self.valid[i] {
                bytes.extend(px.iter().map(|&v| to_u8((v + 1.0) * 0.5)));
            } else {
                bytes.extend_from_slice(&[255, 0, 255]);
            }
        }
        write_rgb_png(path, r, r, &bytes)
    }
}

/// Keeps correspondences only where the silhouette is set.
pub fn mask_correspondence(d: &CorrespondenceMap, s: &Silhouette) -> Result<CorrespondenceMap> {
    if (d.width, d.height) != (s.width, s.height) {
        return Err(Error::ResolutionMismatch {
            expected: format!("{}x{}", d.width, d.height),
            actual: format!("{}x{}", s.width, s.height),
        });
    }
    let mut out = d.clone();
    for (i, &m) in s.data.iter().enumerate() {
        if m == 0 {
            out.clear(i);
        }
    }
    Ok(out)
}

#[inline]
fn texel_index(coord: f32, resolution: usize) -> usize {
    ((coord as f64 * resolution as f64).floor().max(0.0) as usize).min(resolution - 1)
}

/// Splats every defined pixel of `x` into the texel containing its atlas
/// coordinate and averages contributions (in `[-1, 1]`, accumulated in f64).
pub fn project(x: &Image, d_masked: &CorrespondenceMap, resolution: usize) -> Result<PartialTexture> {
    if (x.width, x.height) != (d_masked.width, d_masked.height) {
        return Err(Error::ResolutionMismatch {
            expected: format!("{}x{}", d_masked.width, d_masked.height),
            actual: format!("{}x{}", x.width, x.height),
        });
    }
    if resolution == 0 {
        return Err(Error::BadResolution(resolution));
    }
    let n = resolution * resolution;
    let mut sums = vec![[0.0f64; 3]; n];
    let mut hits = vec![0u32; n];
    for (i, &defined) in d_masked.defined.iter().enumerate() {
        if !defined {
            continue;
        }
        let [u, v] = d_masked.uv[i];
        let t = texel_index(v, resolution) * resolution + texel_index(u, resolution);
        let c = &x.data[3 * i..3 * i + 3];
        for k in 0..3 {
            sums[t][k] += 2.0 * c[k] as f64 - 1.0;
        }
        hits[t] += 1;
    }
    let mut out = PartialTexture::empty(resolution);
    for t in 0..n {
        if hits[t] > 0 {
            out.valid[t] = true;
            out.hits[t] = hits[t];
            for k in 0..3 {
                out.values.data[3 * t + k] = (sums[t][k] / hits[t] as f64) as f32;
            }
        }
    }
    Ok(out)
}

/// Morphological erosion of the validity mask with a square structuring
/// element of half-width `radius`; texels outside the grid count as invalid.
pub fn erode_validity(u_part: &PartialTexture, radius: usize) -> PartialTexture {
    if radius == 0 {
        return u_part.clone();
    }
    let r = u_part.resolution();
    let mut keep = vec![false; r * r];
    for row in 0..r {
        for col in 0..r {
            if !u_part.valid[row * r + col] {
                continue;
            }
            if row < radius || col < radius || row + radius >= r || col + radius >= r {
                continue;
            }
            keep[row * r + col] = (row - radius..=row + radius)
                .all(|y| (col - radius..=col + radius).all(|x| u_part.valid[y * r + x]));
        }
    }
    u_part.restrict(&keep)
}
