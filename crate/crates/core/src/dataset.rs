//! Procedural outfit textures, on-disk training sets, a nearest-centroid
//! outfit classifier and curated model-sampled datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserParams;
use crate::diffusion::{derive_seed, sample_batch, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::mesh_uv::TexelTable;
use crate::texture::TextureMap;

/// Brightness factor of the dark bands of striped parts.
pub const STRIPE_DARKEN: f32 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Pattern {
    Solid,
    /// Bands along atlas rows: the first half of every `period` rows keeps
    /// the base color, the second half is darkened.
    HorizontalStripes { period: usize },
}

/// Color of one body part: mean RGB in `[0, 1]` and a per-texture uniform
/// jitter half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartColor {
    pub mean: [f32; 3],
    pub jitter: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: usize,
    pub name: String,
    /// Indexed by part id.
    pub palette: Vec<PartColor>,
    /// Which parts the pattern applies to (others are solid).
    pub patterned_parts: Vec<usize>,
    pub pattern: Pattern,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        for c in &self.palette {
            if c.mean.iter().any(|v| !(0.0..=1.0).contains(v)) || !(c.jitter >= 0.0) {
                return Err(Error::BadConfig(format!("class {:?}: palette color out of range", self.name)));
            }
        }
        if let Pattern::HorizontalStripes { period } = self.pattern {
            if period < 2 {
                return Err(Error::BadConfig(format!("class {:?}: stripe period must be >= 2", self.name)));
            }
        }
        if self.patterned_parts.iter().any(|&p| p >= self.palette.len()) {
            return Err(Error::BadConfig(format!("class {:?}: patterned part out of range", self.name)));
        }
        Ok(())
    }

    /// Same spec with every jitter set to zero.
    pub fn without_jitter(&self) -> Self {
        let mut s = self.clone();
        s.palette.iter_mut().for_each(|c| c.jitter = 0.0);
        s
    }
}

const SKIN: [f32; 3] = [0.85, 0.68, 0.55];
const JITTER: f32 = 0.05;

fn class(id: usize, name: &str, parts: [[f32; 3]; 6], striped: &[usize], pattern: Pattern) -> ClassSpec {
    ClassSpec {
        id,
        name: name.to_string(),
        palette: parts.iter().map(|&mean| PartColor { mean, jitter: JITTER }).collect(),
        patterned_parts: striped.to_vec(),
        pattern,
    }
}

/// The eight built-in outfit classes (part order: head, torso, left arm,
/// right arm, left leg, right leg).
pub fn default_classes() -> Vec<ClassSpec> {
    let stripes = Pattern::HorizontalStripes { period: 8 };
    let solid = Pattern::Solid;
    vec![
        class(
            0,
            "casual outfit",
            [SKIN, [0.20, 0.42, 0.80], SKIN, SKIN, [0.16, 0.22, 0.45], [0.16, 0.22, 0.45]],
            &[],
            solid,
        ),
        class(
            1,
            "military soldier",
            [[0.36, 0.40, 0.22], [0.38, 0.42, 0.22], [0.38, 0.42, 0.22], [0.38, 0.42, 0.22], [0.30, 0.33, 0.18], [0.30, 0.33, 0.18]],
            &[1, 2, 3],
            stripes,
        ),
        class(
            2,
            "race car driver",
            [[0.95, 0.95, 0.95], [0.86, 0.10, 0.10], [0.86, 0.10, 0.10], [0.86, 0.10, 0.10], [0.86, 0.10, 0.10], [0.86, 0.10, 0.10]],
            &[],
            solid,
        ),
        class(
            3,
            "pirate",
            [[0.80, 0.20, 0.18], [0.92, 0.90, 0.84], SKIN, SKIN, [0.10, 0.10, 0.10], [0.10, 0.10, 0.10]],
            &[1],
            stripes,
        ),
        class(
            4,
            "superhero",
            [[0.10, 0.20, 0.80], [0.10, 0.20, 0.80], [0.10, 0.20, 0.80], [0.10, 0.20, 0.80], [0.82, 0.12, 0.12], [0.82, 0.12, 0.12]],
            &[],
            solid,
        ),
        class(
            5,
            "futuristic astronaut",
            [[0.15, 0.20, 0.30], [0.85, 0.88, 0.92], [0.85, 0.88, 0.92], [0.85, 0.88, 0.92], [0.80, 0.84, 0.88], [0.80, 0.84, 0.88]],
            &[],
            solid,
        ),
        class(
            6,
            "hippie outfit",
            [SKIN, [0.95, 0.70, 0.20], SKIN, SKIN, [0.55, 0.30, 0.62], [0.55, 0.30, 0.62]],
            &[1, 4, 5],
            stripes,
        ),
        class(
            7,
            "business outfit",
            [SKIN, [0.22, 0.22, 0.28], [0.22, 0.22, 0.28], [0.22, 0.22, 0.28], [0.18, 0.18, 0.22], [0.18, 0.18, 0.22]],
            &[],
            solid,
        ),
    ]
}

/// Colors every covered texel from its part's palette entry (plus one
/// uniform jitter draw per part and channel), applies the pattern, and
/// leaves uncovered texels at 0. Returns the texture and the class id.
pub fn gen_texture(spec: &ClassSpec, table: &TexelTable, seed: u64) -> Result<(TextureMap, usize)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors: Vec<[f32; 3]> = spec
        .palette
        .iter()
        .map(|c| {
            let mut out = c.mean;
            for v in out.iter_mut() {
                if c.jitter > 0.0 {
                    *v += rng.random_range(-c.jitter..=c.jitter);
                }
                *v = v.clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    let r = table.resolution;
    let mut tex = TextureMap::zeros(r);
    for row in 0..r {
        for col in 0..r {
            let Some(part) = table.part(row, col) else { continue };
            let Some(&base) = colors.get(part) else {
                return Err(Error::BadConfig(format!(
                    "class {:?} has no color for part {part}",
                    spec.name
                )));
            };
            let dark = match spec.pattern {
                Pattern::HorizontalStripes { period } if spec.patterned_parts.contains(&part) => {
                    row % period >= period / 2
                }
                _ => false,
            };
            let k = if dark { STRIPE_DARKEN } else { 1.0 };
            tex.set_texel(row, col, base.map(|c| 2.0 * c * k - 1.0));
        }
    }
    Ok((tex, spec.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub class: usize,
    pub seed: u64,
    pub sha256: String,
}

/// `index.json`: manifest of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub resolution: usize,
    pub n_per_class: usize,
    pub entries: Vec<IndexEntry>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_bytes(path, text.as_bytes())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `n_per_class` textures per class under `dir/textures/`, plus
/// `index.json` and `classes.json`. Texture `i` of class `c` uses seed
/// `derive_seed(seed, c, i)`; entries are ordered by class, then index.
pub fn build_training_set(
    specs: &[ClassSpec],
    table: &TexelTable,
    n_per_class: usize,
    seed: u64,
    dir: &Path,
    previews: bool,
) -> Result<DatasetIndex> {
    if n_per_class == 0 {
        return Err(Error::BadConfig("n_per_class must be at least 1".into()));
    }
    let mut entries = Vec::with_capacity(specs.len() * n_per_class);
    for spec in specs {
        for i in 0..n_per_class {
            let tex_seed = derive_seed(seed, spec.id as u64, i as u64);
            let (tex, class) = gen_texture(spec, table, tex_seed)?;
            let file = format!("textures/{:02}_{:04}.uvt", class, i);
            let bytes = tex.to_tensor().encode();
            write_bytes(&dir.join(&file), &bytes)?;
            if previews {
                tex.write_png(&dir.join(file.replace(".uvt", ".png")))?;
            }
            entries.push(IndexEntry { file, class, seed: tex_seed, sha256: sha256_hex(&bytes) });
        }
    }
    let index = DatasetIndex { seed, resolution: table.resolution, n_per_class, entries };
    write_json(&dir.join("index.json"), &index)?;
    write_json(&dir.join("classes.json"), &specs)?;
    Ok(index)
}

/// Loads every texture listed in `dir/index.json`, verifying checksums.
pub fn load_training_set(dir: &Path) -> Result<(DatasetIndex, Vec<TextureMap>, Vec<usize>)> {
    let index_path = dir.join("index.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: DatasetIndex =
        serde_json::from_str(&text).map_err(|e| Error::format(&index_path, e.to_string()))?;
    if index.entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut textures = Vec::with_capacity(index.entries.len());
    let mut classes = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let path: PathBuf = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        if sha256_hex(&bytes) != e.sha256 {
            return Err(Error::format(&path, "checksum mismatch"));
        }
        let tex = TextureMap::from_tensor(crate::tensor_io::RawTensor::decode(&bytes, &path)?)?;
        textures.push(tex);
        classes.push(e.class);
    }
    Ok((index, textures, classes))
}

pub fn load_classes(path: &Path) -> Result<Vec<ClassSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specs: Vec<ClassSpec> = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

/// Mean color (in `[0, 1]`) of each part's texels, concatenated.
pub fn part_features(texture: &TextureMap, table: &TexelTable, num_parts: usize) -> Vec<f64> {
    let mut sums = vec![[0.0f64; 3]; num_parts];
    let mut counts = vec![0usize; num_parts];
    for (i, part) in table.part_of_texel.iter().enumerate() {
        if let Some(p) = *part {
            if p < num_parts {
                for k in 0..3 {
                    sums[p][k] += (texture.data[3 * i + k] as f64 + 1.0) * 0.5;
                }
                counts[p] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .flat_map(|(s, &n)| s.map(|v| if n > 0 { v / n as f64 } else { 0.0 }))
        .collect()
}

/// Nearest-centroid classifier over per-part mean colors; centroids are the
/// jitter-free textures of each class.
#[derive(Debug, Clone, PartialEq)]
pub struct OutfitClassifier {
    pub centroids: Vec<Vec<f64>>,
    pub num_parts: usize,
    table: TexelTable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Distance to the runner-up centroid minus distance to the nearest.
    pub margin: f64,
}

impl OutfitClassifier {
    pub fn new(specs: &[ClassSpec], table: &TexelTable) -> Result<Self> {
        if specs.len() < 2 {
            return Err(Error::BadConfig("classifier needs at least two classes".into()));
        }
        let num_parts = specs.iter().map(|s| s.palette.len()).min().unwrap_or(0);
        let mut centroids = Vec::with_capacity(specs.len());
        for s in specs {
            let (tex, _) = gen_texture(&s.without_jitter(), table, 0)?;
            centroids.push(part_features(&tex, table, num_parts));
        }
        Ok(Self { centroids, num_parts, table: table.clone() })
    }

    fn distances(&self, texture: &TextureMap) -> Vec<f64> {
        let f = part_features(texture, &self.table, self.num_parts);
        self.centroids
            .iter()
            .map(|cen| cen.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .collect()
    }

    pub fn predict(&self, texture: &TextureMap) -> Prediction {
        let mut d: Vec<(f64, usize)> = self.distances(texture).into_iter().zip(0..).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Prediction { class: d[0].1, margin: d[1].0 - d[0].0 }
    }

    /// Signed margin of `class`: distance to the nearest other centroid minus
    /// distance to the centroid of `class`. Positive exactly when `class` is
    /// the unique prediction.
    pub fn class_margin(&self, texture: &TextureMap, class: usize) -> f64 {
        let d = self.distances(texture);
        let other = d.iter().enumerate().filter(|&(k, _)| k != class).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
        other - d.get(class).copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledEntry {
    pub file: Option<String>,
    pub class: usize,
    pub item: usize,
    pub predicted: usize,
    /// Signed margin of the conditioning class (see [`OutfitClassifier::class_margin`]).
    pub margin: f64,
    pub accepted: bool,
}

/// `provenance.json` of a sampled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledDataset {
    pub sampler: SamplerConfig,
    pub model: crate::denoiser::DenoiserConfig,
    pub curation_threshold: f64,
    pub entries: Vec<SampledEntry>,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

/// Samples `n_per_class` textures for each class and keeps those whose
/// signed class margin reaches `curation_threshold`: any positive threshold
/// also requires the classifier to agree with the conditioning class, and
/// `-inf` keeps everything. Accepted textures and `provenance.json` go to `dir`
/// when given. Item `k` of the combined batch (class-major order) uses the
/// sampler's per-item seed streams.
#[allow(clippy::too_many_arguments)]
pub fn build_sampled_dataset(
    params: &DenoiserParams<f32>,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    classes: &[usize],
    n_per_class: usize,
    curation_threshold: f64,
    classifier: &OutfitClassifier,
    dir: Option<&Path>,
) -> Result<SampledDataset> {
    let requests: Vec<Option<usize>> =
        classes.iter().flat_map(|&c| std::iter::repeat_n(Some(c), n_per_class)).collect();
    let textures = sample_batch(params, schedule, sampler, &requests)?;
    let mut entries = Vec::with_capacity(textures.len());
    let mut accepted = 0;
    for (item, (tex, req)) in textures.iter().zip(&requests).enumerate() {
        let class = req.expect("every request carries a class");
        let pred = classifier.predict(tex);
        let margin = classifier.class_margin(tex, class);
        let ok = margin >= curation_threshold;
        let mut file = None;
        if ok {
            accepted += 1;
            if let Some(dir) = dir {
                let name = format!("textures/{:02}_{:04}.uvt", class, item);
                let path = dir.join(&name);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                tex.write(&path)?;
                file = Some(name);
            }
        }
        entries.push(SampledEntry { file, class, item, predicted: pred.class, margin, accepted: ok });
    }
    let out = SampledDataset {
        sampler: sampler.clone(),
        model: params.config.clone(),
        curation_threshold,
        acceptance_rate: accepted as f64 / entries.len().max(1) as f64,
        accepted,
        entries,
    };
    if let Some(dir) = dir {
        write_json(&dir.join("provenance.json"), &out)?;
    }
    Ok(out)
}
