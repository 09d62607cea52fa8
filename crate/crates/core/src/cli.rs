//! The `uvtex` command line: argument parsing and the six subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{config_hash, RunConfig};
use crate::dataset::{
    build_sampled_dataset, build_training_set, default_classes, load_classes, load_training_set, ClassSpec,
    OutfitClassifier,
};
use crate::denoiser::{init_params, load_checkpoint, save_checkpoint, DenoiserParams};
use crate::diffusion::{estimate_from_image, sample_batch, train};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mesh_uv::build_texel_table;
use crate::metrics::{evaluate_multiview, red_leakage, MaskMode};
use crate::renderer::{corrupt_correspondence, render, CorrespondenceMap, Silhouette};
use crate::texture::TextureMap;

#[derive(Debug, Parser)]
#[command(name = "uvtex", version, about = "UV texture estimation from a single image with a diffusion prior")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand.
#[derive(Debug, Args, Default, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: runs/<command>-<config hash>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// OBJ mesh with a parts.json sidecar (default: bundled humanoid).
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Atlas resolution of generated data and of new models.
    #[arg(long, global = true)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the procedural training textures.
    Gendata(GendataArgs),
    /// Train (or resume training of) the denoiser.
    Train(TrainArgs),
    /// Draw textures from a trained model, optionally curated.
    Sample(SampleArgs),
    /// Estimate a full texture from an image, correspondences and silhouette.
    Fit(FitArgs),
    /// Render a texture on the mesh and export image, correspondences and silhouette.
    Render(RenderArgs),
    /// Compare two textures by multi-view rendering.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    /// Number of outfit classes (the first N of the built-in list).
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Also write PNG previews.
    #[arg(long)]
    pub previews: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Total iteration target (a resumed run continues up to it).
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Checkpoint (with optimizer state) to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Class id or name; `null` samples unconditionally. Default: every class.
    #[arg(long)]
    pub class: Option<String>,
    /// Samples per requested class.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Keep only samples the outfit classifier confirms; writes provenance.json.
    #[arg(long)]
    pub curate: bool,
    #[arg(long)]
    pub curation_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input RGB image (PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Dense correspondence map (`UVT1`, as written by `render`).
    #[arg(long)]
    pub correspondence: PathBuf,
    /// Foreground mask (`UVT1`, as written by `render`).
    #[arg(long)]
    pub silhouette: PathBuf,
    /// Optional class hint (id or name) enabling guidance.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub erode_radius: Option<usize>,
    /// Project every defined correspondence, ignoring the silhouette.
    #[arg(long)]
    pub no_silhouette_mask: bool,
    /// Ground-truth texture; adds a multi-view evaluation to the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Texture to render (`UVT1`).
    #[arg(long)]
    pub texture: PathBuf,
    /// Camera preset: frontal, back, left (alias side) or right.
    #[arg(long)]
    pub camera: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Standard deviation of uv jitter added to the exported correspondences.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Pixels by which the exported correspondences overrun the silhouette.
    #[arg(long)]
    pub dilation: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Comma-separated camera presets.
    #[arg(long, value_delimiter = ',')]
    pub cameras: Option<Vec<String>>,
    /// `silhouette` or `full`.
    #[arg(long)]
    pub mask_mode: Option<String>,
}

/// Runs a parsed command line and returns its output directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let mut cfg = match &cli.common.config {
        Some(p) => {
            require_file(p, "config")?;
            RunConfig::from_file(p)?
        }
        None => RunConfig::default(),
    };
    let c = &cli.common;
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.texture_resolution, c.resolution);
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.mesh.is_some() {
        cfg.mesh = c.mesh.clone();
    }
    match cli.command {
        Command::Gendata(a) => cmd_gendata(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Sample(a) => cmd_sample(cfg, a),
        Command::Fit(a) => cmd_fit(cfg, a),
        Command::Render(a) => cmd_render(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::BadConfig(format!("{what} not found: {}", path.display())))
    }
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = path.clone().ok_or_else(|| Error::BadConfig(format!("{flag} is required")))?;
    require_file(&p, flag.trim_start_matches('-'))?;
    Ok(p)
}

/// Validates the config, picks the output directory and records the resolved
/// config (plus command inputs) in `config.json` there.
fn prepare(command: &str, cfg: &RunConfig, inputs: serde_json::Value) -> Result<PathBuf> {
    cfg.validate()?;
    if let Some(m) = &cfg.mesh {
        require_file(m, "mesh")?;
    }
    let keyed = RunConfig { out: None, ..cfg.clone() };
    let hash = config_hash(&json!({ "command": command, "config": keyed, "inputs": inputs }));
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{}", &hash[..12])));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(
        &dir.join("config.json"),
        &json!({ "command": command, "config_hash": hash, "inputs": inputs, "config": cfg }),
    )?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn class_specs(cfg: &RunConfig) -> Result<Vec<ClassSpec>> {
    if let Some(dir) = &cfg.dataset {
        let p = dir.join("classes.json");
        if p.exists() {
            return load_classes(&p);
        }
    }
    Ok(default_classes().into_iter().take(cfg.num_classes).collect())
}

/// `null`/`none` → unconditional; otherwise an id or a class name
/// (case-insensitive, `_` matching spaces).
fn parse_class(s: &str, specs: &[ClassSpec], null: usize) -> Result<Option<usize>> {
    let key = s.trim().to_lowercase().replace('_', " ");
    if key == "null" || key == "none" {
        return Ok(None);
    }
    let id = match key.parse::<usize>() {
        Ok(id) => id,
        Err(_) => specs
            .iter()
            .find(|c| c.name.to_lowercase() == key)
            .map(|c| c.id)
            .ok_or_else(|| Error::BadConfig(format!("unknown class {s:?}")))?,
    };
    if id >= null {
        return Err(Error::BadClass { class: id, null });
    }
    Ok(Some(id))
}

fn load_model(path: &Path) -> Result<DenoiserParams<f32>> {
    Ok(load_checkpoint(path)?.params)
}

fn cmd_gendata(mut cfg: RunConfig, a: GendataArgs) -> Result<PathBuf> {
    set(&mut cfg.classes, a.classes);
    set(&mut cfg.per_class, a.per_class);
    cfg.previews |= a.previews;
    let all = default_classes();
    if cfg.classes < 1 || cfg.classes > all.len() {
        return Err(Error::BadConfig(format!("classes must be in 1..={}, got {}", all.len(), cfg.classes)));
    }
    if cfg.per_class == 0 {
        return Err(Error::BadConfig("per_class must be at least 1".into()));
    }
    let dir = prepare("gendata", &cfg, json!({}))?;
    let table = build_texel_table(&cfg.load_mesh()?, cfg.texture_resolution)?;
    let specs: Vec<ClassSpec> = all.into_iter().take(cfg.classes).collect();
    let index = build_training_set(&specs, &table, cfg.per_class, cfg.seed, &dir, cfg.previews)?;
    log::info!("wrote {} textures to {}", index.entries.len(), dir.display());
    Ok(dir)
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<PathBuf> {
    set(&mut cfg.iterations, a.iterations);
    set(&mut cfg.batch_size, a.batch_size);
    set(&mut cfg.lr, a.lr);
    set(&mut cfg.base_channels, a.base_channels);
    if a.dataset.is_some() {
        cfg.dataset = a.dataset;
    }
    let dataset = required(&cfg.dataset, "--dataset")?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    cfg.model().validate()?;
    let schedule = cfg.schedule()?;
    let dir = prepare("train", &cfg, json!({ "resume": a.resume }))?;

    let (index, textures, classes) = load_training_set(&dataset)?;
    if index.resolution != cfg.texture_resolution {
        return Err(Error::ResolutionMismatch {
            expected: format!("dataset resolution {}", index.resolution),
            actual: format!("texture_resolution {}", cfg.texture_resolution),
        });
    }
    let (params, resume) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.params.config != cfg.model() {
                return Err(Error::BadConfig(format!(
                    "checkpoint {} was trained with a different model config",
                    path.display()
                )));
            }
            let opt = ck.optimizer.ok_or_else(|| {
                Error::BadConfig(format!("checkpoint {} has no optimizer state", path.display()))
            })?;
            (ck.params, Some(opt))
        }
        None => (init_params(&cfg.model())?, None),
    };
    let start = resume.as_ref().map_or(0, |s| s.step);
    let tc = cfg.train();
    log::info!(
        "training {} parameters on {} textures, iterations {start}..{}",
        params.data.len(),
        textures.len(),
        tc.iterations
    );
    let outcome = train(params, &textures, &classes, &schedule, &tc, resume, |it, loss| {
        log::info!("iter {it:>6}  loss {loss:.5}");
    })?;
    save_checkpoint(&dir.join("model.dnz"), &outcome.params, outcome.optimizer.step, Some(&outcome.optimizer))?;
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", start + i as u64 + 1));
    }
    fs::write(dir.join("loss.csv"), csv).map_err(|e| Error::io(dir.join("loss.csv"), e))?;
    Ok(dir)
}

fn cmd_sample(mut cfg: RunConfig, a: SampleArgs) -> Result<PathBuf> {
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.guidance, a.guidance);
    set(&mut cfg.eta, a.eta);
    set(&mut cfg.curation_threshold, a.curation_threshold);
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint;
    }
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    if a.count == 0 {
        return Err(Error::BadConfig("count must be at least 1".into()));
    }
    let schedule = cfg.schedule()?;
    let sampler = cfg.sampler();
    sampler.validate(&schedule)?;
    let dir = prepare(
        "sample",
        &cfg,
        json!({ "class": a.class, "count": a.count, "curate": a.curate }),
    )?;
    let params = load_model(&ckpt)?;
    let null = params.config.null_class();
    let mut cfg_model = cfg.clone();
    cfg_model.num_classes = params.config.num_classes;
    let specs = class_specs(&cfg_model)?;
    let requested: Vec<Option<usize>> = match &a.class {
        Some(s) => vec![parse_class(s, &specs, null)?],
        None => (0..null).map(Some).collect(),
    };
    if a.curate {
        let classes: Vec<usize> = requested
            .iter()
            .map(|c| c.ok_or_else(|| Error::BadConfig("--curate needs class-conditional samples".into())))
            .collect::<Result<_>>()?;
        let table = build_texel_table(&cfg.load_mesh()?, params.config.texture_resolution)?;
        let classifier = OutfitClassifier::new(&specs, &table)?;
        let ds = build_sampled_dataset(
            &params,
            &schedule,
            &sampler,
            &classes,
            a.count,
            cfg.curation_threshold,
            &classifier,
            Some(&dir),
        )?;
        log::info!("accepted {}/{} samples ({:.1}%)", ds.accepted, ds.entries.len(), 100.0 * ds.acceptance_rate);
        return Ok(dir);
    }
    let requests: Vec<Option<usize>> =
        requested.iter().flat_map(|&c| std::iter::repeat_n(c, a.count)).collect();
    let textures = sample_batch(&params, &schedule, &sampler, &requests)?;
    let tex_dir = dir.join("textures");
    fs::create_dir_all(&tex_dir).map_err(|e| Error::io(&tex_dir, e))?;
    for (k, (tex, class)) in textures.iter().zip(&requests).enumerate() {
        let stem = match class {
            Some(c) => format!("{c:02}_{k:04}"),
            None => format!("null_{k:04}"),
        };
        tex.write(&tex_dir.join(format!("{stem}.uvt")))?;
        tex.write_png(&tex_dir.join(format!("{stem}.png")))?;
    }
    Ok(dir)
}

#[derive(Serialize)]
struct FitReport {
    class: Option<usize>,
    silhouette_mask: bool,
    observed_texels: usize,
    /// Observed texels over atlas texels covered by the mesh.
    observed_fraction: f64,
    /// Red-over-green excess of the observed values (background pollution).
    red_leakage_observed: f64,
    red_leakage_full: f64,
    eval: Option<crate::metrics::EvalReport>,
    /// Same evaluation for the mean-color fill of the observed texels.
    baseline_eval: Option<crate::metrics::EvalReport>,
}

fn cmd_fit(mut cfg: RunConfig, a: FitArgs) -> Result<PathBuf> {
    set(&mut cfg.steps, a.steps);
    set(&mut cfg.guidance, a.guidance);
    set(&mut cfg.erode_radius, a.erode_radius);
    cfg.silhouette_mask &= !a.no_silhouette_mask;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint;
    }
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    require_file(&a.image, "image")?;
    require_file(&a.correspondence, "correspondence")?;
    require_file(&a.silhouette, "silhouette")?;
    if let Some(gt) = &a.gt {
        require_file(gt, "ground-truth texture")?;
    }
    let schedule = cfg.schedule()?;
    let sampler = cfg.sampler();
    sampler.validate(&schedule)?;
    let dir = prepare(
        "fit",
        &cfg,
        json!({
            "image": a.image, "correspondence": a.correspondence, "silhouette": a.silhouette,
            "class": a.class, "gt": a.gt,
        }),
    )?;
    let params = load_model(&ckpt)?;
    let null = params.config.null_class();
    let specs = class_specs(&RunConfig { num_classes: params.config.num_classes, ..cfg.clone() })?;
    let class = match &a.class {
        Some(s) => parse_class(s, &specs, null)?,
        None => None,
    };
    let x = Image::read_png(&a.image)?;
    let d = CorrespondenceMap::read(&a.correspondence)?;
    let mut s = Silhouette::read(&a.silhouette)?;
    if !cfg.silhouette_mask {
        s = Silhouette::filled(s.width, s.height, true);
    }
    let est = estimate_from_image(&x, &d, &s, &params, &schedule, &sampler, class, cfg.erode_radius)?;
    est.u_part.write(&dir.join("u_part.uvt"), &dir.join("u_part_validity.uvt"))?;
    est.u_part.write_png(&dir.join("u_part.png"))?;
    est.u_full.write(&dir.join("u_full.uvt"))?;
    est.u_full.write_png(&dir.join("u_full.png"))?;

    let mesh = cfg.load_mesh()?;
    let table = build_texel_table(&mesh, params.config.texture_resolution)?;
    let covered = table.covered_count().max(1);
    let (eval, baseline_eval) = match &a.gt {
        Some(gt) => {
            let gt = TextureMap::read(gt)?;
            let cams = cfg.eval_cameras()?;
            let baseline = est.u_part.mean_fill();
            (
                Some(evaluate_multiview(&mesh, &est.u_full, &gt, &cams, cfg.mask_mode, cfg.background)?),
                Some(evaluate_multiview(&mesh, &baseline, &gt, &cams, cfg.mask_mode, cfg.background)?),
            )
        }
        None => (None, None),
    };
    let report = FitReport {
        class,
        silhouette_mask: cfg.silhouette_mask,
        observed_texels: est.u_part.valid_count(),
        observed_fraction: est.u_part.valid_count() as f64 / covered as f64,
        red_leakage_observed: red_leakage(&est.u_part.values, &est.u_part.valid),
        red_leakage_full: red_leakage(&est.u_full, &table.coverage_mask()),
        eval,
        baseline_eval,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(dir)
}

fn cmd_render(mut cfg: RunConfig, a: RenderArgs) -> Result<PathBuf> {
    if let Some(c) = a.camera {
        cfg.camera = c;
    }
    set(&mut cfg.width, a.width);
    set(&mut cfg.height, a.height);
    set(&mut cfg.noise_sigma, a.noise_sigma);
    set(&mut cfg.dilation, a.dilation);
    require_file(&a.texture, "texture")?;
    let dir = prepare("render", &cfg, json!({ "texture": a.texture }))?;
    let camera = cfg.camera_preset()?.camera(cfg.width, cfg.height);
    let tex = TextureMap::read(&a.texture)?;
    let out = render(&cfg.load_mesh()?, &tex, &camera, cfg.background)?;
    let (d, s) = if cfg.noise_sigma > 0.0 || cfg.dilation > 0 {
        corrupt_correspondence(&out.correspondence, &out.silhouette, cfg.noise_sigma, cfg.dilation, cfg.seed)?
    } else {
        (out.correspondence, out.silhouette)
    };
    out.color.write_png(&dir.join("image.png"))?;
    d.write(&dir.join("correspondence.uvt"))?;
    s.write(&dir.join("silhouette.uvt"))?;
    Ok(dir)
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> Result<PathBuf> {
    if let Some(c) = a.cameras {
        cfg.eval_cameras = c;
    }
    if let Some(m) = a.mask_mode {
        cfg.mask_mode = match m.as_str() {
            "full" => MaskMode::Full,
            "silhouette" => MaskMode::Silhouette,
            _ => return Err(Error::BadConfig(format!("unknown mask mode {m:?} (expected full or silhouette)"))),
        };
    }
    require_file(&a.est, "estimated texture")?;
    require_file(&a.gt, "ground-truth texture")?;
    let dir = prepare("eval", &cfg, json!({ "est": a.est, "gt": a.gt }))?;
    let est = TextureMap::read(&a.est)?;
    let gt = TextureMap::read(&a.gt)?;
    let report = evaluate_multiview(&cfg.load_mesh()?, &est, &gt, &cfg.eval_cameras()?, cfg.mask_mode, cfg.background)?;
    log::info!("mean SSIM {:.4}  mean PSNR {:.2} dB", report.mean_ssim, report.mean_psnr);
    write_json(&dir.join("report.json"), &report)?;
    Ok(dir)
}
