//! End-to-end dataset generation: cached object extraction, cached background
//! analysis, per-image placement and composition, COCO export.

pub mod cli;
mod config;

pub use config::{BackgroundManifest, DepthSource, GenerationConfig, ManifestEntry, ObjectSource};

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotations::{mask_to_annotation, write_coco, AnnotationError, AnnotationRecord, CocoCategory, CocoImage};
use crate::background::{
    analyze_scene, intrinsics_from_fov, load_raw_depth, normalize_depth, sample_placement, write_pfm, BackgroundError,
    BackgroundParams, BackgroundScene, SupportPlane,
};
use crate::composer::{
    augment_pixels, choose_scale, render_layer, sample_sh_direction, solve_pose, ComposeError, ObjectLayer,
    PreparedScene,
};
use crate::depth_client::{fetch_depth, DepthClientError, DepthServiceConfig};
use crate::extraction::{
    extract_foreground, load_foreground, recenter, save_foreground, ExtractionError, ExtractionParams, ForegroundObject,
};
use crate::imagebuf::RgbImage;
use crate::renderer::{Camera, Intrinsics, RenderError};
use crate::splat_io::load_splat_ply;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("no background has a usable support plane")]
    NoUsableBackground,
    #[error("object `{name}`: {source}")]
    Extraction {
        name: String,
        #[source]
        source: ExtractionError,
    },
    #[error("background {path}: {source}")]
    Background {
        path: String,
        #[source]
        source: BackgroundError,
    },
    #[error("image {index}: {message}")]
    Image { index: usize, message: String },
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    DepthClient(#[from] DepthClientError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::ConfigInvalid(_))
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.into();
    move |source| PipelineError::Io { context, source }
}

/// Hex sha256 over length-prefixed parts.
pub fn content_key(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn key_seed(key: &str) -> u64 {
    let bytes = hex::decode(&key[..16]).expect("hex key");
    u64::from_le_bytes(bytes.try_into().expect("8 bytes"))
}

/// Generator for image `index`: the master seed's ChaCha stream number `index`.
pub fn image_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(io_err(format!("renaming to {}", path.display())))
}

/// Extracts (or loads) an object and moves it into its canonical frame.
/// Extraction results are cached under `cache_dir/objects`, keyed by the
/// input bytes and parameters; the cached file is always the one used.
pub fn load_object(
    src: &ObjectSource,
    params: &ExtractionParams,
    cache_dir: Option<&Path>,
) -> Result<ForegroundObject, PipelineError> {
    let wrap = |source: ExtractionError| PipelineError::Extraction {
        name: src.name.clone(),
        source,
    };
    let ply = if src.extracted {
        src.path.clone()
    } else {
        let bytes = fs::read(&src.path).map_err(io_err(format!("reading {}", src.path.display())))?;
        let params_json = serde_json::to_vec(params).expect("params serialize");
        let key = content_key(&[&bytes, &params_json]);
        let scratch;
        let dir = match cache_dir {
            Some(d) => d.join("objects"),
            None => {
                scratch = std::env::temp_dir().join(format!("splatsynth-{}", std::process::id()));
                scratch.clone()
            }
        };
        let ply = dir.join(format!("{key}.ply"));
        if !(ply.is_file() && crate::extraction::meta_path(&ply).is_file()) {
            let model = load_splat_ply(&src.path).map_err(|e| wrap(e.into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(key_seed(&key));
            let extraction = extract_foreground(&model, &src.name, params, &mut rng).map_err(wrap)?;
            log::info!(
                "extracted `{}`: {} of {} Gaussians kept",
                src.name,
                extraction.counts.after_cluster,
                extraction.counts.input
            );
            save_foreground(&extraction, params, &dir, &key).map_err(wrap)?;
        }
        ply
    };
    let (mut obj, _) = load_foreground(&ply).map_err(wrap)?;
    obj.name = src.name.clone();
    Ok(recenter(&obj, params.sh_transform))
}

/// Cached part of a background analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneAnalysis {
    up_axis: Vector3<f64>,
    planes: Vec<SupportPlane>,
    up_extent: f64,
}

/// Loads and analyzes one manifest entry, caching the analysis under
/// `cache_dir/backgrounds` keyed by image bytes, depth bytes, convention and parameters.
pub fn load_background(
    entry: &ManifestEntry,
    params: &BackgroundParams,
    cache_dir: Option<&Path>,
) -> Result<BackgroundScene, PipelineError> {
    let path = entry.image.display().to_string();
    let wrap = |source: BackgroundError| PipelineError::Background {
        path: path.clone(),
        source,
    };
    let DepthSource::File(depth_path) = &entry.depth else {
        return Err(PipelineError::ConfigInvalid(format!(
            "{path} has no depth file yet; run `fetch-depth` on the manifest first"
        )));
    };
    let image_bytes = fs::read(&entry.image).map_err(io_err(format!("reading {path}")))?;
    let depth_bytes = fs::read(depth_path).map_err(io_err(format!("reading {}", depth_path.display())))?;
    let image = image::load_from_memory(&image_bytes).map_err(|e| wrap(e.into()))?;
    let image = RgbImage::from_rgb8(&image.to_rgb8());
    let raw = load_raw_depth(depth_path).map_err(wrap)?;
    let depth = normalize_depth(&raw, entry.convention).map_err(wrap)?;
    if (image.width, image.height) != (depth.width, depth.height) {
        return Err(wrap(BackgroundError::DimensionMismatch {
            image: (image.width, image.height),
            depth: (depth.width, depth.height),
        }));
    }
    let params_json = serde_json::to_vec(params).expect("params serialize");
    let key = content_key(&[&image_bytes, &depth_bytes, entry.convention.as_str().as_bytes(), &params_json]);
    let cache_file = cache_dir.map(|d| d.join("backgrounds").join(format!("{key}.json")));

    if let Some(text) = cache_file.as_ref().and_then(|f| fs::read_to_string(f).ok()) {
        if let Ok(a) = serde_json::from_str::<SceneAnalysis>(&text) {
            let camera = Camera::identity(intrinsics_from_fov(depth.width, depth.height, params.fov_deg))?;
            return Ok(BackgroundScene {
                image,
                depth,
                camera,
                up_axis: a.up_axis,
                planes: a.planes,
                up_extent: a.up_extent,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(key_seed(&key));
    let scene = analyze_scene(image, depth, params, &mut rng).map_err(wrap)?;
    if let Some(file) = cache_file {
        let analysis = SceneAnalysis {
            up_axis: scene.up_axis,
            planes: scene.planes.clone(),
            up_extent: scene.up_extent,
        };
        fs::create_dir_all(file.parent().expect("cache subdir")).map_err(io_err("creating cache"))?;
        write_atomic(&file, serde_json::to_string(&analysis).expect("analysis serializes").as_bytes())?;
    }
    Ok(scene)
}

/// Per-image outcome, also stored for resuming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub index: usize,
    pub background: usize,
    /// Annotations with ids still unassigned, in placement order.
    pub annotations: Vec<AnnotationRecord>,
    pub placed: usize,
    /// Placement attempts rejected for occlusion.
    pub rejections: usize,
    /// Objects given up on after every attempt was rejected.
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub images: usize,
    pub annotations: usize,
    pub placed: usize,
    pub rejections: usize,
    pub dropped: usize,
    pub per_category: BTreeMap<String, usize>,
    pub backgrounds_used: usize,
    pub backgrounds_excluded: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub extraction: Duration,
    pub background: Duration,
    pub composition: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Regenerate images that already exist.
    pub force: bool,
    /// Overrides the configured worker count when set.
    pub workers: Option<usize>,
}

struct Context<'a> {
    cfg: &'a GenerationConfig,
    objects: &'a [ForegroundObject],
    categories: &'a [u64],
    scenes: Vec<PreparedScene<'a>>,
}

/// First draws of image `index`: background choice and object count. The
/// returned generator continues from there.
pub fn image_plan(seed: u64, index: usize, backgrounds: usize, objects_per_image: [usize; 2]) -> (ChaCha8Rng, usize, usize) {
    let mut rng = image_rng(seed, index);
    let bg = rng.random_range(0..backgrounds);
    let [lo, hi] = objects_per_image;
    let count = rng.random_range(lo..=hi);
    (rng, bg, count)
}

fn generate_image(ctx: &Context<'_>, index: usize) -> Result<(RgbImage, ImageResult), ComposeError> {
    let cfg = ctx.cfg;
    let (mut rng, bg, count) = image_plan(cfg.seed, index, ctx.scenes.len(), cfg.objects_per_image);
    let prepared = &ctx.scenes[bg];
    let scene = prepared.scene;

    let mut layers: Vec<ObjectLayer> = Vec::with_capacity(count);
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let (mut rejections, mut dropped) = (0, 0);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..=cfg.max_resample {
            let oi = rng.random_range(0..ctx.objects.len());
            let obj = &ctx.objects[oi];
            let (pi, point) = sample_placement(&scene.planes, &mut rng)
                .map_err(|e| ComposeError::InvalidPlacement(e.to_string()))?;
            let yaw = rng.random_range(0.0..TAU);
            let scale = choose_scale(obj, scene.up_extent, &mut rng, &cfg.scale)?;
            let pose = solve_pose(&scene.planes[pi].normal, &point, yaw, scale);
            let dir = sample_sh_direction(&mut rng, &cfg.compose.augmentation);
            layers.push(render_layer(&scene.camera, obj, &pose, dir, &cfg.compose));
            let (_, records) = prepared.composite(&layers, &cfg.compose);
            if records.iter().all(|r| r.occluded_fraction <= cfg.compose.max_occlusion) {
                chosen.push(oi);
                placed = true;
                break;
            }
            layers.pop();
            rejections += 1;
        }
        if !placed {
            dropped += 1;
        }
    }

    let (image, records) = prepared.composite(&layers, &cfg.compose);
    let image = augment_pixels(&image, &mut rng, &cfg.compose.augmentation);
    let mut annotations = Vec::with_capacity(records.len());
    for (record, &oi) in records.iter().zip(&chosen) {
        if let Ok(a) = mask_to_annotation(&record.visibility, ctx.categories[oi], index as u64 + 1) {
            annotations.push(a);
        }
    }
    Ok((
        image,
        ImageResult {
            index,
            background: bg,
            annotations,
            placed: chosen.len(),
            rejections,
            dropped,
        },
    ))
}

fn image_paths(cfg: &GenerationConfig, index: usize) -> (PathBuf, PathBuf, String) {
    let rel = format!("{}/{index:06}.png", cfg.split);
    let png = cfg.output.join(&rel);
    let record = cfg
        .output
        .join(".cache")
        .join("images")
        .join(&cfg.split)
        .join(format!("{index:06}.json"));
    (png, record, rel)
}

/// Runs the whole generation described by `cfg` and writes the dataset under `cfg.output`.
pub fn run_generate(cfg: &GenerationConfig, opts: RunOptions) -> Result<(GenerationSummary, StageTimings), PipelineError> {
    cfg.validate()?;
    let workers = opts.workers.unwrap_or(cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::ConfigInvalid(format!("worker pool: {e}")))?;
    pool.install(|| generate_inner(cfg, opts))
}

fn generate_inner(cfg: &GenerationConfig, opts: RunOptions) -> Result<(GenerationSummary, StageTimings), PipelineError> {
    let manifest = BackgroundManifest::load(&cfg.backgrounds)?;
    let cache = cfg.output.join(".cache");
    fs::create_dir_all(cfg.output.join(&cfg.split)).map_err(io_err("creating output directory"))?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let objects: Vec<ForegroundObject> = cfg
        .objects
        .iter()
        .map(|o| load_object(o, &cfg.extraction, Some(&cache)))
        .collect::<Result<_, _>>()?;
    timings.extraction = t.elapsed();

    let mut category_names: Vec<String> = Vec::new();
    let categories: Vec<u64> = cfg
        .objects
        .iter()
        .map(|o| {
            let pos = category_names.iter().position(|n| *n == o.name).unwrap_or_else(|| {
                category_names.push(o.name.clone());
                category_names.len() - 1
            });
            pos as u64 + 1
        })
        .collect();

    let t = Instant::now();
    let analyzed: Vec<Result<BackgroundScene, PipelineError>> = manifest
        .entries
        .par_iter()
        .map(|e| load_background(e, &cfg.background, Some(&cache)))
        .collect();
    let mut scenes = Vec::new();
    let mut excluded = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(analyzed) {
        let name = entry
            .image
            .file_name()
            .map_or_else(|| entry.image.display().to_string(), |n| n.to_string_lossy().into_owned());
        let scene = result?;
        if scene.planes.is_empty() {
            log::warn!("background {name} has no usable support plane; excluded");
            excluded.push(name);
        } else {
            scenes.push(scene);
        }
    }
    if scenes.is_empty() {
        return Err(PipelineError::NoUsableBackground);
    }
    let ctx = Context {
        cfg,
        objects: &objects,
        categories: &categories,
        scenes: scenes.iter().map(|s| PreparedScene::new(s, &cfg.compose)).collect(),
    };
    timings.background = t.elapsed();

    let t = Instant::now();
    fs::create_dir_all(cache.join("images").join(&cfg.split)).map_err(io_err("creating cache"))?;
    let results: Vec<ImageResult> = (0..cfg.image_count)
        .into_par_iter()
        .map(|index| {
            let (png, record_path, _) = image_paths(cfg, index);
            if !opts.force && png.is_file() {
                if let Some(r) = fs::read_to_string(&record_path)
                    .ok()
                    .and_then(|t| serde_json::from_str::<ImageResult>(&t).ok())
                {
                    return Ok(r);
                }
            }
            let fail = |message: String| PipelineError::Image { index, message };
            let (image, result) = generate_image(&ctx, index).map_err(|e| fail(e.to_string()))?;
            image.save_png(&png).map_err(|e| fail(e.to_string()))?;
            write_atomic(&record_path, serde_json::to_string(&result).expect("serializes").as_bytes())?;
            Ok(result)
        })
        .collect::<Result<_, PipelineError>>()?;
    timings.composition = t.elapsed();

    let (width_of, height_of): (Vec<usize>, Vec<usize>) = scenes.iter().map(|s| (s.image.width, s.image.height)).unzip();
    let images: Vec<CocoImage> = results
        .iter()
        .map(|r| CocoImage {
            id: r.index as u64 + 1,
            file_name: image_paths(cfg, r.index).2,
            width: width_of[r.background],
            height: height_of[r.background],
        })
        .collect();
    let mut annotations = Vec::new();
    let mut summary = GenerationSummary {
        images: results.len(),
        backgrounds_used: scenes.len(),
        backgrounds_excluded: excluded,
        ..Default::default()
    };
    for name in &category_names {
        summary.per_category.insert(name.clone(), 0);
    }
    for r in &results {
        summary.placed += r.placed;
        summary.rejections += r.rejections;
        summary.dropped += r.dropped;
        for a in &r.annotations {
            let mut a = a.clone();
            a.id = annotations.len() as u64 + 1;
            *summary
                .per_category
                .get_mut(&category_names[a.category_id as usize - 1])
                .expect("known category") += 1;
            annotations.push(a);
        }
    }
    summary.annotations = annotations.len();
    let coco_categories: Vec<CocoCategory> = category_names
        .iter()
        .enumerate()
        .map(|(i, name)| CocoCategory {
            id: i as u64 + 1,
            name: name.clone(),
            supercategory: "object".into(),
        })
        .collect();
    write_coco(&images, &annotations, &coco_categories, cfg.output.join(format!("annotations_{}.json", cfg.split)))?;
    write_atomic(
        &cfg.output.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializes").as_bytes(),
    )?;
    Ok((summary, timings))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FetchReport {
    pub fetched: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Fetches depth for every `service` entry of a manifest, writes each map
/// to `depth/<image stem>.pfm` beside the manifest and rewrites the manifest
/// once, after all responses were validated. Failed entries stay `service`.
pub fn fetch_manifest_depths(manifest_path: &Path, cfg: &DepthServiceConfig) -> Result<FetchReport, PipelineError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| PipelineError::ConfigInvalid(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let mut stored = BackgroundManifest::parse(&text)?;
    let resolved = BackgroundManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let pending: Vec<usize> = (0..resolved.entries.len())
        .filter(|&i| resolved.entries[i].depth == DepthSource::Service)
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency.max(1))
        .build()
        .map_err(|e| PipelineError::ConfigInvalid(format!("fetch pool: {e}")))?;
    let results: Vec<(usize, Result<_, DepthClientError>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| (i, fetch_depth(&resolved.entries[i].image, cfg)))
            .collect()
    });

    let mut report = FetchReport::default();
    for (i, result) in results {
        let image = resolved.entries[i].image.clone();
        match result {
            Ok(fetched) => {
                let stem = image.file_stem().map_or_else(|| format!("{i}"), |s| s.to_string_lossy().into_owned());
                let rel = PathBuf::from("depth").join(format!("{stem}.pfm"));
                let out = base.join(&rel);
                fs::create_dir_all(out.parent().expect("depth dir")).map_err(io_err("creating depth directory"))?;
                let mut bytes = Vec::new();
                write_pfm(&mut bytes, fetched.depth.width, fetched.depth.height, &fetched.depth.values)
                    .map_err(io_err("encoding PFM"))?;
                write_atomic(&out, &bytes)?;
                stored.entries[i].depth = DepthSource::File(rel);
                stored.entries[i].convention = fetched.convention;
                report.fetched.push(image);
            }
            Err(e) => {
                log::error!("depth for {} failed: {e}", image.display());
                report.failed.push((image, e.to_string()));
            }
        }
    }
    if !report.fetched.is_empty() {
        write_atomic(manifest_path, stored.to_toml().as_bytes())?;
    }
    Ok(report)
}

const PLANE_COLORS: [[f32; 3]; 6] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.20],
    [0.15, 0.35, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.85],
];

/// Draws `n` sampled placement points on the background, one colour per plane.
pub fn placement_overlay<R: Rng + ?Sized>(scene: &BackgroundScene, n: usize, rng: &mut R) -> Result<RgbImage, PipelineError> {
    let mut img = scene.image.clone();
    let (w, h) = (img.width as isize, img.height as isize);
    for _ in 0..n {
        let (pi, p) = sample_placement(&scene.planes, rng).map_err(|source| PipelineError::Background {
            path: "preview".into(),
            source,
        })?;
        let Some((uv, _)) = scene.camera.project(&p) else {
            continue;
        };
        let (u, v) = (uv.x.round() as isize, uv.y.round() as isize);
        for dy in -2..=2 {
            for dx in -2..=2 {
                let (x, y) = (u + dx, v + dy);
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    img.set(x as usize, y as usize, PLANE_COLORS[pi % PLANE_COLORS.len()]);
                }
            }
        }
    }
    Ok(img)
}

/// Camera description for debug renders: pinhole from horizontal FOV, placed
/// at `eye` looking at `target`, with `up` pointing toward the top of the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

fn default_fov() -> f64 {
    55.0
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

impl CameraSpec {
    pub fn to_camera(&self) -> Result<Camera, PipelineError> {
        let eye = Vector3::from(self.eye);
        let forward = Vector3::from(self.target) - eye;
        let up = Vector3::from(self.up);
        if forward.norm() == 0.0 || forward.cross(&up).norm() < 1e-9 * forward.norm() * up.norm() {
            return Err(PipelineError::ConfigInvalid("camera target must differ from eye and not lie along up".into()));
        }
        let z = forward.normalize();
        let y = -(up - z * up.dot(&z)).normalize();
        let x = y.cross(&z);
        let r = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]));
        let rotation = UnitQuaternion::from_rotation_matrix(&r);
        let k = Intrinsics::from_fov(self.width, self.height, self.fov_deg);
        Ok(Camera::new(k, rotation, -(rotation * eye))?)
    }
}
