//! Placement of foreground objects into an analyzed background photograph:
//! pose, scale, per-object render, depth-tested compositing and augmentation.

mod augment;

pub use augment::{adjust_color, add_noise, augment_pixels, gaussian_blur, AugmentationConfig, ToneCurve};

use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::BinaryMask;
use crate::background::{write_pfm, BackgroundScene, DepthMap};
use crate::extraction::ForegroundObject;
use crate::geometry::{rotation_between, yaw_rotation};
use crate::imagebuf::{save_gray_png, RgbImage};
use crate::renderer::{render, Camera, RenderOptions, RenderOutput, MIN_ALPHA};
use crate::splat_io::SplatModel;
use crate::transform::{transform_model, ShTransform};

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("object has no vertical extent")]
    DegenerateObjectExtent,
    #[error("object {index} is {fraction:.3} occluded")]
    AllOccluded { index: usize, fraction: f64 },
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// Similarity placing a canonical object in camera space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl PlacementPose {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn transform(&self, model: &SplatModel, sh: ShTransform) -> SplatModel {
        transform_model(model, &self.rotation, &self.translation, self.scale, sh)
    }
}

/// Stands a canonical object on `support_point` with its up axis along
/// `plane_normal`, turned by `yaw` about its own up axis.
pub fn solve_pose(
    plane_normal: &Vector3<f64>,
    support_point: &Vector3<f64>,
    yaw: f64,
    scale: f64,
) -> PlacementPose {
    let up = Vector3::y();
    PlacementPose {
        rotation: rotation_between(&up, plane_normal) * yaw_rotation(&up, yaw),
        translation: *support_point,
        scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleParams {
    /// Object height as a fraction of the scene's vertical extent.
    pub height_ratio: f64,
    pub jitter: [f64; 2],
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self {
            height_ratio: 0.15,
            jitter: [0.8, 1.25],
        }
    }
}

/// Height of a canonical object along +y, from its Gaussian centers.
pub fn object_height(obj: &ForegroundObject) -> f64 {
    let (lo, hi) = obj
        .model
        .gaussians
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g.mean.y), hi.max(g.mean.y)));
    hi - lo
}

/// `scale = height_ratio · up_extent / object_height · jitter`.
pub fn choose_scale<R: Rng + ?Sized>(
    obj: &ForegroundObject,
    up_extent: f64,
    rng: &mut R,
    params: &ScaleParams,
) -> Result<f64, ComposeError> {
    let h = object_height(obj);
    if !(h.is_finite() && h > 0.0) {
        return Err(ComposeError::DegenerateObjectExtent);
    }
    let [lo, hi] = params.jitter;
    let jitter = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    Ok(params.height_ratio * up_extent / h * jitter)
}

/// Per-pixel median over a `kernel × kernel` window with clamped edges.
pub fn median_filter_depth(depth: &DepthMap, kernel: usize) -> DepthMap {
    assert!(kernel % 2 == 1, "median kernel must be odd");
    let r = (kernel / 2) as isize;
    let (w, h) = (depth.width as isize, depth.height as isize);
    let values: Vec<f32> = (0..depth.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut window = Vec::with_capacity(kernel * kernel);
            (0..depth.width)
                .map(|x| {
                    window.clear();
                    for dy in -r..=r {
                        let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                        for dx in -r..=r {
                            let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                            window.push(depth.values[sy * depth.width + sx]);
                        }
                    }
                    let mid = window.len() / 2;
                    *window.select_nth_unstable_by(mid, f32::total_cmp).1
                })
                .collect::<Vec<_>>()
        })
        .collect();
    DepthMap {
        width: depth.width,
        height: depth.height,
        values,
        convention: depth.convention,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeParams {
    pub median_kernel: usize,
    /// Depth-test margin as a fraction of the scene depth range.
    pub depth_margin: f64,
    pub visibility_threshold: f64,
    pub max_occlusion: f64,
    pub sh_transform: ShTransform,
    /// Take object alpha from a second all-white render instead of the alpha buffer.
    pub white_alpha_pass: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for ComposeParams {
    fn default() -> Self {
        Self {
            median_kernel: 5,
            depth_margin: 0.01,
            visibility_threshold: 0.5,
            max_occlusion: 0.95,
            sh_transform: ShTransform::Rotate,
            white_alpha_pass: false,
            augmentation: AugmentationConfig::default(),
        }
    }
}

/// One object rendered alone through the scene camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLayer {
    pub name: String,
    pub pose: PlacementPose,
    pub render: RenderOutput,
    /// Distance from the camera center to the support point.
    pub distance: f64,
}

pub fn render_layer(
    camera: &Camera,
    obj: &ForegroundObject,
    pose: &PlacementPose,
    sh_dir: Option<Vector3<f64>>,
    params: &ComposeParams,
) -> ObjectLayer {
    let model = pose.transform(&obj.model, params.sh_transform);
    let opts = RenderOptions {
        sh_dir_override: sh_dir,
        white_override: false,
    };
    let mut out = render(&model, camera, &opts);
    if params.white_alpha_pass {
        let white = render(
            &model,
            camera,
            &RenderOptions {
                white_override: true,
                ..opts
            },
        );
        out.alpha = white.color.chunks_exact(3).map(|c| c[0]).collect();
    }
    ObjectLayer {
        name: obj.name.clone(),
        pose: *pose,
        render: out,
        distance: (pose.translation - camera.center()).norm(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionRecord {
    pub name: String,
    pub pose: PlacementPose,
    pub visibility: BinaryMask,
    pub raw_alpha: Vec<f32>,
    /// Share of the object's own silhouette (raw alpha above the visibility
    /// threshold) hidden by the background or nearer objects; 1 when the
    /// silhouette is empty.
    pub occluded_fraction: f64,
}

/// Depth-tests each layer against the filtered background depth and blends
/// them nearest first. Records come back in layer order.
pub fn composite_layers(
    background: &RgbImage,
    filtered_depth: &DepthMap,
    depth_epsilon: f64,
    layers: &[ObjectLayer],
    visibility_threshold: f64,
) -> (RgbImage, Vec<CompositionRecord>) {
    let (w, h) = (background.width, background.height);
    let n = w * h;
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[a].distance.total_cmp(&layers[b].distance).then(a.cmp(&b)));

    let mut transmittance = vec![1.0f64; n];
    let mut premult = vec![0.0f64; 3 * n];
    let mut touched = vec![false; n];
    let mut effective: Vec<Vec<f64>> = vec![Vec::new(); layers.len()];
    for &k in &order {
        let r = &layers[k].render;
        let mut eff = vec![0.0f64; n];
        for i in 0..n {
            let a = f64::from(r.alpha[i]);
            if a <= 0.0 || f64::from(r.depth[i]) > f64::from(filtered_depth.values[i]) + depth_epsilon {
                continue;
            }
            let e = transmittance[i] * a;
            eff[i] = e;
            for c in 0..3 {
                premult[3 * i + c] += transmittance[i] * f64::from(r.color[3 * i + c]);
            }
            transmittance[i] *= 1.0 - a;
            if e >= MIN_ALPHA {
                touched[i] = true;
            }
        }
        effective[k] = eff;
    }

    let mut image = background.clone();
    for i in 0..n {
        if !touched[i] {
            continue;
        }
        for c in 0..3 {
            let v = premult[3 * i + c] + transmittance[i] * f64::from(background.data[3 * i + c]);
            image.data[3 * i + c] = v.clamp(0.0, 1.0) as f32;
        }
    }

    let records = layers
        .iter()
        .zip(effective)
        .map(|(layer, eff)| {
            let raw = &layer.render.alpha;
            let visibility = BinaryMask {
                width: w,
                height: h,
                data: eff.iter().map(|&e| e > visibility_threshold).collect(),
            };
            let silhouette = raw.iter().filter(|&&a| f64::from(a) > visibility_threshold).count();
            let visible = raw
                .iter()
                .zip(&visibility.data)
                .filter(|(&a, &v)| v && f64::from(a) > visibility_threshold)
                .count();
            let occluded_fraction = if silhouette == 0 {
                1.0
            } else {
                1.0 - visible as f64 / silhouette as f64
            };
            CompositionRecord {
                name: layer.name.clone(),
                pose: layer.pose,
                visibility,
                raw_alpha: raw.clone(),
                occluded_fraction,
            }
        })
        .collect();
    (image, records)
}

/// A background prepared for repeated composition.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedScene<'a> {
    pub scene: &'a BackgroundScene,
    pub filtered_depth: DepthMap,
    pub depth_epsilon: f64,
}

impl<'a> PreparedScene<'a> {
    pub fn new(scene: &'a BackgroundScene, params: &ComposeParams) -> Self {
        Self {
            scene,
            filtered_depth: median_filter_depth(&scene.depth, params.median_kernel.max(1) | 1),
            depth_epsilon: params.depth_margin * scene.depth_range(),
        }
    }

    pub fn composite(&self, layers: &[ObjectLayer], params: &ComposeParams) -> (RgbImage, Vec<CompositionRecord>) {
        composite_layers(
            &self.scene.image,
            &self.filtered_depth,
            self.depth_epsilon,
            layers,
            params.visibility_threshold,
        )
    }
}

/// Draws the SH evaluation direction for one object render.
pub fn sample_sh_direction<R: Rng + ?Sized>(rng: &mut R, aug: &AugmentationConfig) -> Option<Vector3<f64>> {
    aug.sh_random.then(|| {
        let v: [f64; 3] = UnitSphere.sample(rng);
        Vector3::from(v)
    })
}

/// Renders, composites and augments one image. Fails with `AllOccluded`
/// for the first object (in input order) hidden beyond `max_occlusion`.
pub fn compose<R: Rng + ?Sized>(
    scene: &BackgroundScene,
    placements: &[(&ForegroundObject, PlacementPose)],
    params: &ComposeParams,
    rng: &mut R,
) -> Result<(RgbImage, Vec<CompositionRecord>), ComposeError> {
    if placements.is_empty() {
        return Err(ComposeError::InvalidPlacement("no objects to place".into()));
    }
    let prepared = PreparedScene::new(scene, params);
    let layers: Vec<ObjectLayer> = placements
        .iter()
        .map(|(obj, pose)| {
            let dir = sample_sh_direction(rng, &params.augmentation);
            render_layer(&scene.camera, obj, pose, dir, params)
        })
        .collect();
    let (image, records) = prepared.composite(&layers, params);
    if let Some((index, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.occluded_fraction > params.max_occlusion)
    {
        return Err(ComposeError::AllOccluded {
            index,
            fraction: r.occluded_fraction,
        });
    }
    Ok((augment_pixels(&image, rng, &params.augmentation), records))
}

/// Writes `<stem>_alpha.png` and `<stem>_depth.pfm` for a layer.
pub fn dump_layer(layer: &ObjectLayer, dir: &Path, stem: &str) -> Result<(), ComposeError> {
    std::fs::create_dir_all(dir)?;
    let r = &layer.render;
    save_gray_png(&r.alpha, r.width, r.height, dir.join(format!("{stem}_alpha.png")))?;
    let file = std::fs::File::create(dir.join(format!("{stem}_depth.pfm")))?;
    write_pfm(std::io::BufWriter::new(file), r.width, r.height, &r.depth)?;
    Ok(())
}
