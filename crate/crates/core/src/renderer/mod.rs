//! CPU rasterizer for Gaussian splats.
//!
//! Gaussians are projected with the local-affine (EWA) approximation, binned
//! into 16×16 pixel tiles and alpha-composited front to back per tile in
//! ascending camera-space depth. Tiles are rendered in parallel; each tile's
//! result depends only on its own sorted list, so output is independent of
//! the thread count.

mod camera;
mod project;
mod sh;

pub use camera::{Camera, Intrinsics};
pub use project::{cov3d, project_gaussian, project_unculled, Splat2D, COV2D_FLOOR, MAX_ALPHA, MIN_ALPHA, Z_NEAR};
pub use sh::{eval_sh, sh_basis, ShRotation};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::splat_io::SplatModel;

pub const TILE_SIZE: usize = 16;
/// Pixels stop accumulating once transmittance would fall below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderOptions {
    /// Evaluate every splat's SH colour along this direction instead of the view ray.
    pub sh_dir_override: Option<Vector3<f64>>,
    /// Force splat colours to white so the colour buffer equals the alpha buffer.
    pub white_override: bool,
}

/// Premultiplied colour, accumulated alpha and alpha-normalized depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, `3 * (y * width + x) + c`.
    pub color: Vec<f32>,
    pub alpha: Vec<f32>,
    /// Camera-space z; 0 where nothing was drawn.
    pub depth: Vec<f32>,
}

impl RenderOutput {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            color: vec![0.0; width * height * 3],
            alpha: vec![0.0; width * height],
            depth: vec![0.0; width * height],
        }
    }

    pub fn alpha_at(&self, x: usize, y: usize) -> f32 {
        self.alpha[y * self.width + x]
    }

    pub fn color_at(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }
}

/// Projects every Gaussian of `model` and assigns its colour. Culled
/// Gaussians are dropped; the result keeps (model index, splat) pairs.
pub fn project_model(model: &SplatModel, cam: &Camera, opts: &RenderOptions) -> Vec<(usize, Splat2D)> {
    let center = cam.center();
    let override_dir = opts.sh_dir_override.map(|d| d.normalize());
    model
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let mut splat = project_gaussian(g, cam)?;
            splat.color = if opts.white_override {
                [1.0; 3]
            } else {
                let dir = override_dir.unwrap_or_else(|| (g.mean - center).normalize());
                eval_sh(&g.sh, &dir, model.sh_degree)
            };
            Some((i, splat))
        })
        .collect()
}

/// Front-to-back compositing of one pixel over an already depth-sorted list.
/// Returns (rgb, alpha, depth-weight sum).
#[inline]
pub fn composite_pixel<'a>(px: f64, py: f64, splats: impl IntoIterator<Item = &'a Splat2D>) -> ([f64; 3], f64, f64) {
    let mut t = 1.0;
    let mut rgb = [0.0; 3];
    let mut alpha = 0.0;
    let mut depth = 0.0;
    for s in splats {
        let a = s.alpha_at(px, py);
        if a < MIN_ALPHA {
            continue;
        }
        let next_t = t * (1.0 - a);
        if next_t < MIN_TRANSMITTANCE {
            break;
        }
        let w = a * t;
        for c in 0..3 {
            rgb[c] += w * s.color[c];
        }
        alpha += w;
        depth += w * s.depth;
        t = next_t;
    }
    (rgb, alpha, depth)
}

/// Renders `model` through `cam`.
pub fn render(model: &SplatModel, cam: &Camera, opts: &RenderOptions) -> RenderOutput {
    let (width, height) = (cam.width(), cam.height());
    let splats = project_model(model, cam, opts);
    render_splats(&splats, width, height)
}

/// Tiled rasterization of projected splats tagged with a tie-breaking index.
pub fn render_splats(splats: &[(usize, Splat2D)], width: usize, height: usize) -> RenderOutput {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, (_, s)) in splats.iter().enumerate() {
        let x0 = ((s.mean2d.x - s.extent.x).max(0.0) / TILE_SIZE as f64).floor() as usize;
        let y0 = ((s.mean2d.y - s.extent.y).max(0.0) / TILE_SIZE as f64).floor() as usize;
        let x1 = (((s.mean2d.x + s.extent.x) / TILE_SIZE as f64).floor()).min((tiles_x - 1) as f64);
        let y1 = (((s.mean2d.y + s.extent.y) / TILE_SIZE as f64).floor()).min((tiles_y - 1) as f64);
        if x1 < x0 as f64 || y1 < y0 as f64 {
            continue;
        }
        for ty in y0..=(y1 as usize) {
            for tx in x0..=(x1 as usize) {
                bins[ty * tiles_x + tx].push(k);
            }
        }
    }

    let tiles: Vec<(usize, Vec<f32>, Vec<f32>, Vec<f32>)> = bins
        .into_par_iter()
        .enumerate()
        .map(|(tile, mut list)| {
            list.sort_by(|&a, &b| {
                splats[a]
                    .1
                    .depth
                    .total_cmp(&splats[b].1.depth)
                    .then(splats[a].0.cmp(&splats[b].0))
            });
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width);
            let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
            let n = xs.len() * ys.len();
            let mut color = Vec::with_capacity(3 * n);
            let mut alpha = Vec::with_capacity(n);
            let mut depth = Vec::with_capacity(n);
            for y in ys.clone() {
                for x in xs.clone() {
                    let (rgb, a, d) = composite_pixel(x as f64, y as f64, list.iter().map(|&k| &splats[k].1));
                    color.extend(rgb.iter().map(|&v| v as f32));
                    alpha.push(a as f32);
                    depth.push(if a > 0.0 { (d / a) as f32 } else { 0.0 });
                }
            }
            (tile, color, alpha, depth)
        })
        .collect();

    let mut out = RenderOutput::empty(width, height);
    for (tile, color, alpha, depth) in tiles {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        let x0 = tx * TILE_SIZE;
        let tw = ((tx + 1) * TILE_SIZE).min(width) - x0;
        let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height);
        for (row, y) in ys.enumerate() {
            let dst = y * width + x0;
            let src = row * tw;
            out.alpha[dst..dst + tw].copy_from_slice(&alpha[src..src + tw]);
            out.depth[dst..dst + tw].copy_from_slice(&depth[src..src + tw]);
            out.color[3 * dst..3 * (dst + tw)].copy_from_slice(&color[3 * src..3 * (src + tw)]);
        }
    }
    out
}
