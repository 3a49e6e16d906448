//! Background analysis: depth map → point cloud → scene up axis →
//! near-horizontal support planes, with area-weighted placement sampling.

mod depth;

pub use depth::{
    load_raw_depth, normalize_depth, read_pfm, write_pfm, DepthConvention, DepthMap, RawDepth, DEPTH_MAX, DEPTH_MIN,
};

use nalgebra::Vector3;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    convex_hull, fit_plane_least_squares, pca_axes, projected_hull_area, ransac_plane, statistical_outlier_filter,
    GeometryError, OutlierParams, Plane, PointCloud, RansacParams,
};
use crate::imagebuf::RgbImage;
use crate::renderer::{Camera, Intrinsics};

#[derive(Debug, Error)]
pub enum BackgroundError {
    #[error("depth map has zero dynamic range")]
    ConstantDepth,
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error("image is {image:?} but depth is {depth:?}")]
    DimensionMismatch { image: (usize, usize), depth: (usize, usize) },
    #[error("no support planes to place on")]
    NoPlanes,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaneParams {
    pub ransac: RansacParams,
    pub max_planes: usize,
    /// Stop once a plane explains less than this fraction of the cloud.
    pub min_inlier_fraction: f64,
    /// Maximum tilt of a support plane away from the up axis.
    pub horizontal_tolerance_deg: f64,
    /// Planes whose centroid height reaches this percentile of all point
    /// heights are treated as ceilings or overhead structure.
    pub top_percentile: f64,
}

impl Default for PlaneParams {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            max_planes: 6,
            min_inlier_fraction: 0.05,
            horizontal_tolerance_deg: 15.0,
            top_percentile: 90.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundParams {
    pub fov_deg: f64,
    pub stride: usize,
    /// Outlier removal on the unprojected cloud; `None` disables it.
    pub outlier: Option<OutlierParams>,
    pub planes: PlaneParams,
}

impl Default for BackgroundParams {
    fn default() -> Self {
        Self {
            fov_deg: 55.0,
            stride: 4,
            outlier: Some(OutlierParams::default()),
            planes: PlaneParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inlier_points: Vec<Vector3<f64>>,
    pub area: f64,
    /// `|normal · up|`.
    pub up_alignment: f64,
}

impl SupportPlane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }
}

/// An analyzed background photograph.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundScene {
    pub image: RgbImage,
    pub depth: DepthMap,
    pub camera: Camera,
    pub up_axis: Vector3<f64>,
    pub planes: Vec<SupportPlane>,
    /// Range of point heights along the up axis.
    pub up_extent: f64,
}

impl BackgroundScene {
    pub fn depth_range(&self) -> f64 {
        let (lo, hi) = self.depth.range();
        f64::from(hi - lo)
    }
}

/// Pinhole intrinsics with horizontal field of view `fov_deg` and a centered principal point.
pub fn intrinsics_from_fov(width: usize, height: usize, fov_deg: f64) -> Intrinsics {
    Intrinsics::from_fov(width, height, fov_deg)
}

/// Back-projects every `stride`-th pixel: `p = z · ((u − cx)/fx, (v − cy)/fy, 1)`.
/// The payload of each point is its pixel index `v · width + u`.
pub fn unproject(depth: &DepthMap, cam: &Camera, stride: usize) -> PointCloud {
    let k = &cam.intrinsics;
    let stride = stride.max(1);
    let mut points = Vec::new();
    let mut payload = Vec::new();
    for v in (0..depth.height).step_by(stride) {
        for u in (0..depth.width).step_by(stride) {
            let z = f64::from(depth.get(u, v));
            points.push(Vector3::new(z * (u as f64 - k.cx) / k.fx, z * (v as f64 - k.cy) / k.fy, z));
            payload.push(v * depth.width + u);
        }
    }
    PointCloud::with_payload(points, payload)
}

/// Unprojection followed by optional statistical outlier removal.
pub fn unproject_filtered(
    depth: &DepthMap,
    cam: &Camera,
    stride: usize,
    outlier: Option<&OutlierParams>,
) -> Result<PointCloud, GeometryError> {
    let cloud = unproject(depth, cam, stride);
    match outlier {
        Some(params) if cloud.len() > params.neighbors => {
            let kept = statistical_outlier_filter(&cloud, params)?;
            Ok(cloud.select(&kept))
        }
        _ => Ok(cloud),
    }
}

/// Scene up direction: least-variance axis of the convex-hull vertices,
/// signed toward image-up `(0, −1, 0)`.
pub fn estimate_up_axis(cloud: &PointCloud) -> Result<Vector3<f64>, GeometryError> {
    let hull = convex_hull(&cloud.points).map_err(|_| GeometryError::DegenerateSpread)?;
    let verts: Vec<Vector3<f64>> = hull.vertices.iter().map(|&i| cloud.points[i]).collect();
    let up = if hull.planar {
        // a flat cloud: its own normal
        let axes = pca_axes(&verts)?;
        axes.vectors[2]
    } else {
        pca_axes(&verts)?.vectors[2]
    };
    Ok(if up.y > 0.0 { -up } else { up })
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

/// Repeated RANSAC with least-squares refit, keeping near-horizontal planes
/// that are not at the top of the scene. Normals point along `up`.
pub fn detect_planes<R: Rng + ?Sized>(
    cloud: &PointCloud,
    up: &Vector3<f64>,
    params: &PlaneParams,
    rng: &mut R,
) -> Vec<SupportPlane> {
    if cloud.len() < 3 {
        return Vec::new();
    }
    let up = up.normalize();
    let total = cloud.len();
    let min_inliers = (params.min_inlier_fraction * total as f64).ceil().max(3.0) as usize;
    let threshold = params.ransac.threshold_for(cloud);
    let ransac = RansacParams {
        iterations: params.ransac.iterations,
        distance_threshold: Some(threshold),
    };

    let mut remaining: Vec<usize> = (0..total).collect();
    let mut candidates: Vec<Plane> = Vec::new();
    for _ in 0..params.max_planes {
        if remaining.len() < min_inliers {
            break;
        }
        let pts: Vec<Vector3<f64>> = remaining.iter().map(|&i| cloud.points[i]).collect();
        let sub = PointCloud::new(pts);
        let Ok(fit) = ransac_plane(&sub, &ransac, rng) else {
            break;
        };
        if fit.inliers.len() < min_inliers {
            break;
        }
        let inlier_pts: Vec<Vector3<f64>> = fit.inliers.iter().map(|&i| sub.points[i]).collect();
        let (normal, offset) = fit_plane_least_squares(&inlier_pts).unwrap_or((fit.normal, fit.offset));
        let refit: Vec<usize> = (0..sub.len())
            .filter(|&i| (normal.dot(&sub.points[i]) + offset).abs() <= threshold)
            .collect();
        let (normal, offset, local) = if refit.len() >= min_inliers {
            (normal, offset, refit)
        } else {
            (fit.normal, fit.offset, fit.inliers)
        };
        let mut taken = vec![false; sub.len()];
        for &i in &local {
            taken[i] = true;
        }
        candidates.push(Plane {
            normal,
            offset,
            inliers: local.iter().map(|&i| remaining[i]).collect(),
            area: 0.0,
        });
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .map(|(_, &g)| g)
            .collect();
    }

    let mut heights: Vec<f64> = cloud.points.iter().map(|p| p.dot(&up)).collect();
    heights.sort_by(f64::total_cmp);
    let top = percentile(&heights, params.top_percentile);
    let spread = heights[heights.len() - 1] - heights[0];
    let has_height = spread > 1e-9 * cloud.bbox_diagonal().max(f64::MIN_POSITIVE);
    let min_alignment = params.horizontal_tolerance_deg.to_radians().cos();

    candidates
        .into_iter()
        .filter_map(|mut plane| {
            plane.orient_towards(&up);
            let alignment = plane.normal.dot(&up).abs();
            if alignment < min_alignment {
                return None;
            }
            let pts: Vec<Vector3<f64>> = plane.inliers.iter().map(|&i| cloud.points[i]).collect();
            let c = crate::geometry::centroid(&pts)?;
            if has_height && c.dot(&up) >= top {
                return None;
            }
            let area = projected_hull_area(&pts, &plane.normal);
            (area > 0.0).then_some(SupportPlane {
                normal: plane.normal,
                offset: plane.offset,
                inlier_points: pts,
                area,
                up_alignment: alignment,
            })
        })
        .collect()
}

/// Picks a plane with probability proportional to its area, then a uniform
/// inlier of that plane projected exactly onto it.
pub fn sample_placement<R: Rng + ?Sized>(
    planes: &[SupportPlane],
    rng: &mut R,
) -> Result<(usize, Vector3<f64>), BackgroundError> {
    if planes.is_empty() {
        return Err(BackgroundError::NoPlanes);
    }
    let dist = WeightedIndex::new(planes.iter().map(|p| p.area)).map_err(|_| BackgroundError::NoPlanes)?;
    let idx = dist.sample(rng);
    let plane = &planes[idx];
    let p = plane.inlier_points[rng.random_range(0..plane.inlier_points.len())];
    Ok((idx, plane.project(&p)))
}

/// Full analysis of one background photograph and its depth map.
pub fn analyze_scene<R: Rng + ?Sized>(
    image: RgbImage,
    depth: DepthMap,
    params: &BackgroundParams,
    rng: &mut R,
) -> Result<BackgroundScene, BackgroundError> {
    if (image.width, image.height) != (depth.width, depth.height) {
        return Err(BackgroundError::DimensionMismatch {
            image: (image.width, image.height),
            depth: (depth.width, depth.height),
        });
    }
    let camera = Camera::identity(intrinsics_from_fov(depth.width, depth.height, params.fov_deg))
        .map_err(|e| BackgroundError::InvalidDepth(e.to_string()))?;
    let cloud = unproject_filtered(&depth, &camera, params.stride, params.outlier.as_ref())?;
    let up_axis = estimate_up_axis(&cloud)?;
    let planes = detect_planes(&cloud, &up_axis, &params.planes, rng);
    let (lo, hi) = cloud
        .points
        .iter()
        .map(|p| p.dot(&up_axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h), hi.max(h)));
    Ok(BackgroundScene {
        image,
        depth,
        camera,
        up_axis,
        planes,
        up_extent: hi - lo,
    })
}
