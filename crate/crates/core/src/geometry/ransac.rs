use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{centroid, convex_hull_2d, pca_axes, polygon_area, GeometryError, Plane, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Absolute inlier distance; `None` means 1% of the cloud's bounding-box diagonal.
    pub distance_threshold: Option<f64>,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            distance_threshold: None,
        }
    }
}

impl RansacParams {
    pub fn threshold_for(&self, cloud: &PointCloud) -> f64 {
        self.distance_threshold
            .unwrap_or_else(|| 0.01 * cloud.bbox_diagonal())
    }
}

fn plane_through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let n = e1.cross(&e2);
    let norm = n.norm();
    if norm <= 1e-12 * e1.norm() * e2.norm() || norm == 0.0 {
        return None;
    }
    let n = n / norm;
    Some((n, -n.dot(a)))
}

fn inliers_of(points: &[Vector3<f64>], normal: &Vector3<f64>, offset: f64, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (normal.dot(p) + offset).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Plane fit by random sample consensus over 3-point samples.
///
/// The returned plane is the one spanned by the best sample (no refit);
/// `area` is the area of the 2D convex hull of the inliers projected onto it.
pub fn ransac_plane<R: Rng + ?Sized>(
    cloud: &PointCloud,
    params: &RansacParams,
    rng: &mut R,
) -> Result<Plane, GeometryError> {
    let threshold = params.threshold_for(cloud);
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(GeometryError::InvalidParameter(format!(
            "distance threshold must be positive, got {threshold}"
        )));
    }
    let n = cloud.len();
    if n < 3 {
        return Err(GeometryError::DegenerateCloud {
            iterations: params.iterations,
        });
    }
    let pts = &cloud.points;
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        let (lo, hi) = (i.min(j), i.max(j));
        if k >= lo {
            k += 1;
        }
        if k >= hi {
            k += 1;
        }
        let Some((normal, offset)) = plane_through(&pts[i], &pts[j], &pts[k]) else {
            continue;
        };
        let count = pts
            .iter()
            .filter(|p| (normal.dot(p) + offset).abs() <= threshold)
            .count();
        if best.is_none_or(|(c, _, _)| count > c) {
            best = Some((count, normal, offset));
        }
    }
    let (_, normal, offset) = best.ok_or(GeometryError::DegenerateCloud {
        iterations: params.iterations,
    })?;
    let inliers = inliers_of(pts, &normal, offset, threshold);
    let area = projected_hull_area(inliers.iter().map(|&i| &pts[i]), &normal);
    Ok(Plane {
        normal,
        offset,
        inliers,
        area,
    })
}

/// Total least-squares plane through `points`: centroid plus the direction
/// of least variance.
pub fn fit_plane_least_squares(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, f64), GeometryError> {
    let c = centroid(points).ok_or(GeometryError::DegenerateSpread)?;
    let axes = pca_axes(points)?;
    let normal = axes.vectors[2];
    Ok((normal, -normal.dot(&c)))
}

/// Orthonormal basis (u, v) of the plane perpendicular to `normal`.
pub(crate) fn plane_basis(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    (u, v)
}

/// Area of the convex hull of `points` after projection onto the plane with `normal`.
pub fn projected_hull_area<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>, normal: &Vector3<f64>) -> f64 {
    let (u, v) = plane_basis(normal);
    let flat: Vec<[f64; 2]> = points.into_iter().map(|p| [p.dot(&u), p.dot(&v)]).collect();
    let hull = convex_hull_2d(&flat);
    let poly: Vec<[f64; 2]> = hull.iter().map(|&i| flat[i]).collect();
    polygon_area(&poly)
}
