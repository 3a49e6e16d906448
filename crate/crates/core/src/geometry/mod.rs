//! Point-cloud algorithms shared by object extraction and background analysis.

mod dbscan;
mod filter;
mod hull;
mod kdtree;
mod pca;
mod ransac;
mod rotation;

pub use dbscan::{dbscan, ClusterLabel};
pub use filter::{statistical_outlier_filter, OutlierParams};
pub use hull::{convex_hull, convex_hull_2d, polygon_area, ConvexHull};
pub use kdtree::KdTree;
pub use pca::{covariance, pca_axes, PrincipalAxes};
pub use ransac::{fit_plane_least_squares, projected_hull_area, ransac_plane, RansacParams};
pub use rotation::{rotation_between, yaw_rotation};

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("k = {k} must be smaller than the cloud size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("no non-collinear sample found in {iterations} RANSAC iterations")]
    DegenerateCloud { iterations: usize },
    #[error("cloud of {size} points is too small for {neighbors} neighbors")]
    CloudTooSmall { size: usize, neighbors: usize },
    #[error("points do not span enough dimensions for PCA")]
    DegenerateSpread,
    #[error("convex hull input is degenerate: {0}")]
    DegenerateInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Maps each point back to its source record (gaussian or pixel index).
    pub payload: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, payload: None }
    }

    pub fn with_payload(points: Vec<Vector3<f64>>, payload: Vec<usize>) -> Self {
        assert_eq!(points.len(), payload.len(), "payload length mismatch");
        Self {
            points,
            payload: Some(payload),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Source record of point `i` (the point index itself without a payload).
    pub fn source(&self, i: usize) -> usize {
        self.payload.as_ref().map_or(i, |p| p[i])
    }

    /// A new cloud holding the points at `indices` with their payload.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            payload: Some(indices.iter().map(|&i| self.source(i)).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        centroid(&self.points)
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (hi - lo).norm()
    }
}

pub fn centroid(points: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    if points.is_empty() {
        return None;
    }
    Some(points.iter().sum::<Vector3<f64>>() / points.len() as f64)
}

/// Plane `{p : normal·p + offset = 0}` with the inliers it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub inliers: Vec<usize>,
    pub area: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Flips the plane so that `normal·dir >= 0`.
    pub fn orient_towards(&mut self, dir: &Vector3<f64>) {
        if self.normal.dot(dir) < 0.0 {
            self.normal = -self.normal;
            self.offset = -self.offset;
        }
    }
}

/// Neighbor lists produced by [`knn`]; row `i` holds the neighbors of point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

/// Exact k-nearest neighbors of every point (excluding itself), ordered by
/// distance with ties broken by lower index.
pub fn knn(cloud: &PointCloud, k: usize) -> Result<Neighbors, GeometryError> {
    if k == 0 || k >= cloud.len() {
        return Err(GeometryError::KTooLarge { k, size: cloud.len() });
    }
    let tree = KdTree::new(&cloud.points);
    let rows: Vec<(Vec<usize>, Vec<f64>)> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| tree.nearest(p, k, Some(i)).into_iter().unzip())
        .collect();
    let (indices, distances) = rows.into_iter().unzip();
    Ok(Neighbors { indices, distances })
}
