use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{centroid, GeometryError};

/// Principal axes sorted by descending variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAxes {
    pub vectors: [Vector3<f64>; 3],
    pub values: [f64; 3],
}

/// Covariance of mean-centered points (divides by n).
pub fn covariance(points: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    let c = centroid(points)?;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    Some(cov / points.len() as f64)
}

pub fn pca_axes(points: &[Vector3<f64>]) -> Result<PrincipalAxes, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateSpread);
    }
    let cov = covariance(points).ok_or(GeometryError::DegenerateSpread)?;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    // two vanishing directions means the points are collinear (or coincident)
    if values[0] <= 0.0 || values[1] <= 1e-12 * values[0] {
        return Err(GeometryError::DegenerateSpread);
    }
    let mut vectors = order.map(|i| eig.eigenvectors.column(i).normalize());
    // right-handed frame
    vectors[2] = vectors[0].cross(&vectors[1]).normalize();
    Ok(PrincipalAxes { vectors, values })
}
