use serde::{Deserialize, Serialize};

use super::{knn, GeometryError, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierParams {
    pub neighbors: usize,
    pub std_ratio: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            neighbors: 50,
            std_ratio: 0.1,
        }
    }
}

/// Statistical outlier removal.
///
/// Each point's statistic is its mean distance to its `neighbors` nearest
/// neighbors. A point is kept when that statistic is at most
/// `mean + std_ratio * std` taken over the whole cloud (sample deviation).
/// Returns the kept indices in ascending order.
pub fn statistical_outlier_filter(cloud: &PointCloud, params: &OutlierParams) -> Result<Vec<usize>, GeometryError> {
    if params.neighbors == 0 || cloud.len() <= params.neighbors {
        return Err(GeometryError::CloudTooSmall {
            size: cloud.len(),
            neighbors: params.neighbors,
        });
    }
    if params.std_ratio.is_nan() || params.std_ratio < 0.0 {
        return Err(GeometryError::InvalidParameter(format!(
            "std_ratio must be non-negative, got {}",
            params.std_ratio
        )));
    }
    let nn = knn(cloud, params.neighbors)?;
    let means: Vec<f64> = nn
        .distances
        .iter()
        .map(|d| d.iter().sum::<f64>() / d.len() as f64)
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let var = if means.len() > 1 {
        means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    // absorbs summation-order rounding between geometrically identical points
    let slack = 1e-9 * mu.abs();
    let threshold = mu + params.std_ratio * var.sqrt() + slack;
    Ok(means
        .iter()
        .enumerate()
        .filter(|(_, m)| **m <= threshold)
        .map(|(i, _)| i)
        .collect())
}
