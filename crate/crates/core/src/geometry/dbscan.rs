use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GeometryError, KdTree, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    Noise,
    Cluster(usize),
}

impl ClusterLabel {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Self::Noise => None,
            Self::Cluster(c) => Some(c),
        }
    }
}

/// Density-based clustering.
///
/// A point is core when at least `min_points` points (itself included) lie
/// within `eps`. Clusters are the eps-connected components of core points,
/// numbered by their lowest core index; a border point joins the first
/// cluster (in that numbering) that reaches it.
pub fn dbscan(cloud: &PointCloud, eps: f64, min_points: usize) -> Result<Vec<ClusterLabel>, GeometryError> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(GeometryError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if min_points == 0 {
        return Err(GeometryError::InvalidParameter("min_points must be at least 1".into()));
    }
    let pts = &cloud.points;
    let tree = KdTree::new(pts);
    let core: Vec<bool> = pts
        .par_iter()
        .map(|p| tree.count_within(p, eps, min_points) >= min_points)
        .collect();

    let mut labels = vec![ClusterLabel::Noise; pts.len()];
    let mut assigned = vec![false; pts.len()];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for seed in 0..pts.len() {
        if assigned[seed] || !core[seed] {
            continue;
        }
        let id = next;
        next += 1;
        assigned[seed] = true;
        labels[seed] = ClusterLabel::Cluster(id);
        queue.push_back(seed);
        while let Some(q) = queue.pop_front() {
            tree.for_each_within(&pts[q], eps, |j| {
                if !assigned[j] {
                    assigned[j] = true;
                    labels[j] = ClusterLabel::Cluster(id);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            });
        }
    }
    Ok(labels)
}
