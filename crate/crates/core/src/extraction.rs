//! Foreground object extraction from a captured splat scene.
//!
//! Three filters run in sequence on the Gaussian centers: removal of the
//! dominant (resting) plane, statistical outlier removal, and density
//! clustering that keeps the cluster nearest the middle of what is left.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    centroid, dbscan, ransac_plane, rotation_between, statistical_outlier_filter, GeometryError, OutlierParams,
    PointCloud, RansacParams,
};
use crate::splat_io::{load_splat_ply, save_splat_ply, SplatIoError, SplatModel};
use crate::transform::{transform_model, ShTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionParams {
    pub plane: RansacParams,
    pub outlier: OutlierParams,
    pub dbscan_eps: f64,
    pub dbscan_min_points: usize,
    /// Treatment of view-dependent colour when the object is recentered.
    pub sh_transform: ShTransform,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            plane: RansacParams::default(),
            outlier: OutlierParams::default(),
            dbscan_eps: 0.5,
            dbscan_min_points: 100,
            sh_transform: ShTransform::Rotate,
        }
    }
}

/// Gaussian counts after each filter stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: usize,
    pub after_plane: usize,
    pub after_statistical: usize,
    pub after_cluster: usize,
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("model is empty")]
    EmptyModel,
    #[error("no resting plane found: {0}")]
    NoPlaneFound(GeometryError),
    #[error(
        "no cluster survives extraction (input {}, after plane {}, after statistical {}, after cluster {})",
        .0.input, .0.after_plane, .0.after_statistical, .0.after_cluster
    )]
    NoClusterSurvives(StageCounts),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] SplatIoError),
    #[error("metadata: {0}")]
    Metadata(String),
}

/// An isolated object with the ground frame it was captured on.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundObject {
    pub model: SplatModel,
    /// Normal of the removed ground plane, pointing toward the object.
    pub up: Vector3<f64>,
    /// Object centroid projected onto the ground plane.
    pub base_point: Vector3<f64>,
    pub name: String,
}

impl ForegroundObject {
    pub fn centroid(&self) -> Vector3<f64> {
        centroid(&self.model.means()).unwrap_or(self.base_point)
    }

    /// True when `up = +y` and the base point is the origin (within `tol`).
    pub fn is_canonical(&self, tol: f64) -> bool {
        (self.up - Vector3::y()).norm() <= tol && self.base_point.norm() <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub object: ForegroundObject,
    pub counts: StageCounts,
    /// Model indices of the kept Gaussians, ascending.
    pub kept: Vec<usize>,
}

pub fn extract_foreground<R: Rng + ?Sized>(
    model: &SplatModel,
    name: &str,
    params: &ExtractionParams,
    rng: &mut R,
) -> Result<Extraction, ExtractionError> {
    if model.is_empty() {
        return Err(ExtractionError::EmptyModel);
    }
    let mut counts = StageCounts {
        input: model.len(),
        ..Default::default()
    };
    let cloud = PointCloud::new(model.means());

    let plane = ransac_plane(&cloud, &params.plane, rng).map_err(ExtractionError::NoPlaneFound)?;
    let mut on_plane = vec![false; cloud.len()];
    for &i in &plane.inliers {
        on_plane[i] = true;
    }
    let remaining: Vec<usize> = (0..cloud.len()).filter(|&i| !on_plane[i]).collect();
    counts.after_plane = remaining.len();
    log::info!("plane filter: {} -> {}", counts.input, counts.after_plane);

    let stage1 = cloud.select(&remaining);
    if stage1.len() <= params.outlier.neighbors {
        return Err(ExtractionError::NoClusterSurvives(counts));
    }
    let kept = statistical_outlier_filter(&stage1, &params.outlier)?;
    let stage2 = stage1.select(&kept);
    counts.after_statistical = stage2.len();
    log::info!("statistical filter: {} -> {}", counts.after_plane, counts.after_statistical);

    let labels = dbscan(&stage2, params.dbscan_eps, params.dbscan_min_points)?;
    let n_clusters = labels.iter().filter_map(|l| l.cluster()).max().map_or(0, |m| m + 1);
    if n_clusters == 0 {
        return Err(ExtractionError::NoClusterSurvives(counts));
    }
    let middle = stage2.centroid().expect("non-empty cloud");
    let mut sums = vec![(Vector3::zeros(), 0usize); n_clusters];
    for (p, l) in stage2.points.iter().zip(&labels) {
        if let Some(c) = l.cluster() {
            sums[c].0 += p;
            sums[c].1 += 1;
        }
    }
    let chosen = (0..n_clusters)
        .min_by(|&a, &b| {
            let da = (sums[a].0 / sums[a].1 as f64 - middle).norm();
            let db = (sums[b].0 / sums[b].1 as f64 - middle).norm();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .expect("at least one cluster");
    let mut kept: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.cluster() == Some(chosen))
        .map(|(i, _)| stage2.source(i))
        .collect();
    kept.sort_unstable();
    counts.after_cluster = kept.len();
    log::info!(
        "cluster filter: {} -> {} ({} clusters)",
        counts.after_statistical,
        counts.after_cluster,
        n_clusters
    );

    let object_model = model.subset(&kept);
    let c = centroid(&object_model.means()).expect("non-empty cluster");
    let mut plane = plane;
    if plane.signed_distance(&c) < 0.0 {
        plane.normal = -plane.normal;
        plane.offset = -plane.offset;
    }
    let base_point = plane.project(&c);
    Ok(Extraction {
        object: ForegroundObject {
            model: object_model,
            up: plane.normal,
            base_point,
            name: name.to_string(),
        },
        counts,
        kept,
    })
}

/// Rigid transform `(rotation, translation)` taking the object's base point
/// to the origin and its up vector to +y.
pub fn canonical_transform(obj: &ForegroundObject) -> (UnitQuaternion<f64>, Vector3<f64>) {
    let rotation = rotation_between(&obj.up, &Vector3::y());
    let translation = -(rotation * obj.base_point);
    (rotation, translation)
}

/// Moves the object into its canonical frame (base at origin, up = +y).
pub fn recenter(obj: &ForegroundObject, sh: ShTransform) -> ForegroundObject {
    let (rotation, translation) = canonical_transform(obj);
    ForegroundObject {
        model: transform_model(&obj.model, &rotation, &translation, 1.0, sh),
        up: Vector3::y(),
        base_point: Vector3::zeros(),
        name: obj.name.clone(),
    }
}

/// Sidecar written next to an extracted foreground PLY.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundMeta {
    pub name: String,
    pub up: [f64; 3],
    pub base_point: [f64; 3],
    pub params: ExtractionParams,
    pub counts: StageCounts,
    pub source: String,
}

pub fn meta_path(ply: &Path) -> PathBuf {
    ply.with_extension("json")
}

/// Writes `<dir>/<stem>.ply` and its `.json` sidecar; returns the PLY path.
pub fn save_foreground(
    extraction: &Extraction,
    params: &ExtractionParams,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf, ExtractionError> {
    fs::create_dir_all(dir).map_err(SplatIoError::from)?;
    let ply = dir.join(format!("{stem}.ply"));
    save_splat_ply(&extraction.object.model, &ply)?;
    let obj = &extraction.object;
    let meta = ForegroundMeta {
        name: obj.name.clone(),
        up: obj.up.into(),
        base_point: obj.base_point.into(),
        params: *params,
        counts: extraction.counts,
        source: obj.model.source_path.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| ExtractionError::Metadata(e.to_string()))?;
    fs::write(meta_path(&ply), text).map_err(SplatIoError::from)?;
    Ok(ply)
}

/// Loads a foreground PLY together with its sidecar.
pub fn load_foreground(ply: &Path) -> Result<(ForegroundObject, ForegroundMeta), ExtractionError> {
    let text = fs::read_to_string(meta_path(ply)).map_err(SplatIoError::from)?;
    let meta: ForegroundMeta = serde_json::from_str(&text).map_err(|e| ExtractionError::Metadata(e.to_string()))?;
    let model = load_splat_ply(ply)?;
    let obj = ForegroundObject {
        model,
        up: Vector3::from(meta.up).normalize(),
        base_point: Vector3::from(meta.base_point),
        name: meta.name.clone(),
    };
    Ok((obj, meta))
}
