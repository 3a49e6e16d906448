//! Similarity transforms of whole splat models.

use nalgebra::{UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::renderer::ShRotation;
use crate::splat_io::SplatModel;

/// How view-dependent colour is carried through a rotation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShTransform {
    /// Rotate every SH degree so appearance is preserved.
    #[default]
    Rotate,
    /// Drop degrees ≥ 1 and keep only the view-independent colour.
    TruncateToDc,
}

/// Applies `x ↦ scale · rotation · x + translation` to every Gaussian.
pub fn transform_model(
    model: &SplatModel,
    rotation: &UnitQuaternion<f64>,
    translation: &Vector3<f64>,
    scale: f64,
    sh: ShTransform,
) -> SplatModel {
    let sh_rotation = (sh == ShTransform::Rotate && model.sh_degree > 0).then(|| ShRotation::new(rotation));
    let degree = match sh {
        ShTransform::Rotate => model.sh_degree,
        ShTransform::TruncateToDc => 0,
    };
    let gaussians = model
        .gaussians
        .par_iter()
        .map(|g| {
            let mut g = g.clone();
            g.mean = rotation * g.mean * scale + translation;
            g.scale *= scale;
            g.rotation = rotation * g.rotation;
            match &sh_rotation {
                Some(r) => r.apply(&mut g.sh, degree),
                None if degree == 0 => g.sh[1..].iter_mut().for_each(|c| *c = [0.0; 3]),
                None => {}
            }
            g
        })
        .collect();
    SplatModel {
        gaussians,
        sh_degree: degree,
        source_path: model.source_path.clone(),
    }
}
