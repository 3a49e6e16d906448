use nalgebra::{Matrix2, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};

use super::Camera;
use crate::splat_io::Gaussian;

/// Near clipping distance in camera space.
pub const Z_NEAR: f64 = 0.01;
/// Screen-space covariance floor (pixels²).
pub const COV2D_FLOOR: f64 = 0.3;
/// Contributions below this alpha are skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MAX_ALPHA: f64 = 0.99;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Half-widths (x, y) of the box outside which alpha < 1/255.
    pub extent: Vector2<f64>,
}

impl Splat2D {
    /// Compositing weight at pixel coordinate `p`, before the 1/255 cutoff.
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        let power = -0.5 * (self.conic[(0, 0)] * dx * dx + 2.0 * self.conic[(0, 1)] * dx * dy + self.conic[(1, 1)] * dy * dy);
        if power > 0.0 {
            return 0.0;
        }
        (self.opacity * power.exp()).min(MAX_ALPHA)
    }

    /// Whether the contribution box touches the pixel grid `[0, w-1] × [0, h-1]`.
    pub fn touches_viewport(&self, width: usize, height: usize) -> bool {
        self.mean2d.x + self.extent.x >= 0.0
            && self.mean2d.x - self.extent.x <= (width - 1) as f64
            && self.mean2d.y + self.extent.y >= 0.0
            && self.mean2d.y - self.extent.y <= (height - 1) as f64
    }
}

/// World-space covariance `R diag(s)² Rᵀ`.
pub fn cov3d(scale: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Projection without viewport culling; `None` only in front of the near plane.
/// The splat colour is left black; callers fill it in.
pub fn project_unculled(g: &Gaussian, cam: &Camera) -> Option<Splat2D> {
    let t = cam.world_to_camera(&g.mean);
    if t.z <= Z_NEAR {
        return None;
    }
    let k = &cam.intrinsics;
    let mean2d = cam.project_camera_point(&t);

    // the Jacobian is evaluated with x/z, y/z clamped slightly outside the frustum
    let lim_x = 1.3 * (0.5 * k.width as f64 / k.fx);
    let lim_y = 1.3 * (0.5 * k.height as f64 / k.fy);
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let z2 = t.z * t.z;
    let j = Matrix2x3::new(k.fx / t.z, 0.0, -k.fx * tx / z2, 0.0, k.fy / t.z, -k.fy * ty / z2);
    let w = cam.rotation.to_rotation_matrix().into_inner();
    let jw = j * w;
    let mut cov2d = jw * cov3d(&g.scale, &g.rotation) * jw.transpose();
    cov2d[(0, 0)] += COV2D_FLOOR;
    cov2d[(1, 1)] += COV2D_FLOOR;
    // keep exact symmetry
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;

    let det = cov2d.determinant();
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -off, -off, cov2d[(0, 0)]) / det;

    // alpha >= 1/255 needs dᵀΣ⁻¹d <= 2 ln(255·o); the ellipse's bounding box
    // half-widths are sqrt(q Σxx), sqrt(q Σyy). One pixel of margin.
    let q = 2.0 * (g.opacity / MIN_ALPHA).ln();
    let extent = if q > 0.0 {
        Vector2::new((q * cov2d[(0, 0)]).sqrt() + 1.0, (q * cov2d[(1, 1)]).sqrt() + 1.0)
    } else {
        Vector2::zeros()
    };

    Some(Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        color: [0.0; 3],
        opacity: g.opacity,
        extent,
    })
}

/// Projects a Gaussian for rasterization, or `None` when it is culled:
/// in front of the near plane, too transparent to ever reach 1/255, or with
/// its contribution region entirely outside the viewport.
pub fn project_gaussian(g: &Gaussian, cam: &Camera) -> Option<Splat2D> {
    let splat = project_unculled(g, cam)?;
    if splat.opacity < MIN_ALPHA || !splat.touches_viewport(cam.width(), cam.height()) {
        return None;
    }
    Some(splat)
}
