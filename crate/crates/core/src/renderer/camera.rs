use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderError;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` is sampled at coordinate `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, `fov_deg` horizontal.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let fx = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(RenderError::InvalidCamera(format!("{self:?}")))
        }
    }
}

/// Intrinsics plus a rigid world-to-camera transform (`x_cam = R x_world + t`).
/// Camera axes: x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Result<Self, RenderError> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            rotation,
            translation,
        })
    }

    /// Camera at the world origin looking down +z.
    pub fn identity(intrinsics: Intrinsics) -> Result<Self, RenderError> {
        Self::new(intrinsics, UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Pixel coordinates of a camera-space point (no culling).
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let k = &self.intrinsics;
        Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
    }

    /// Pixel coordinates and depth of a world point, `None` when behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let c = self.world_to_camera(p);
        (c.z > 0.0).then(|| (self.project_camera_point(&c), c.z))
    }

    /// The camera that sees `transform(world)` the way `self` sees `world`,
    /// for a rigid `x' = rotation·x + translation`.
    pub fn transformed(&self, rotation: &UnitQuaternion<f64>, translation: &Vector3<f64>) -> Self {
        let r = self.rotation * rotation.inverse();
        Self {
            intrinsics: self.intrinsics,
            rotation: r,
            translation: self.translation - r * translation,
        }
    }
}
