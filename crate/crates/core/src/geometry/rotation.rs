use nalgebra::{Unit, UnitQuaternion, Vector3};

/// Minimal-angle rotation taking unit vector `a` onto unit vector `b`.
///
/// Antiparallel inputs rotate by π about an axis orthogonal to `a`, taken
/// from whichever of `a × x̂`, `a × ŷ` is longer.
pub fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> UnitQuaternion<f64> {
    let a = a.normalize();
    let b = b.normalize();
    let dot = a.dot(&b).clamp(-1.0, 1.0);
    if dot <= -1.0 + 1e-9 {
        let cx = a.cross(&Vector3::x());
        let cy = a.cross(&Vector3::y());
        let axis = if cx.norm_squared() >= cy.norm_squared() { cx } else { cy };
        return UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), std::f64::consts::PI);
    }
    // half-way quaternion: q = (1 + a·b, a × b), normalized
    let c = a.cross(&b);
    UnitQuaternion::new_normalize(nalgebra::Quaternion::new(1.0 + dot, c.x, c.y, c.z))
}

/// Rotation by `angle` radians about `axis`.
pub fn yaw_rotation(axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle)
}
