//! Distances between rotations and between unit directions.

use crate::types::{Rotation, UnitVector3};

/// Frobenius distance `||a - b||_F`, in `[0, 2*sqrt(2)]`.
pub fn rotation_distance(a: &Rotation, b: &Rotation) -> f64 {
    (a.matrix() - b.matrix()).norm()
}

/// Chordal distance `||u - v|| = 2 sin(theta / 2)`.
pub fn chordal_direction_distance(u: &UnitVector3, v: &UnitVector3) -> f64 {
    (u.as_vec() - v.as_vec()).norm()
}

/// Orthogonal distance `||u x v|| = sin(theta)`. Not monotone in the angle:
/// antipodal directions score zero.
pub fn orthogonal_direction_distance(u: &UnitVector3, v: &UnitVector3) -> f64 {
    u.as_vec().cross(v.as_vec()).norm()
}

/// Moves a direction from camera frame to world frame.
pub fn transport_direction(rotation: &Rotation, local: &UnitVector3) -> UnitVector3 {
    UnitVector3::new_unchecked(rotation * local.as_vec())
}
