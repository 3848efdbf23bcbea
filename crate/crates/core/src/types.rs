//! Domain types shared by every solver.
//!
//! Conventions: a camera orientation `R_i` maps local coordinates to world
//! coordinates (`world = R_i * local`). An edge `(i, j)` carries a noisy
//! measurement of `R_j^T R_i` and of the unit direction from camera `i`
//! towards camera `j`, expressed in frame `i`.

use std::collections::HashSet;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance accepted as-is by [`Rotation::new`].
pub const ROTATION_TOL: f64 = 1e-9;
/// Near-misses up to this deviation are re-projected onto SO(3).
pub const ROTATION_REPROJECT_TOL: f64 = 1e-6;

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates `m`; deviations within [`ROTATION_REPROJECT_TOL`] are
    /// snapped back onto SO(3) with [`nearest_rotation`].
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidRotation { ortho: f64::INFINITY, det: f64::NAN });
        }
        let ortho = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        let det_err = (det - 1.0).abs();
        if ortho <= ROTATION_TOL && det_err <= ROTATION_TOL {
            Ok(Rotation(m))
        } else if ortho <= ROTATION_REPROJECT_TOL && det_err <= ROTATION_REPROJECT_TOL {
            nearest_rotation(&m)
        } else {
            Err(Error::InvalidRotation { ortho, det })
        }
    }

    /// Wraps a matrix known to be a rotation up to floating-point rounding.
    #[cfg(test)]
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Builds a rotation from nine row-major entries.
    pub fn from_row_slice(rows: &[f64]) -> Result<Self> {
        if rows.len() != 9 {
            return Err(Error::InvalidInput(format!("expected 9 rotation entries, got {}", rows.len())));
        }
        Rotation::new(Mat3::from_row_slice(rows))
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn exp(omega: &Vec3) -> Self {
        Rotation(*Rotation3::new(*omega).matrix())
    }

    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Rotation::identity();
        }
        Rotation::exp(&(axis * (angle / n)))
    }

    /// Haar-uniform random rotation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    q[0], q[1], q[2], q[3],
                ));
                return Rotation(*quat.to_rotation_matrix().matrix());
            }
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Geodesic angle to the identity in radians, accurate near zero.
    pub fn angle(&self) -> f64 {
        let m = &self.0;
        let s = vee(&(m - m.transpose())).norm() * 0.5;
        let c = (m.trace() - 1.0) * 0.5;
        s.atan2(c)
    }

    /// Geodesic distance `angle(self^T other)`.
    pub fn geodesic_distance(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }

    /// Right-perturbation retraction `R exp([delta]x)`, re-projected onto
    /// SO(3) so that rounding never accumulates.
    pub fn retract(&self, delta: &Vec3) -> Self {
        let m = self.0 * Rotation::exp(delta).0;
        nearest_rotation(&m).unwrap_or(Rotation(m))
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = <[f64; 9]>::deserialize(d)?;
        Rotation::from_row_slice(&rows).map_err(serde::de::Error::custom)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Skew-symmetric matrix `[v]x` such that `[v]x w = v x w`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] applied to an arbitrary matrix (reads its
/// antisymmetric entries `(m21, m02, m10)`).
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Closest rotation to `m` in Frobenius norm: orthogonal polar factor with a
/// determinant sign correction.
pub fn nearest_rotation(m: &Mat3) -> Result<Rotation> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::SingularInput { ratio: 0.0 }),
    };
    let s = svd.singular_values;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) || smin < 1e-12 * smax {
        return Err(Error::SingularInput { ratio: if smax > 0.0 { smin / smax } else { 0.0 } });
    }
    let d = (u * v_t).determinant().signum();
    let correction = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    // nalgebra does not sort singular values; the sign flip must hit the
    // smallest one.
    let k = s.imin();
    let mut perm = Mat3::identity();
    if k != 2 {
        perm.swap_columns(k, 2);
    }
    let u = u * perm;
    let v_t = perm.transpose() * v_t;
    Ok(Rotation(u * correction * v_t))
}

/// Unit-norm direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitVector3(Vec3);

impl UnitVector3 {
    /// Normalizes `v`; zero or non-finite input is rejected.
    pub fn new_normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 1e-300) {
            return Err(Error::ZeroVector([v.x, v.y, v.z]));
        }
        // Already-unit input is kept bit for bit so files round-trip.
        if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(UnitVector3(v));
        }
        Ok(UnitVector3(v / n))
    }

    pub(crate) fn new_unchecked(v: Vec3) -> Self {
        UnitVector3(v)
    }

    pub fn x() -> Self {
        UnitVector3(Vec3::x())
    }
    pub fn y() -> Self {
        UnitVector3(Vec3::y())
    }
    pub fn z() -> Self {
        UnitVector3(Vec3::z())
    }

    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_inner(self) -> Vec3 {
        self.0
    }

    /// Angle to another direction in radians.
    pub fn angle_to(&self, other: &UnitVector3) -> f64 {
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

impl std::ops::Neg for UnitVector3 {
    type Output = UnitVector3;
    fn neg(self) -> UnitVector3 {
        UnitVector3(-self.0)
    }
}

/// One relative-motion observation between cameras `i` and `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Measurement of `R_j^T R_i`.
    pub rel_rotation: Rotation,
    /// Direction from `i` towards `j`, in frame `i`.
    pub direction_local: UnitVector3,
}

/// Vertices `0..n` plus the observed edges. Always connected.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewingGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl ViewingGraph {
    /// Validates indices, rejects self-loops and duplicate unordered pairs,
    /// and requires the graph to be connected.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("a viewing graph needs at least 2 vertices, got {n}")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.i >= n || e.j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) references a vertex outside 0..{n}",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidInput(format!("self-loop on vertex {}", e.i)));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::InvalidInput(format!("duplicate edge between {} and {}", e.i, e.j)));
            }
        }
        graph::require_connected(n, edges.iter().map(|e| (e.i, e.j)))?;
        Ok(ViewingGraph { n, edges })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|e| (e.i, e.j))
    }

    /// Keeps the edges whose index passes `keep`; fails if that disconnects
    /// the graph.
    pub fn retain_edges(&self, mut keep: impl FnMut(usize, &Edge) -> bool) -> Result<Self> {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(k, e)| keep(*k, e))
            .map(|(_, e)| *e)
            .collect();
        ViewingGraph::new(self.n, edges)
    }
}

/// Per-vertex rotation and position estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub rotations: Vec<Rotation>,
    pub positions: Vec<Vec3>,
}

impl PoseEstimate {
    pub fn new(rotations: Vec<Rotation>, positions: Vec<Vec3>) -> Result<Self> {
        if rotations.len() != positions.len() {
            return Err(Error::InvalidInput(format!(
                "{} rotations but {} positions",
                rotations.len(),
                positions.len()
            )));
        }
        Ok(PoseEstimate { rotations, positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        scene_diameter(&self.positions)
    }

    /// Applies `p -> s * g * p + t`, `R -> g * R`.
    pub fn transformed(&self, g: &Rotation, t: &Vec3, s: f64) -> PoseEstimate {
        PoseEstimate {
            rotations: self.rotations.iter().map(|r| *g * *r).collect(),
            positions: self.positions.iter().map(|p| (g * p) * s + t).collect(),
        }
    }
}

/// Per-edge scale factors, indexed like the edge list they were solved for.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeScales(pub Vec<f64>);

impl EdgeScales {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Non-negative per-edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidInput(format!("weight {bad} is not finite and non-negative")));
        }
        Ok(Weights(w))
    }

    pub fn uniform(m: usize) -> Self {
        Weights(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Largest pairwise distance.
pub fn scene_diameter(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (a, p) in points.iter().enumerate() {
        for q in &points[a + 1..] {
            best = best.max((p - q).norm_squared());
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn rotation_rejects_large_violations_and_snaps_small_ones() {
        assert!(Rotation::new(Mat3::identity() * 1.1).is_err());
        let near = Mat3::identity() + Mat3::from_element(1e-8);
        let r = Rotation::new(near).unwrap();
        assert!((r.matrix().transpose() * r.matrix() - Mat3::identity()).norm() < 1e-12);
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(Rotation::new(reflect).is_err());
    }

    #[test]
    fn nearest_rotation_fixed_points() {
        let i = nearest_rotation(&Mat3::identity()).unwrap();
        assert!((i.matrix() - Mat3::identity()).norm() < 1e-15);
        let i2 = nearest_rotation(&(Mat3::identity() * 2.0)).unwrap();
        assert!((i2.matrix() - Mat3::identity()).norm() < 1e-15);
        assert!(matches!(nearest_rotation(&Mat3::zeros()), Err(Error::SingularInput { .. })));
        let rank2 = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0));
        assert!(matches!(nearest_rotation(&rank2), Err(Error::SingularInput { .. })));
    }

    #[test]
    fn nearest_rotation_handles_reflections() {
        let m = Mat3::from_diagonal(&Vec3::new(3.0, 2.0, -1.0));
        let r = nearest_rotation(&m).unwrap();
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        // Flip lands on the smallest singular value.
        assert!((r.matrix() - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn nearest_rotation_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth = Rotation::random(&mut rng);
        let noise = Mat3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let m = truth.matrix() + noise * 0.01;
        let r = nearest_rotation(&m).unwrap();
        assert!((r.matrix() - truth.matrix()).norm() < 0.05);
        let best = (m - r.matrix()).norm();
        for _ in 0..10_000 {
            let cand = Rotation::random(&mut rng);
            assert!((m - cand.matrix()).norm() >= best);
        }
    }

    #[test]
    fn angle_is_accurate_near_zero_and_pi() {
        for theta in [1e-10, 1e-5, 0.3, 2.0, PI - 1e-6] {
            let r = Rotation::about_axis(&Vec3::new(1.0, 2.0, -0.5), theta);
            assert!((r.angle() - theta).abs() < 1e-9 * theta.max(1.0), "{theta}");
        }
    }

    #[test]
    fn hat_vee_roundtrip() {
        let v = Vec3::new(0.3, -1.2, 2.0);
        let w = Vec3::new(-0.7, 0.1, 0.4);
        assert_eq!(vee(&hat(&v)), v);
        assert!((hat(&v) * w - v.cross(&w)).norm() < 1e-15);
    }

    #[test]
    fn graph_validation() {
        let e = |i, j| Edge {
            i,
            j,
            rel_rotation: Rotation::identity(),
            direction_local: UnitVector3::x(),
        };
        assert!(ViewingGraph::new(3, vec![e(0, 1), e(1, 2)]).is_ok());
        assert!(matches!(
            ViewingGraph::new(3, vec![e(0, 1), e(1, 0)]),
            Err(Error::InvalidInput(_))
        ));
        assert!(ViewingGraph::new(3, vec![e(0, 0), e(1, 2)]).is_err());
        assert!(ViewingGraph::new(3, vec![e(0, 3)]).is_err());
        match ViewingGraph::new(4, vec![e(0, 1), e(2, 3)]) {
            Err(Error::Disconnected { sizes }) => assert_eq!(sizes, vec![2, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unit_vector_normalizes() {
        let u = UnitVector3::new_normalize(Vec3::new(3.0, 4.0, 0.0)).unwrap();
        assert!((u.as_vec().norm() - 1.0).abs() < 1e-15);
        assert!(UnitVector3::new_normalize(Vec3::zeros()).is_err());
        assert!(UnitVector3::new_normalize(Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
    }
}
