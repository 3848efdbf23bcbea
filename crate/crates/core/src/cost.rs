//! The full viewing-graph mismatch cost and its gradient.
//!
//! For every edge `(i, j)` the cost adds
//! `rot_weight * ||R_ij - R_j^T R_i||_F^2 + w_ij * d(gamma_ij, p_j - p_i)^2`
//! with `gamma_ij = R_i gamma^l_ij` and `d` one of the [`DirectionMetric`]s.
//! Gradients are taken with respect to positions and to right-perturbation
//! tangent vectors (`R_i exp([delta_i]x)`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{vee, Mat3, PoseEstimate, Vec3, ViewingGraph, Weights};

/// Relative degeneracy floor applied to `||p_j - p_i||` under direction metrics.
pub const DEGENERACY_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMetric {
    /// `||gamma - (p_j - p_i) / ||p_j - p_i|| ||^2`
    ChordalDirection,
    /// `|| ||p_j - p_i|| gamma - (p_j - p_i) ||^2`
    ChordalDisplacement,
    /// `||gamma x (p_j - p_i) / ||p_j - p_i|| ||^2`
    OrthogonalDirection,
}

impl DirectionMetric {
    fn needs_floor(self) -> bool {
        !matches!(self, DirectionMetric::ChordalDisplacement)
    }
}

/// Gradient of the cost, one 3-vector per vertex and block.
#[derive(Clone, Debug, PartialEq)]
pub struct CostGradient {
    pub rotations: Vec<Vec3>,
    pub positions: Vec<Vec3>,
}

impl CostGradient {
    pub fn norm(&self) -> f64 {
        self.rotations
            .iter()
            .chain(&self.positions)
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn check_inputs(g: &ViewingGraph, est: &PoseEstimate, w: &Weights) -> Result<()> {
    if est.len() != g.vertex_count() {
        return Err(Error::InvalidInput(format!(
            "estimate covers {} vertices, graph has {}",
            est.len(),
            g.vertex_count()
        )));
    }
    if w.len() != g.edge_count() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} edges",
            w.len(),
            g.edge_count()
        )));
    }
    Ok(())
}

/// Evaluates the viewing-graph cost. Fails with `DegenerateEdge` when a
/// direction metric meets an edge shorter than `1e-12 * diameter`.
pub fn viewing_graph_cost(
    g: &ViewingGraph,
    est: &PoseEstimate,
    rot_weight: f64,
    trans_weights: &Weights,
    metric: DirectionMetric,
) -> Result<f64> {
    evaluate(g, est, rot_weight, trans_weights, metric, false).map(|(c, _)| c)
}

/// Cost together with its analytic gradient.
pub fn viewing_graph_cost_gradient(
    g: &ViewingGraph,
    est: &PoseEstimate,
    rot_weight: f64,
    trans_weights: &Weights,
    metric: DirectionMetric,
) -> Result<(f64, CostGradient)> {
    evaluate(g, est, rot_weight, trans_weights, metric, true)
        .map(|(c, grad)| (c, grad.expect("gradient requested")))
}

fn evaluate(
    g: &ViewingGraph,
    est: &PoseEstimate,
    rot_weight: f64,
    trans_weights: &Weights,
    metric: DirectionMetric,
    with_gradient: bool,
) -> Result<(f64, Option<CostGradient>)> {
    check_inputs(g, est, trans_weights)?;
    let n = g.vertex_count();
    let floor = if metric.needs_floor() { DEGENERACY_FLOOR * est.diameter() } else { 0.0 };
    let mut grad = with_gradient.then(|| CostGradient {
        rotations: vec![Vec3::zeros(); n],
        positions: vec![Vec3::zeros(); n],
    });
    let mut total = 0.0;

    for (e, &w) in g.edges().iter().zip(trans_weights.as_slice()) {
        let (ri, rj) = (est.rotations[e.i].matrix(), est.rotations[e.j].matrix());
        let rij = e.rel_rotation.matrix();

        // Rotation term.
        let rel = rj.transpose() * ri;
        total += rot_weight * (rij - rel).norm_squared();
        if let Some(grad) = grad.as_mut() {
            let a: Mat3 = rij.transpose() * rel;
            let b: Mat3 = rel * rij.transpose();
            grad.rotations[e.i] += 2.0 * rot_weight * vee(&(a - a.transpose()));
            grad.rotations[e.j] -= 2.0 * rot_weight * vee(&(b - b.transpose()));
        }

        if w == 0.0 {
            continue;
        }
        // Direction term.
        let gl = e.direction_local.as_vec();
        let gamma = ri * gl;
        let d = est.positions[e.j] - est.positions[e.i];
        let len = d.norm();
        if metric.needs_floor() && !(len > floor) {
            return Err(Error::DegenerateEdge { i: e.i, j: e.j, length: len });
        }
        let (value, grad_d, grad_rot) = match metric {
            DirectionMetric::ChordalDirection => {
                let u = d / len;
                let value = w * (gamma - u).norm_squared();
                let proj = gamma - u * u.dot(&gamma);
                let grad_d = -2.0 * w * proj / len;
                let grad_rot = -2.0 * w * gl.cross(&(ri.transpose() * u));
                (value, grad_d, grad_rot)
            }
            DirectionMetric::ChordalDisplacement => {
                let r = gamma * len - d;
                let value = w * r.norm_squared();
                let grad_d = if len > 0.0 {
                    let u = d / len;
                    2.0 * w * (u * gamma.dot(&r) - r)
                } else {
                    Vec3::zeros()
                };
                let grad_rot = 2.0 * w * len * gl.cross(&(ri.transpose() * r));
                (value, grad_d, grad_rot)
            }
            DirectionMetric::OrthogonalDirection => {
                let u = d / len;
                let c = gamma.dot(&u);
                let value = w * gamma.cross(&u).norm_squared();
                let proj = gamma - u * c;
                let grad_d = -2.0 * w * c * proj / len;
                let grad_rot = -2.0 * w * c * gl.cross(&(ri.transpose() * u));
                (value, grad_d, grad_rot)
            }
        };
        total += value;
        if let Some(grad) = grad.as_mut() {
            grad.positions[e.j] += grad_d;
            grad.positions[e.i] -= grad_d;
            grad.rotations[e.i] += grad_rot;
        }
    }
    Ok((total, grad))
}
