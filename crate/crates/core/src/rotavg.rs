//! Chordal (Frobenius) rotation averaging.
//!
//! Minimizes `sum_ij ||R_ij - R_j^T R_i||_F^2` over absolute orientations:
//! a spectral relaxation on the degree-normalized 3n x 3n block matrix
//! gives the initial guess, then block-coordinate sweeps update each
//! `R_i` in closed form until the Riemannian gradient is below tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;
use crate::types::{nearest_rotation, vee, Mat3, Rotation, Vec3, ViewingGraph};

/// Above this block-matrix dimension the leading eigenvectors come from
/// subspace iteration rather than a full eigendecomposition.
const FULL_EIGEN_LIMIT: usize = 1800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotAvgConfig {
    pub refine: bool,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for RotAvgConfig {
    fn default() -> Self {
        RotAvgConfig { refine: true, max_iters: 2000, grad_tol: 1e-9 }
    }
}

impl RotAvgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.grad_tol > 0.0) {
            return Err(Error::InvalidInput("rotation averaging needs max_iters >= 1 and grad_tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotAvgOutput {
    /// Gauge-fixed so that the first rotation is exactly the identity.
    pub rotations: Vec<Rotation>,
    pub initial_cost: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// False when refinement hit `max_iters` before reaching `grad_tol`.
    pub converged: bool,
}

/// `sum ||R_ij - R_j^T R_i||_F^2`.
pub fn rotation_averaging_cost(g: &ViewingGraph, rotations: &[Rotation]) -> f64 {
    g.edges()
        .iter()
        .map(|e| (e.rel_rotation.matrix() - rotations[e.j].matrix().transpose() * rotations[e.i].matrix()).norm_squared())
        .sum()
}

/// For each vertex, the matrix `M_i` such that the cost restricted to `R_i`
/// is `const - 2 tr(M_i^T R_i)`.
fn neighbour_sum(g: &ViewingGraph, adj: &[Vec<usize>], rotations: &[Rotation], i: usize) -> Mat3 {
    let mut m = Mat3::zeros();
    for &k in &adj[i] {
        let e = &g.edges()[k];
        if e.i == i {
            m += rotations[e.j].matrix() * e.rel_rotation.matrix();
        } else {
            m += rotations[e.i].matrix() * e.rel_rotation.matrix().transpose();
        }
    }
    m
}

fn vertex_gradient(m: &Mat3, r: &Rotation) -> Vec3 {
    let a = m.transpose() * r.matrix();
    2.0 * vee(&(a - a.transpose()))
}

/// Riemannian gradient (right-perturbation coordinates) of the cost.
pub fn rotation_averaging_gradient(g: &ViewingGraph, rotations: &[Rotation]) -> Vec<Vec3> {
    let adj = adjacency(g);
    (0..g.vertex_count())
        .map(|i| vertex_gradient(&neighbour_sum(g, &adj, rotations, i), &rotations[i]))
        .collect()
}

fn adjacency(g: &ViewingGraph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.vertex_count()];
    for (k, e) in g.edges().iter().enumerate() {
        adj[e.i].push(k);
        adj[e.j].push(k);
    }
    adj
}

fn gauge_fix(rotations: &mut [Rotation]) {
    let anchor = rotations[0].transpose();
    for r in rotations.iter_mut() {
        *r = anchor * *r;
    }
    rotations[0] = Rotation::identity();
}

/// Orientations obtained by chaining relative rotations along a BFS tree.
pub fn spanning_tree_rotations(g: &ViewingGraph) -> Vec<Rotation> {
    let pairs: Vec<_> = g.pairs().collect();
    let mut out = vec![Rotation::identity(); g.vertex_count()];
    for (parent, child, k) in graph::bfs_tree(g.vertex_count(), &pairs, 0) {
        let e = &g.edges()[k];
        out[child] = if e.i == parent {
            out[parent] * e.rel_rotation.transpose()
        } else {
            out[parent] * e.rel_rotation
        };
    }
    out
}

fn spectral_initialization(g: &ViewingGraph) -> Result<Vec<Rotation>> {
    let n = g.vertex_count();
    let mut degree = vec![0.0f64; n];
    for e in g.edges() {
        degree[e.i] += 1.0;
        degree[e.j] += 1.0;
    }
    let scale: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    // Block (j, i) holds R_ij and block (i, j) its transpose, so that the
    // stacked transposed orientations [R_1^T; ...; R_n^T] scaled by
    // sqrt(degree) span the leading eigenspace on consistent data.
    let fill = |m: &mut DMatrix<f64>| {
        for e in g.edges() {
            let s = scale[e.i] * scale[e.j];
            let r = e.rel_rotation.matrix();
            for a in 0..3 {
                for b in 0..3 {
                    m[(3 * e.j + a, 3 * e.i + b)] += s * r[(a, b)];
                    m[(3 * e.i + b, 3 * e.j + a)] += s * r[(a, b)];
                }
            }
        }
    };
    let dim = 3 * n;
    let mut vecs = DMatrix::<f64>::zeros(dim, 3);
    if dim <= FULL_EIGEN_LIMIT {
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        fill(&mut m);
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &k) in order.iter().take(3).enumerate() {
            vecs.set_column(c, &eig.eigenvectors.column(k));
        }
    } else {
        vecs = subspace_iteration(g, &scale, &spanning_tree_rotations(g));
    }

    let block = |v: &DMatrix<f64>, k: usize| -> Mat3 {
        Mat3::from_fn(|a, b| v[(3 * k + a, b)] * scale[k])
    };
    if block(&vecs, 0).determinant() < 0.0 {
        let flipped = -vecs.column(2);
        vecs.set_column(2, &flipped);
    }
    let mut rotations = (0..n)
        .map(|k| nearest_rotation(&block(&vecs, k).transpose()))
        .collect::<Result<Vec<_>>>()?;
    gauge_fix(&mut rotations);
    Ok(rotations)
}

/// Orthogonal iteration on `(N + I) / 2` (spectrum in `[0, 1]`) for the three
/// leading eigenvectors of the normalized block matrix `N`, seeded with a
/// spanning-tree solution.
fn subspace_iteration(g: &ViewingGraph, scale: &[f64], seed: &[Rotation]) -> DMatrix<f64> {
    let n = g.vertex_count();
    let dim = 3 * n;
    let mut x = DMatrix::<f64>::zeros(dim, 3);
    for (k, r) in seed.iter().enumerate() {
        let rt = r.matrix().transpose();
        for a in 0..3 {
            for b in 0..3 {
                x[(3 * k + a, b)] = rt[(a, b)] / scale[k];
            }
        }
    }
    let apply = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let mut y = x.clone();
        for e in g.edges() {
            let s = scale[e.i] * scale[e.j];
            let r = e.rel_rotation.matrix();
            for c in 0..3 {
                for a in 0..3 {
                    let mut to_j = 0.0;
                    let mut to_i = 0.0;
                    for b in 0..3 {
                        to_j += r[(a, b)] * x[(3 * e.i + b, c)];
                        to_i += r[(b, a)] * x[(3 * e.j + b, c)];
                    }
                    y[(3 * e.j + a, c)] += s * to_j;
                    y[(3 * e.i + a, c)] += s * to_i;
                }
            }
        }
        y * 0.5
    };
    let mut q = x.qr().q();
    for _ in 0..5000 {
        let next = apply(&q).qr().q();
        // Sine of the largest principal angle between successive subspaces.
        let sine = (&next - &q * (q.transpose() * &next)).norm();
        q = next;
        if sine < 1e-13 {
            break;
        }
    }
    q
}

/// Solves rotation averaging; the first vertex is the gauge anchor.
pub fn rotation_averaging(g: &ViewingGraph, cfg: &RotAvgConfig) -> Result<RotAvgOutput> {
    cfg.validate()?;
    graph::require_connected(g.vertex_count(), g.pairs())?;
    let mut rotations = spectral_initialization(g)?;
    let initial_cost = rotation_averaging_cost(g, &rotations);
    let adj = adjacency(g);
    let norm = |grad: &[Vec3]| grad.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let mut grad_norm = norm(&rotation_averaging_gradient(g, &rotations));
    let mut iterations = 0;
    let mut converged = !cfg.refine || grad_norm < cfg.grad_tol;

    if cfg.refine {
        let mut best = (initial_cost, rotations.clone(), grad_norm);
        while !converged && iterations < cfg.max_iters {
            iterations += 1;
            for i in 0..g.vertex_count() {
                let m = neighbour_sum(g, &adj, &rotations, i);
                rotations[i] = nearest_rotation(&m).unwrap_or(rotations[i]);
            }
            let cost = rotation_averaging_cost(g, &rotations);
            grad_norm = norm(&rotation_averaging_gradient(g, &rotations));
            if cost <= best.0 {
                best = (cost, rotations.clone(), grad_norm);
            }
            converged = grad_norm < cfg.grad_tol;
        }
        rotations = best.1;
        grad_norm = best.2;
        gauge_fix(&mut rotations);
    }
    let cost = rotation_averaging_cost(g, &rotations);
    Ok(RotAvgOutput { rotations, initial_cost, cost, grad_norm, iterations, converged })
}

/// Per-vertex geodesic error after removing the global rotation gauge.
///
/// The aligning rotation `G` maximizes agreement of `G R_hat_i` with `R_i`
/// (projection of `sum R_i R_hat_i^T` onto SO(3)).
pub fn angular_rotation_error(est: &[Rotation], gt: &[Rotation]) -> Result<Vec<f64>> {
    if est.len() != gt.len() {
        return Err(Error::InvalidInput(format!("{} estimated vs {} true rotations", est.len(), gt.len())));
    }
    let sum: Mat3 = est.iter().zip(gt).map(|(e, t)| t.matrix() * e.matrix().transpose()).sum();
    let align = nearest_rotation(&sum)?;
    Ok(est.iter().zip(gt).map(|(e, t)| (align * *e).geodesic_distance(t)).collect())
}
