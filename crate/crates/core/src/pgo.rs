//! Pose-graph optimization with scaled relative translations.
//!
//! Minimizes
//! `sum rot_weight * ||R_j^T R_i - R_ij||_F^2 + w_ij * ||R_i t_ij - (p_j - p_i)||^2`
//! with Levenberg-damped Gauss-Newton. Rotations move by right-multiplied
//! exponentials; vertex 0 is held at `R = I`, `p = 0`.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::cost::CostGradient;
use crate::error::{Error, Result};
use crate::graph;
use crate::types::{hat, PoseEstimate, Rotation, Vec3, ViewingGraph};

type Block = SMatrix<f64, 12, 6>;
type Residual = SVector<f64, 12>;

/// Above this many vertices the damped normal equations are solved with
/// block-Jacobi conjugate gradients instead of a dense factor.
pub const DENSE_PGO_LIMIT: usize = 50;

/// Relative cost decrease below which a step is lost in round-off.
const PRECISION_FLOOR: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraphEdge {
    pub i: usize,
    pub j: usize,
    pub rel_rotation: Rotation,
    /// Scaled translation `t_ij` expressed in frame `i`.
    pub translation_local: Vec3,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseGraphProblem {
    n: usize,
    edges: Vec<PoseGraphEdge>,
}

impl PoseGraphProblem {
    pub fn new(n: usize, edges: Vec<PoseGraphEdge>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("pose graph needs at least 2 vertices".into()));
        }
        for e in &edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(Error::InvalidInput(format!("invalid edge ({}, {})", e.i, e.j)));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) || !e.translation_local.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("edge ({}, {}) has a non-finite term", e.i, e.j)));
            }
        }
        graph::require_connected(n, edges.iter().map(|e| (e.i, e.j)))?;
        Ok(PoseGraphProblem { n, edges })
    }

    /// Uses `t_ij = scales[e] * gamma^l_ij` and the given weights on the
    /// edges of `g`.
    pub fn from_viewing_graph(g: &ViewingGraph, scales: &[f64], weights: &[f64]) -> Result<Self> {
        if scales.len() != g.edge_count() || weights.len() != g.edge_count() {
            return Err(Error::InvalidInput("scale or weight count differs from edge count".into()));
        }
        let edges = g
            .edges()
            .iter()
            .zip(scales.iter().zip(weights))
            .map(|(e, (&l, &w))| PoseGraphEdge {
                i: e.i,
                j: e.j,
                rel_rotation: e.rel_rotation,
                translation_local: e.direction_local.as_vec() * l,
                weight: w,
            })
            .collect();
        PoseGraphProblem::new(g.vertex_count(), edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[PoseGraphEdge] {
        &self.edges
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgoConfig {
    pub max_iters: usize,
    /// Stop once the gradient norm over the free variables is below this.
    pub grad_tol: f64,
    pub damping_init: f64,
    /// Damping is multiplied by this on a rejected step and divided by it on
    /// an accepted one.
    pub damping_factor: f64,
    /// Give up once damping exceeds this.
    pub damping_max: f64,
    /// Weight of the rotation term.
    pub rot_weight: f64,
}

impl Default for PgoConfig {
    fn default() -> Self {
        PgoConfig {
            max_iters: 100,
            grad_tol: 1e-9,
            damping_init: 1e-4,
            damping_factor: 10.0,
            damping_max: 1e10,
            rot_weight: 1.0,
        }
    }
}

impl PgoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.grad_tol > 0.0
            && self.damping_init > 0.0
            && self.damping_factor > 1.0
            && self.damping_max > self.damping_init
            && self.rot_weight >= 0.0
            && self.rot_weight.is_finite();
        if !ok {
            return Err(Error::InvalidInput("invalid pose-graph solver configuration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgoOutput {
    pub estimate: PoseEstimate,
    pub initial_cost: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn mat_to_vec9(m: &crate::types::Mat3) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_iterator(m.iter().copied())
}

/// Residual and Jacobians (w.r.t. `[delta_i, p_i]` and `[delta_j, p_j]`) of one edge.
fn linearize_edge(e: &PoseGraphEdge, est: &PoseEstimate, rot_weight: f64) -> (Residual, Block, Block) {
    let (ri, rj) = (est.rotations[e.i].matrix(), est.rotations[e.j].matrix());
    let rel = rj.transpose() * ri;
    let sr = rot_weight.sqrt();
    let sw = e.weight.sqrt();
    let mut r = Residual::zeros();
    r.fixed_rows_mut::<9>(0).copy_from(&(mat_to_vec9(&(rel - e.rel_rotation.matrix())) * sr));
    let rt = ri * e.translation_local;
    r.fixed_rows_mut::<3>(9).copy_from(&((rt - (est.positions[e.j] - est.positions[e.i])) * sw));

    let mut ji = Block::zeros();
    let mut jj = Block::zeros();
    for k in 0..3 {
        let ek = hat(&Vec3::ith(k, 1.0));
        ji.fixed_view_mut::<9, 1>(0, k).copy_from(&(mat_to_vec9(&(rel * ek)) * sr));
        jj.fixed_view_mut::<9, 1>(0, k).copy_from(&(mat_to_vec9(&(-(ek * rel))) * sr));
    }
    ji.fixed_view_mut::<3, 3>(9, 0).copy_from(&(-(ri * hat(&e.translation_local)) * sw));
    ji.fixed_view_mut::<3, 3>(9, 3).copy_from(&(crate::types::Mat3::identity() * sw));
    jj.fixed_view_mut::<3, 3>(9, 3).copy_from(&(-crate::types::Mat3::identity() * sw));
    (r, ji, jj)
}

fn check_estimate(p: &PoseGraphProblem, est: &PoseEstimate) -> Result<()> {
    if est.len() != p.n {
        return Err(Error::InvalidInput(format!("estimate covers {} vertices, problem has {}", est.len(), p.n)));
    }
    Ok(())
}

/// Pose-graph cost.
pub fn pgo_cost(p: &PoseGraphProblem, est: &PoseEstimate, rot_weight: f64) -> Result<f64> {
    check_estimate(p, est)?;
    Ok(p.edges.iter().map(|e| linearize_edge(e, est, rot_weight).0.norm_squared()).sum())
}

/// Cost and gradient (`2 J^T r`) for every vertex, in the solver's
/// right-perturbation parametrization.
pub fn pgo_cost_gradient(p: &PoseGraphProblem, est: &PoseEstimate, rot_weight: f64) -> Result<(f64, CostGradient)> {
    check_estimate(p, est)?;
    let mut grad = CostGradient { rotations: vec![Vec3::zeros(); p.n], positions: vec![Vec3::zeros(); p.n] };
    let mut cost = 0.0;
    for e in &p.edges {
        let (r, ji, jj) = linearize_edge(e, est, rot_weight);
        cost += r.norm_squared();
        let (gi, gj) = (ji.transpose() * r * 2.0, jj.transpose() * r * 2.0);
        grad.rotations[e.i] += gi.fixed_rows::<3>(0);
        grad.positions[e.i] += gi.fixed_rows::<3>(3);
        grad.rotations[e.j] += gj.fixed_rows::<3>(0);
        grad.positions[e.j] += gj.fixed_rows::<3>(3);
    }
    Ok((cost, grad))
}

/// Expresses `est` in the gauge `R_0 = I`, `p_0 = 0`.
pub fn fix_gauge(est: &PoseEstimate) -> PoseEstimate {
    let g = est.rotations[0].transpose();
    let t = -(&g * &est.positions[0]);
    let mut out = est.transformed(&g, &t, 1.0);
    out.rotations[0] = Rotation::identity();
    out.positions[0] = Vec3::zeros();
    out
}

struct Linearization {
    cost: f64,
    /// `J^T r` over free vertices (index `v - 1`).
    jtr: DVector<f64>,
    blocks: Vec<(usize, usize, Block, Block)>,
}

fn linearize(p: &PoseGraphProblem, est: &PoseEstimate, rot_weight: f64) -> Linearization {
    let dim = 6 * (p.n - 1);
    let mut jtr = DVector::zeros(dim);
    let mut cost = 0.0;
    let mut blocks = Vec::with_capacity(p.edges.len());
    for e in &p.edges {
        let (r, ji, jj) = linearize_edge(e, est, rot_weight);
        cost += r.norm_squared();
        if e.i > 0 {
            let mut seg = jtr.fixed_rows_mut::<6>(6 * (e.i - 1));
            seg += ji.transpose() * r;
        }
        if e.j > 0 {
            let mut seg = jtr.fixed_rows_mut::<6>(6 * (e.j - 1));
            seg += jj.transpose() * r;
        }
        blocks.push((e.i, e.j, ji, jj));
    }
    Linearization { cost, jtr, blocks }
}

/// `(J^T J + mu I) x` for the free variables.
fn damped_matvec(lin: &Linearization, mu: f64, x: &DVector<f64>) -> DVector<f64> {
    let mut y = x * mu;
    let seg = |v: usize| if v == 0 { None } else { Some(6 * (v - 1)) };
    for (i, j, ji, jj) in &lin.blocks {
        let mut jx = Residual::zeros();
        if let Some(o) = seg(*i) {
            jx += ji * x.fixed_rows::<6>(o);
        }
        if let Some(o) = seg(*j) {
            jx += jj * x.fixed_rows::<6>(o);
        }
        if let Some(o) = seg(*i) {
            let mut s = y.fixed_rows_mut::<6>(o);
            s += ji.transpose() * jx;
        }
        if let Some(o) = seg(*j) {
            let mut s = y.fixed_rows_mut::<6>(o);
            s += jj.transpose() * jx;
        }
    }
    y
}

fn solve_step(lin: &Linearization, n: usize, mu: f64, dense: bool) -> Option<DVector<f64>> {
    let dim = 6 * (n - 1);
    let rhs = -&lin.jtr;
    if dense {
        let mut h = DMatrix::<f64>::identity(dim, dim) * mu;
        for (i, j, ji, jj) in &lin.blocks {
            let parts = [(*i, ji), (*j, jj)];
            for &(a, ja) in &parts {
                for &(b, jb) in &parts {
                    if a > 0 && b > 0 {
                        let mut blk = h.fixed_view_mut::<6, 6>(6 * (a - 1), 6 * (b - 1));
                        blk += ja.transpose() * jb;
                    }
                }
            }
        }
        return h.cholesky().map(|c| c.solve(&rhs));
    }
    let mut diag = vec![SMatrix::<f64, 6, 6>::identity() * mu; n - 1];
    for (i, j, ji, jj) in &lin.blocks {
        if *i > 0 {
            diag[i - 1] += ji.transpose() * ji;
        }
        if *j > 0 {
            diag[j - 1] += jj.transpose() * jj;
        }
    }
    let inv: Vec<_> = diag.iter().map(|d| d.try_inverse()).collect::<Option<Vec<_>>>()?;
    let precond = |r: &DVector<f64>| {
        let mut z = DVector::zeros(dim);
        for (v, m) in inv.iter().enumerate() {
            z.fixed_rows_mut::<6>(6 * v).copy_from(&(m * r.fixed_rows::<6>(6 * v)));
        }
        z
    };
    let mut x = DVector::zeros(dim);
    let mut r = rhs.clone();
    let mut z = precond(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let bnorm = rhs.norm().max(f64::MIN_POSITIVE);
    for _ in 0..(5 * dim).max(200) {
        if r.norm() <= 1e-12 * bnorm {
            break;
        }
        let ad = damped_matvec(lin, mu, &d);
        let alpha = rz / d.dot(&ad);
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &ad, 1.0);
        z = precond(&r);
        let rz_new = r.dot(&z);
        d = &z + &d * (rz_new / rz);
        rz = rz_new;
    }
    Some(x)
}

fn apply_step(est: &PoseEstimate, step: &DVector<f64>) -> PoseEstimate {
    let mut out = est.clone();
    for v in 1..est.len() {
        let s = step.fixed_rows::<6>(6 * (v - 1));
        out.rotations[v] = est.rotations[v].retract(&Vec3::new(s[0], s[1], s[2]));
        out.positions[v] += Vec3::new(s[3], s[4], s[5]);
    }
    out
}

/// Damped Gauss-Newton from `init` (re-expressed in the vertex-0 gauge).
/// Accepted steps never increase the cost. Converged means the gradient
/// test was met or the model decrease fell below the cost's round-off;
/// otherwise the best iterate is returned with `converged = false`.
pub fn solve_pgo(p: &PoseGraphProblem, init: &PoseEstimate, cfg: &PgoConfig) -> Result<PgoOutput> {
    cfg.validate()?;
    check_estimate(p, init)?;
    let mut est = fix_gauge(init);
    let mut lin = linearize(p, &est, cfg.rot_weight);
    let initial_cost = lin.cost;
    let mut mu = cfg.damping_init;
    let mut iterations = 0;
    let mut converged = false;
    let mut rejected = false;
    loop {
        let grad_norm = 2.0 * lin.jtr.norm();
        if grad_norm < cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters || mu > cfg.damping_max {
            break;
        }
        iterations += 1;
        let step = match solve_step(&lin, p.n, mu, p.n <= DENSE_PGO_LIMIT) {
            Some(s) => s,
            None => {
                mu *= cfg.damping_factor;
                continue;
            }
        };
        let cand = apply_step(&est, &step);
        let cand_lin = linearize(p, &cand, cfg.rot_weight);
        if cand_lin.cost < lin.cost {
            est = cand;
            lin = cand_lin;
            rejected = false;
            mu = (mu / cfg.damping_factor).max(1e-15);
        } else {
            // A step at working damping whose model decrease is below the
            // round-off of the cost cannot be improved on by more damping.
            if !rejected {
                let predicted = -(2.0 * step.dot(&lin.jtr) + step.dot(&damped_matvec(&lin, 0.0, &step)));
                if predicted <= PRECISION_FLOOR * lin.cost {
                    converged = true;
                    break;
                }
            }
            rejected = true;
            mu *= cfg.damping_factor;
        }
    }
    Ok(PgoOutput {
        estimate: est,
        initial_cost,
        cost: lin.cost,
        grad_norm: 2.0 * lin.jtr.norm(),
        iterations,
        converged,
    })
}
