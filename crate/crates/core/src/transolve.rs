//! Position-only solvers over world-frame direction observations.
//!
//! * [`solve_cls`]: `min sum ||lambda_ij gamma_ij - (p_j - p_i)||^2` subject to
//!   `lambda_ij >= 1`, by two-block coordinate descent.
//! * [`solve_ls1`] / [`solve_ls2`]: the fixed-scale linear least-squares
//!   problems in displacement form and multiplier form.
//! * [`orthogonal_coordinate_descent`]: `min sum ||gamma_ij - lambda_ij (p_j - p_i)||^2`
//!   with free multipliers, whose minimizer is the orthogonal-distance
//!   solution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;
use crate::linalg::{displacement_rhs, LaplacianSolver};
use crate::metrics::transport_direction;
use crate::types::{scene_diameter, EdgeScales, Rotation, UnitVector3, Vec3, ViewingGraph};

/// World-frame direction observations `gamma_ij` on a connected edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    n: usize,
    edges: Vec<(usize, usize, UnitVector3)>,
}

impl DirectionSet {
    pub fn new(n: usize, edges: Vec<(usize, usize, UnitVector3)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("direction set needs at least 2 vertices".into()));
        }
        if let Some(&(i, j, _)) = edges.iter().find(|e| e.0 >= n || e.1 >= n || e.0 == e.1) {
            return Err(Error::InvalidInput(format!("invalid edge ({i}, {j}) for {n} vertices")));
        }
        graph::require_connected(n, edges.iter().map(|e| (e.0, e.1)))?;
        Ok(DirectionSet { n, edges })
    }

    /// Moves every local direction into the world frame with `rotations`.
    pub fn from_graph(g: &ViewingGraph, rotations: &[Rotation]) -> Self {
        DirectionSet {
            n: g.vertex_count(),
            edges: g
                .edges()
                .iter()
                .map(|e| (e.i, e.j, transport_direction(&rotations[e.i], &e.direction_local)))
                .collect(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, UnitVector3)] {
        &self.edges
    }

    fn unit_edges(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|&(i, j, _)| (i, j, 1.0)).collect()
    }

    fn check_scales(&self, scales: &EdgeScales) -> Result<()> {
        if scales.len() != self.edges.len() {
            return Err(Error::InvalidInput(format!(
                "{} scales for {} edges",
                scales.len(),
                self.edges.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranSolveConfig {
    pub max_iters: usize,
    /// Stop when the relative cost change falls below this.
    pub cost_rel_tol: f64,
    /// Stop when no position moves more than `pos_tol * diameter`.
    pub pos_tol: f64,
    /// Root of the spanning tree used for initialization (`seed mod n`).
    pub seed: u64,
}

impl Default for TranSolveConfig {
    fn default() -> Self {
        TranSolveConfig { max_iters: 500, cost_rel_tol: 1e-10, pos_tol: 1e-8, seed: 0 }
    }
}

impl TranSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.cost_rel_tol > 0.0) || !(self.pos_tol > 0.0) {
            return Err(Error::InvalidInput("position solver needs max_iters >= 1 and positive tolerances".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranSolveOutput {
    pub positions: Vec<Vec3>,
    pub scales: EdgeScales,
    pub cost: f64,
    /// Objective after every completed iteration (first entry: initial state).
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Unit steps along a breadth-first spanning tree, oriented by the observed
/// directions.
pub fn spanning_tree_positions(d: &DirectionSet, root: usize) -> Vec<Vec3> {
    let pairs: Vec<_> = d.edges.iter().map(|e| (e.0, e.1)).collect();
    let mut p = vec![Vec3::zeros(); d.n];
    for (parent, child, k) in graph::bfs_tree(d.n, &pairs, root % d.n) {
        let (i, _, gamma) = d.edges[k];
        let step = if i == parent { *gamma.as_vec() } else { -gamma.as_vec() };
        p[child] = p[parent] + step;
    }
    centre(&mut p);
    p
}

fn centre(p: &mut [Vec3]) {
    let c = p.iter().sum::<Vec3>() / p.len() as f64;
    for v in p.iter_mut() {
        *v -= c;
    }
}

/// `sum ||lambda_ij gamma_ij - (p_j - p_i)||^2`.
pub fn displacement_cost(d: &DirectionSet, positions: &[Vec3], scales: &EdgeScales) -> f64 {
    d.edges
        .iter()
        .zip(scales.as_slice())
        .map(|(&(i, j, g), &l)| (g.as_vec() * l - (positions[j] - positions[i])).norm_squared())
        .sum()
}

/// `sum ||gamma_ij - lambda_ij (p_j - p_i)||^2`.
pub fn multiplier_cost(d: &DirectionSet, positions: &[Vec3], scales: &EdgeScales) -> f64 {
    d.edges
        .iter()
        .zip(scales.as_slice())
        .map(|(&(i, j, g), &l)| (g.as_vec() - (positions[j] - positions[i]) * l).norm_squared())
        .sum()
}

fn max_displacement(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    let den = prev.abs().max(next.abs());
    if den <= f64::MIN_POSITIVE {
        0.0
    } else {
        (prev - next).abs() / den
    }
}

fn cls_scale_step(d: &DirectionSet, p: &[Vec3]) -> EdgeScales {
    EdgeScales(
        d.edges
            .iter()
            .map(|&(i, j, g)| g.as_vec().dot(&(p[j] - p[i])).max(1.0))
            .collect(),
    )
}

/// Block-descent iterations between attempts at the active-set finish.
const POLISH_PERIOD: usize = 25;
const POLISH_MAX_ROUNDS: usize = 30;

/// Constrained least squares with `lambda_ij >= 1`, solved by alternating the
/// closed-form scale update `lambda = max(1, gamma^T (p_j - p_i))` with the
/// Laplacian solve for positions. Output positions have zero centroid.
///
/// Block descent converges only linearly, and slowly when the optimum is
/// nearly noise free. Every few sweeps the current set of edges at the bound
/// is used to solve the stationarity conditions directly; the result is
/// kept when that set is self-consistent and the cost does not rise.
pub fn solve_cls(d: &DirectionSet, cfg: &TranSolveConfig) -> Result<TranSolveOutput> {
    cfg.validate()?;
    let edges = d.unit_edges();
    let solver = LaplacianSolver::new(d.n, &edges)?;
    let mut p = spanning_tree_positions(d, cfg.seed as usize);
    let mut scales = cls_scale_step(d, &p);
    let mut cost = displacement_cost(d, &p, &scales);
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let targets: Vec<Vec3> =
            d.edges.iter().zip(scales.as_slice()).map(|(&(_, _, g), &l)| g.as_vec() * l).collect();
        let next = solver.solve(&displacement_rhs(d.n, &edges, &targets))?;
        let moved = max_displacement(&p, &next);
        p = next;
        scales = cls_scale_step(d, &p);
        let next_cost = displacement_cost(d, &p, &scales);
        let rel = relative_change(cost, next_cost);
        cost = next_cost;
        trace.push(cost);
        let stalled = rel < cfg.cost_rel_tol || moved < cfg.pos_tol * scene_diameter(&p);
        if stalled || iterations % POLISH_PERIOD == 0 {
            if let Some((pp, ps, pc)) = cls_active_set_finish(d, &p) {
                if pc <= cost * (1.0 + 1e-12) {
                    p = pp;
                    scales = ps;
                    cost = pc;
                    trace.push(cost);
                    converged = true;
                    break;
                }
            }
        }
        if stalled {
            converged = true;
            break;
        }
    }
    Ok(TranSolveOutput { positions: p, scales, cost, cost_trace: trace, iterations, converged })
}

/// Solves the CLS stationarity system for a guessed set of edges at the
/// bound, updating the guess until it reproduces itself.
///
/// For a fixed active set `A` the free scales equal `gamma^T d`, so the
/// positions minimize `sum_A ||gamma - d||^2 + sum_free ||(I - gamma gamma^T) d||^2`.
/// A small proximal pull towards the previous layout fixes whatever that
/// system leaves undetermined.
fn cls_active_set_finish(d: &DirectionSet, start: &[Vec3]) -> Option<(Vec<Vec3>, EdgeScales, f64)> {
    const SLACK: f64 = 1e-10;
    let proj = |p: &[Vec3]| -> Vec<f64> { d.edges.iter().map(|&(i, j, g)| g.as_vec().dot(&(p[j] - p[i]))).collect() };
    let mut p = start.to_vec();
    let mut active: Vec<bool> = proj(&p).iter().map(|s| *s <= 1.0 + SLACK).collect();
    for _ in 0..POLISH_MAX_ROUNDS {
        let blocks: Vec<_> = d
            .edges
            .iter()
            .zip(&active)
            .map(|(&(i, j, g), &a)| {
                let w = if a { crate::types::Mat3::identity() } else { crate::types::Mat3::identity() - g.as_vec() * g.as_vec().transpose() };
                (i, j, w)
            })
            .collect();
        let targets: Vec<Vec3> =
            d.edges.iter().zip(&active).map(|(&(_, _, g), &a)| if a { *g.as_vec() } else { Vec3::zeros() }).collect();
        p = crate::linalg::matrix_weighted_lsq(&blocks, &targets, 1e-12, &p).ok()?;
        centre(&mut p);
        let next: Vec<bool> = proj(&p).iter().map(|s| *s <= 1.0 + SLACK).collect();
        if next == active {
            let scales = cls_scale_step(d, &p);
            let cost = displacement_cost(d, &p, &scales);
            return Some((p, scales, cost));
        }
        active = next;
    }
    None
}

/// Exact minimizer of `sum ||lambda_ij gamma_ij - (p_j - p_i)||^2` for fixed
/// positive scales, with zero centroid.
pub fn solve_ls1(d: &DirectionSet, scales: &EdgeScales) -> Result<Vec<Vec3>> {
    d.check_scales(scales)?;
    if let Some(bad) = scales.as_slice().iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!("scale factor {bad} is not positive")));
    }
    let edges = d.unit_edges();
    let targets: Vec<Vec3> =
        d.edges.iter().zip(scales.as_slice()).map(|(&(_, _, g), &l)| g.as_vec() * l).collect();
    LaplacianSolver::new(d.n, &edges)?.solve(&displacement_rhs(d.n, &edges, &targets))
}

/// Exact minimizer of `sum ||gamma_ij - lambda_ij (p_j - p_i)||^2` for fixed
/// positive multipliers, with zero centroid.
pub fn solve_ls2(d: &DirectionSet, scales: &EdgeScales) -> Result<Vec<Vec3>> {
    d.check_scales(scales)?;
    if let Some(bad) = scales.as_slice().iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(format!("multiplier {bad} is not positive")));
    }
    multiplier_positions(d, scales)
}

/// Weighted Laplacian solve with weights `lambda^2`; `rhs` uses
/// `lambda * gamma` so zero multipliers only drop their edge.
fn multiplier_positions(d: &DirectionSet, scales: &EdgeScales) -> Result<Vec<Vec3>> {
    let edges: Vec<(usize, usize, f64)> =
        d.edges.iter().zip(scales.as_slice()).map(|(&(i, j, _), &l)| (i, j, l * l)).collect();
    let mut rhs = vec![Vec3::zeros(); d.n];
    for (&(i, j, g), &l) in d.edges.iter().zip(scales.as_slice()) {
        rhs[j] += g.as_vec() * l;
        rhs[i] -= g.as_vec() * l;
    }
    LaplacianSolver::new(d.n, &edges)?.solve(&rhs)
}

fn orthogonal_scale_step(d: &DirectionSet, p: &[Vec3]) -> Result<EdgeScales> {
    let floor = crate::cost::DEGENERACY_FLOOR * scene_diameter(p);
    d.edges
        .iter()
        .map(|&(i, j, g)| {
            let diff = p[j] - p[i];
            let len2 = diff.norm_squared();
            if !(len2.sqrt() > floor) {
                return Err(Error::DegenerateEdge { i, j, length: len2.sqrt() });
            }
            Ok(g.as_vec().dot(&diff) / len2)
        })
        .collect::<Result<Vec<_>>>()
        .map(EdgeScales)
}

/// Two-block coordinate descent for the free-multiplier problem, started
/// from the spanning-tree layout.
pub fn orthogonal_coordinate_descent(d: &DirectionSet, cfg: &TranSolveConfig) -> Result<TranSolveOutput> {
    let init = spanning_tree_positions(d, cfg.seed as usize);
    orthogonal_coordinate_descent_from(d, init, cfg)
}

/// As [`orthogonal_coordinate_descent`], from caller-supplied positions.
///
/// The multipliers are unconstrained in sign: an edge whose estimated
/// displacement opposes its observation gets a negative multiplier. After
/// each position step the layout is rescaled to unit diameter (multipliers
/// absorb the inverse factor, leaving the cost unchanged).
pub fn orthogonal_coordinate_descent_from(
    d: &DirectionSet,
    init: Vec<Vec3>,
    cfg: &TranSolveConfig,
) -> Result<TranSolveOutput> {
    cfg.validate()?;
    if init.len() != d.n {
        return Err(Error::InvalidInput(format!("{} initial positions for {} vertices", init.len(), d.n)));
    }
    let mut p = init;
    centre(&mut p);
    let diam = scene_diameter(&p);
    if !(diam > 0.0) {
        return Err(Error::CollapseDetected { ratio: 0.0 });
    }
    for v in &mut p {
        *v /= diam;
    }
    let mut scales = orthogonal_scale_step(d, &p)?;
    let mut cost = multiplier_cost(d, &p, &scales);
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;
    let tiny = 1e-28 * d.edges.len() as f64;
    if cost <= tiny {
        converged = true;
    }
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let mut next = multiplier_positions(d, &scales)?;
        let s = scene_diameter(&next);
        if !(s >= 1e-6) {
            return Err(Error::CollapseDetected { ratio: s });
        }
        for v in &mut next {
            *v /= s;
        }
        let moved = max_displacement(&p, &next);
        p = next;
        scales = orthogonal_scale_step(d, &p)?;
        let next_cost = multiplier_cost(d, &p, &scales);
        let rel = relative_change(cost, next_cost);
        cost = next_cost;
        trace.push(cost);
        if cost <= tiny || rel < cfg.cost_rel_tol || moved < cfg.pos_tol {
            converged = true;
        }
    }
    Ok(TranSolveOutput { positions: p, scales, cost, cost_trace: trace, iterations, converged })
}
