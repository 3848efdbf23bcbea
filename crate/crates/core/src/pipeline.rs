//! End-to-end solvers.
//!
//! Every method starts the same way: rotation averaging, transport of the
//! local directions into the world frame, optional residual-based outlier
//! removal, then constrained least squares for positions. Algorithm 1 keeps
//! the rotations and re-solves positions with scales fixed to the current
//! distances; Algorithm 2 hands the scaled translations to the pose-graph
//! solver so rotations move too.

use serde::{Deserialize, Serialize};

use crate::accel::Anderson;
use crate::cost::{viewing_graph_cost, DirectionMetric};
use crate::error::{Error, Result};
use crate::graph::UnionFind;
use crate::pgo::{solve_pgo, PgoConfig, PoseGraphProblem};
use crate::rotavg::{rotation_averaging, RotAvgConfig};
use crate::transolve::{
    orthogonal_coordinate_descent_from, solve_cls, solve_ls1, solve_ls2, DirectionSet, TranSolveConfig,
};
use crate::types::{scene_diameter, EdgeScales, PoseEstimate, Rotation, Vec3, ViewingGraph, Weights};

/// Which objective an iterative method targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Chordal distance on scaled displacements.
    C,
    /// Chordal distance on unit directions.
    O,
}

impl Variant {
    /// Metric whose viewing-graph cost is tracked across outer iterations.
    pub fn metric(self) -> DirectionMetric {
        match self {
            Variant::C => DirectionMetric::ChordalDisplacement,
            Variant::O => DirectionMetric::ChordalDirection,
        }
    }
}

/// Solver selection used by the command line and the C interface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cls,
    Alg1c,
    Alg1o,
    Alg2c,
    Alg2o,
    Orthocd,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Cls, Method::Alg1c, Method::Alg1o, Method::Alg2c, Method::Alg2o, Method::Orthocd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cls => "cls",
            Method::Alg1c => "alg1c",
            Method::Alg1o => "alg1o",
            Method::Alg2c => "alg2c",
            Method::Alg2o => "alg2o",
            Method::Orthocd => "orthocd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum OutlierFilter {
    None,
    /// Drop edges whose rotation or direction residual exceeds the threshold.
    Residual { threshold_deg: f64, rounds: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub outer_max_iters: usize,
    pub outer_cost_rel_tol: f64,
    /// Alongside the cost test, convergence also requires the scales to
    /// match the distances they produced to this relative tolerance.
    pub outer_consistency_tol: f64,
    /// Anderson mixing depth for the outer distance iteration; 0 runs the
    /// plain iteration.
    pub outer_mixing_depth: usize,
    pub outlier_filter: OutlierFilter,
    /// Distances are floored at this fraction of the scene diameter before
    /// inversion in the O variants.
    pub distance_floor: f64,
    pub rotavg: RotAvgConfig,
    pub transolve: TranSolveConfig,
    pub pgo: PgoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::C,
            outer_max_iters: 100,
            outer_cost_rel_tol: 1e-8,
            outer_consistency_tol: 1e-7,
            outer_mixing_depth: 5,
            outlier_filter: OutlierFilter::None,
            distance_floor: 1e-6,
            rotavg: RotAvgConfig::default(),
            transolve: TranSolveConfig::default(),
            pgo: PgoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_max_iters == 0
            || !(self.outer_cost_rel_tol > 0.0)
            || !(self.outer_consistency_tol > 0.0)
            || !(self.distance_floor > 0.0)
        {
            return Err(Error::InvalidInput("outer loop needs max_iters >= 1 and positive tolerances".into()));
        }
        if let OutlierFilter::Residual { threshold_deg, .. } = self.outlier_filter {
            if !(threshold_deg > 0.0) {
                return Err(Error::InvalidInput("outlier threshold must be positive".into()));
            }
        }
        self.rotavg.validate()?;
        self.transolve.validate()?;
        self.pgo.validate()
    }
}

/// State after one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Viewing-graph cost under the variant's metric.
    pub cost: f64,
    /// Largest position update, in scene units. `None` where not tracked.
    pub max_position_change: Option<f64>,
    /// Largest relative mismatch between the scales used in this iteration
    /// and the distances of the rescaled positions it produced.
    pub lambda_consistency: Option<f64>,
    /// Factor applied to bring the new layout back to the initial diameter.
    /// The outer map settles with this away from 1 on noisy data.
    pub scale_drift: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub entries: Vec<TraceEntry>,
    /// Non-fatal observations, e.g. an outer step that raised the cost.
    pub warnings: Vec<String>,
    pub converged: bool,
    /// Edges (indices into the input graph) dropped by the outlier filter.
    pub removed_edges: Vec<usize>,
    /// Edges over threshold that were kept to preserve connectivity.
    pub flagged_edges: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub estimate: PoseEstimate,
    /// Indexed like `graph.edges()`.
    pub scales: EdgeScales,
    pub trace: PipelineTrace,
    /// The graph actually solved (after outlier removal).
    pub graph: ViewingGraph,
}

/// Result of [`outlier_filter`].
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub graph: ViewingGraph,
    /// Input edge index of every kept edge, in order.
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub flagged: Vec<usize>,
}

/// Rotation and direction residual angles (radians) of every edge.
pub fn edge_residual_angles(g: &ViewingGraph, est: &PoseEstimate) -> Vec<(f64, f64)> {
    g.edges()
        .iter()
        .map(|e| {
            let (ri, rj) = (&est.rotations[e.i], &est.rotations[e.j]);
            let rot = (rj.transpose() * *ri).geodesic_distance(&e.rel_rotation);
            let d = est.positions[e.j] - est.positions[e.i];
            let dir = if d.norm() > 0.0 {
                (ri * e.direction_local.as_vec()).dot(&d.normalize()).clamp(-1.0, 1.0).acos()
            } else {
                std::f64::consts::PI
            };
            (rot, dir)
        })
        .collect()
}

fn filter_once(g: &ViewingGraph, est: &PoseEstimate, threshold: f64) -> (Vec<bool>, Vec<usize>) {
    let residuals = edge_residual_angles(g, est);
    let mut over: Vec<(usize, f64)> = residuals
        .iter()
        .enumerate()
        .map(|(k, (r, d))| (k, r.max(*d)))
        .filter(|(_, r)| *r > threshold)
        .collect();
    over.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep = vec![true; g.edge_count()];
    let mut flagged = Vec::new();
    for (k, _) in over {
        keep[k] = false;
        let mut uf = UnionFind::new(g.vertex_count());
        for (e, _) in g.edges().iter().zip(&keep).filter(|(_, k)| **k) {
            uf.union(e.i, e.j);
        }
        if (1..g.vertex_count()).any(|v| uf.find_mut(v) != uf.find_mut(0)) {
            keep[k] = true;
            flagged.push(k);
        }
    }
    (keep, flagged)
}

fn provisional_estimate(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PoseEstimate> {
    let rotations = rotation_averaging(g, &cfg.rotavg)?.rotations;
    let cls = solve_cls(&DirectionSet::from_graph(g, &rotations), &cfg.transolve)?;
    PoseEstimate::new(rotations, cls.positions)
}

/// Removes edges whose rotation or direction residual under `est` exceeds
/// `threshold_deg`, largest residual first, never disconnecting the graph.
/// Later rounds re-estimate poses on the reduced graph (rotation averaging
/// plus constrained least squares) before filtering again.
pub fn outlier_filter(
    g: &ViewingGraph,
    est: &PoseEstimate,
    threshold_deg: f64,
    rounds: usize,
    cfg: &PipelineConfig,
) -> Result<FilterOutcome> {
    let threshold = threshold_deg.to_radians();
    let mut graph = g.clone();
    let mut kept: Vec<usize> = (0..g.edge_count()).collect();
    let mut removed = Vec::new();
    let mut flagged = Vec::new();
    let mut current = est.clone();
    for round in 0..rounds {
        if round > 0 {
            current = provisional_estimate(&graph, cfg)?;
        }
        let (keep, flag) = filter_once(&graph, &current, threshold);
        flagged = flag.iter().map(|&k| kept[k]).collect();
        if keep.iter().all(|k| *k) {
            break;
        }
        removed.extend(keep.iter().enumerate().filter(|(_, k)| !**k).map(|(e, _)| kept[e]));
        kept = kept.iter().zip(&keep).filter(|(_, k)| **k).map(|(e, _)| *e).collect();
        graph = graph.retain_edges(|e, _| keep[e])?;
    }
    removed.sort_unstable();
    flagged.sort_unstable();
    Ok(FilterOutcome { graph, kept, removed, flagged })
}

/// Shared first stage: rotations, optional filtering, then CLS.
struct Initial {
    graph: ViewingGraph,
    rotations: Vec<Rotation>,
    cls_positions: Vec<Vec3>,
    cls_scales: EdgeScales,
    trace: PipelineTrace,
}

fn initial_stage(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<Initial> {
    cfg.validate()?;
    let mut trace = PipelineTrace::default();
    let mut graph = g.clone();
    let ra = rotation_averaging(&graph, &cfg.rotavg)?;
    if !ra.converged {
        trace.warnings.push(format!("rotation averaging stopped at gradient norm {:.3e}", ra.grad_norm));
    }
    let mut rotations = ra.rotations;
    if let OutlierFilter::Residual { threshold_deg, rounds } = cfg.outlier_filter {
        if rounds > 0 {
            let cls = solve_cls(&DirectionSet::from_graph(&graph, &rotations), &cfg.transolve)?;
            let est = PoseEstimate::new(rotations.clone(), cls.positions)?;
            let outcome = outlier_filter(&graph, &est, threshold_deg, rounds, cfg)?;
            trace.removed_edges = outcome.removed;
            trace.flagged_edges = outcome.flagged;
            if !trace.removed_edges.is_empty() {
                graph = outcome.graph;
                rotations = rotation_averaging(&graph, &cfg.rotavg)?.rotations;
            }
        }
    }
    let cls = solve_cls(&DirectionSet::from_graph(&graph, &rotations), &cfg.transolve)?;
    if !cls.converged {
        trace.warnings.push(format!("constrained least squares stopped after {} iterations", cls.iterations));
    }
    Ok(Initial { graph, rotations, cls_positions: cls.positions, cls_scales: cls.scales, trace })
}

fn edge_lengths(g: &ViewingGraph, p: &[Vec3]) -> Vec<f64> {
    g.edges().iter().map(|e| (p[e.j] - p[e.i]).norm()).collect()
}

fn variant_cost(g: &ViewingGraph, est: &PoseEstimate, variant: Variant, rot_weight: f64) -> Result<f64> {
    viewing_graph_cost(g, est, rot_weight, &Weights::uniform(g.edge_count()), variant.metric())
}

/// Largest relative mismatch between scales and distances: `|λ - d| / d`
/// for C, `|λ d - 1|` for O.
pub fn lambda_consistency(variant: Variant, scales: &[f64], lengths: &[f64]) -> f64 {
    scales
        .iter()
        .zip(lengths)
        .map(|(&l, &d)| match variant {
            Variant::C => (l - d).abs() / d,
            Variant::O => (l * d - 1.0).abs(),
        })
        .fold(0.0, f64::max)
}

/// Scales `p` about its centroid so its diameter equals `target`;
/// returns the factor applied.
fn rescale(p: &mut [Vec3], target: f64) -> f64 {
    let diam = scene_diameter(p);
    if !(diam > 0.0) {
        return 1.0;
    }
    let s = target / diam;
    let c = p.iter().sum::<Vec3>() / p.len() as f64;
    for v in p.iter_mut() {
        *v = c + (*v - c) * s;
    }
    s
}

/// Cost changes below this (times edges * diameter^2) are round-off.
const COST_NOISE: f64 = 1e-20;

fn cost_noise(g: &ViewingGraph, diameter: f64) -> f64 {
    COST_NOISE * g.edge_count() as f64 * diameter.max(1.0).powi(2)
}

/// Records one outer step; returns true once the cost has settled.
fn record(trace: &mut PipelineTrace, entry: TraceEntry, prev_cost: f64, tol: f64, noise: f64) -> bool {
    let change = (prev_cost - entry.cost).abs();
    let settled = change <= tol * prev_cost.abs().max(entry.cost.abs()) || change <= noise;
    if entry.cost > prev_cost * (1.0 + 1e-9) + noise {
        trace.warnings.push(format!(
            "outer iteration {} raised the cost from {prev_cost:.6e} to {:.6e}",
            trace.entries.len() + 1,
            entry.cost
        ));
    }
    trace.entries.push(entry);
    settled
}

/// Marks bridge edges. A bridge's length is not observable from directions:
/// every position solve reproduces whatever scale it is given, so the
/// outer iteration holds these scales fixed and leaves them out of the
/// consistency statistic.
fn bridge_mask(g: &ViewingGraph, trace: &mut PipelineTrace) -> Vec<bool> {
    let mut mask = vec![false; g.edge_count()];
    let found = crate::graph::bridges(g.vertex_count(), &g.pairs().collect::<Vec<_>>());
    for &k in &found {
        mask[k] = true;
    }
    if !found.is_empty() {
        trace.warnings.push(format!(
            "{} bridge edge(s) have unobservable scale; held at their initial lengths",
            found.len()
        ));
        let rest: Vec<(usize, usize)> = g.pairs().zip(&mask).filter(|(_, &b)| !b).map(|(p, _)| p).collect();
        let parts = crate::graph::component_sizes(g.vertex_count(), rest).into_iter().filter(|&s| s > 1).count();
        if parts > 1 {
            trace.warnings.push(format!(
                "bridges split the graph into {parts} multi-vertex parts whose relative scale is unobservable; \
                 the outer iteration may not settle"
            ));
        }
    }
    mask
}

fn free_consistency(variant: Variant, scales: &[f64], lengths: &[f64], bridge: &[bool]) -> f64 {
    let keep = |v: &[f64]| v.iter().zip(bridge).filter(|(_, &b)| !b).map(|(x, _)| *x).collect::<Vec<f64>>();
    lambda_consistency(variant, &keep(scales), &keep(lengths))
}

/// Next distance iterate from the mixer, or the plain image when the mixed
/// point leaves the admissible region. Bridge entries never move.
fn advance(accel: &mut Anderson, x: &[f64], lengths: &[f64], bridge: &[bool], floor: f64) -> Vec<f64> {
    let lengths: Vec<f64> = lengths.iter().zip(x).zip(bridge).map(|((&l, &x), &b)| if b { x } else { l }).collect();
    let lengths = lengths.as_slice();
    let mixed = accel.step(x, lengths);
    if mixed.iter().all(|v| v.is_finite() && *v > floor) {
        mixed
    } else {
        accel.reset();
        lengths.to_vec()
    }
}

/// Algorithm 1: rotations from averaging, then position re-solves with
/// scales tied to the current distances. Rotations never change after the
/// first step.
pub fn algorithm1(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let Initial { graph, rotations, cls_positions, mut trace, .. } = initial_stage(g, cfg)?;
    let d = DirectionSet::from_graph(&graph, &rotations);
    let diameter = scene_diameter(&cls_positions);
    let floor = cfg.distance_floor * diameter;
    let rot_weight = cfg.pgo.rot_weight;
    let mut x = edge_lengths(&graph, &cls_positions);
    let mut est = PoseEstimate::new(rotations, cls_positions)?;
    let mut cost = variant_cost(&graph, &est, cfg.variant, rot_weight)?;
    let mut scales = EdgeScales(Vec::new());
    let mut accel = Anderson::new(cfg.outer_mixing_depth);
    let bridge = bridge_mask(&graph, &mut trace);
    for _ in 0..cfg.outer_max_iters {
        let lambda: Vec<f64> = match cfg.variant {
            Variant::C => x.clone(),
            Variant::O => x.iter().map(|l| 1.0 / l.max(floor)).collect(),
        };
        let mut next = match cfg.variant {
            Variant::C => solve_ls1(&d, &EdgeScales(lambda.clone()))?,
            Variant::O => solve_ls2(&d, &EdgeScales(lambda.clone()))?,
        };
        // Both solves are homogeneous in the scales, so only the shape of
        // the layout is iterated; the scales stay in the reference units.
        let s = rescale(&mut next, diameter);
        let lengths = edge_lengths(&graph, &next);
        let moved = est.positions.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        est.positions = next;
        let new_cost = variant_cost(&graph, &est, cfg.variant, rot_weight)?;
        let consistency = free_consistency(cfg.variant, &lambda, &lengths, &bridge);
        scales = EdgeScales(
            lambda
                .iter()
                .zip(&lengths)
                .zip(&bridge)
                .map(|((&l, &d), &b)| match (b, cfg.variant) {
                    (false, _) => l,
                    (true, Variant::C) => d,
                    (true, Variant::O) => 1.0 / d,
                })
                .collect(),
        );
        let entry =
            TraceEntry {
                cost: new_cost,
                max_position_change: Some(moved),
                lambda_consistency: Some(consistency),
                scale_drift: Some(s),
            };
        let done = record(&mut trace, entry, cost, cfg.outer_cost_rel_tol, cost_noise(&graph, diameter))
            && consistency <= cfg.outer_consistency_tol;
        cost = new_cost;
        if done {
            trace.converged = true;
            break;
        }
        x = advance(&mut accel, &x, &lengths, &bridge, floor);
    }
    Ok(PipelineOutput { estimate: est, scales, trace, graph })
}

/// Algorithm 2: alternates setting scales (and, for variant O, weights)
/// from the current distances with a joint pose-graph solve.
pub fn algorithm2(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let Initial { graph, rotations, cls_positions, mut trace, .. } = initial_stage(g, cfg)?;
    let diameter = scene_diameter(&cls_positions);
    let floor = cfg.distance_floor * diameter;
    let rot_weight = cfg.pgo.rot_weight;
    let mut x = edge_lengths(&graph, &cls_positions);
    let mut est = PoseEstimate::new(rotations, cls_positions)?;
    let mut cost = variant_cost(&graph, &est, cfg.variant, rot_weight)?;
    let mut scales = EdgeScales(Vec::new());
    let mut accel = Anderson::new(cfg.outer_mixing_depth);
    let bridge = bridge_mask(&graph, &mut trace);
    for _ in 0..cfg.outer_max_iters {
        let weights: Vec<f64> = match cfg.variant {
            Variant::C => vec![1.0; x.len()],
            Variant::O => x.iter().map(|l| 1.0 / l.max(floor).powi(2)).collect(),
        };
        let problem = PoseGraphProblem::from_viewing_graph(&graph, &x, &weights)?;
        let out = solve_pgo(&problem, &est, &cfg.pgo)?;
        if !out.converged {
            trace.warnings.push(format!(
                "pose-graph solve {} stopped at gradient norm {:.3e}",
                trace.entries.len() + 1,
                out.grad_norm
            ));
        }
        let mut next = out.estimate;
        let s = rescale(&mut next.positions, diameter);
        // Compare in the pose-graph gauge (vertex 0 at the origin, identity).
        let (a, b) = (crate::pgo::fix_gauge(&est), crate::pgo::fix_gauge(&next));
        let moved = a.positions.iter().zip(&b.positions).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        est = next;
        let lengths = edge_lengths(&graph, &est.positions);
        let new_cost = variant_cost(&graph, &est, cfg.variant, rot_weight)?;
        let consistency = free_consistency(Variant::C, &x, &lengths, &bridge);
        scales = EdgeScales(x.iter().zip(&lengths).zip(&bridge).map(|((&l, &d), &b)| if b { d } else { l }).collect());
        let entry =
            TraceEntry {
                cost: new_cost,
                max_position_change: Some(moved),
                lambda_consistency: Some(consistency),
                scale_drift: Some(s),
            };
        let done = record(&mut trace, entry, cost, cfg.outer_cost_rel_tol, cost_noise(&graph, diameter))
            && consistency <= cfg.outer_consistency_tol;
        cost = new_cost;
        if done {
            trace.converged = true;
            break;
        }
        x = advance(&mut accel, &x, &lengths, &bridge, floor);
    }
    Ok(PipelineOutput { estimate: est, scales, trace, graph })
}

/// Rotation averaging followed by constrained least squares only.
pub fn cls_pipeline(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let Initial { graph, rotations, cls_positions, cls_scales, mut trace } = initial_stage(g, cfg)?;
    let est = PoseEstimate::new(rotations, cls_positions)?;
    let cost = variant_cost(&graph, &est, Variant::C, cfg.pgo.rot_weight)?;
    trace.entries.push(TraceEntry { cost, max_position_change: None, lambda_consistency: None, scale_drift: None });
    trace.converged = trace.warnings.iter().all(|w| !w.starts_with("constrained"));
    Ok(PipelineOutput { estimate: est, scales: cls_scales, trace, graph })
}

/// Rotation averaging followed by coordinate descent on the free-multiplier
/// objective, started from the constrained least-squares layout. Returned
/// scales are the multipliers.
pub fn orthogonal_pipeline(g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let Initial { graph, rotations, cls_positions, mut trace, .. } = initial_stage(g, cfg)?;
    let d = DirectionSet::from_graph(&graph, &rotations);
    let out = orthogonal_coordinate_descent_from(&d, cls_positions, &cfg.transolve)?;
    let mut prev = out.cost_trace[0];
    for &c in &out.cost_trace[1..] {
        let entry = TraceEntry { cost: c, max_position_change: None, lambda_consistency: None, scale_drift: None };
        record(&mut trace, entry, prev, 0.0, 0.0);
        prev = c;
    }
    trace.converged = out.converged;
    let est = PoseEstimate::new(rotations, out.positions)?;
    Ok(PipelineOutput { estimate: est, scales: out.scales, trace, graph })
}

/// Dispatches on `method`; the variant in `cfg` is overridden by the
/// method's own.
pub fn run(method: Method, g: &ViewingGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let with = |variant| PipelineConfig { variant, ..cfg.clone() };
    match method {
        Method::Cls => cls_pipeline(g, cfg),
        Method::Alg1c => algorithm1(g, &with(Variant::C)),
        Method::Alg1o => algorithm1(g, &with(Variant::O)),
        Method::Alg2c => algorithm2(g, &with(Variant::C)),
        Method::Alg2o => algorithm2(g, &with(Variant::O)),
        Method::Orthocd => orthogonal_pipeline(g, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, SynthSpec};
    use crate::eval::position_errors;
    use crate::types::{Edge, UnitVector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_edge(truth: &PoseEstimate, i: usize, j: usize) -> Edge {
        let (ri, rj) = (&truth.rotations[i], &truth.rotations[j]);
        let d = ri.transpose().matrix() * (truth.positions[j] - truth.positions[i]);
        Edge { i, j, rel_rotation: rj.transpose() * *ri, direction_local: UnitVector3::new_normalize(d).unwrap() }
    }

    /// Rotates the direction by 90 degrees and the relative rotation by 90
    /// degrees about the direction's normal.
    fn corrupt(e: &mut Edge) {
        let d = *e.direction_local.as_vec();
        let axis = d.cross(&if d.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
        let turn = Rotation::about_axis(&axis, std::f64::consts::FRAC_PI_2);
        e.direction_local = UnitVector3::new_normalize(turn.matrix() * d).unwrap();
        e.rel_rotation = turn * e.rel_rotation;
    }

    fn noiseless(n: usize, density: f64, seed: u64) -> (ViewingGraph, PoseEstimate) {
        let (g, gt) = generate(&SynthSpec { n, density, seed, ..Default::default() }).unwrap();
        (g, gt.poses)
    }

    #[test]
    fn infinite_threshold_keeps_the_graph() {
        let (g, truth) = noiseless(20, 0.3, 1);
        let out = outlier_filter(&g, &truth, f64::INFINITY, 3, &PipelineConfig::default()).unwrap();
        assert_eq!(out.graph, g);
        assert!(out.removed.is_empty() && out.flagged.is_empty());
        assert_eq!(out.kept, (0..g.edge_count()).collect::<Vec<_>>());
    }

    #[test]
    fn planted_outliers_are_removed_exactly() {
        let (g, truth) = noiseless(30, 0.3, 2);
        let planted = [3usize, 17, 40, 41, 77];
        let edges: Vec<Edge> = g
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let mut e = *e;
                if planted.contains(&k) {
                    corrupt(&mut e);
                }
                e
            })
            .collect();
        let g = ViewingGraph::new(30, edges).unwrap();
        let out = outlier_filter(&g, &truth, 20.0, 1, &PipelineConfig::default()).unwrap();
        assert_eq!(out.removed, planted.to_vec());
        assert!(out.flagged.is_empty());
        assert_eq!(out.graph.edge_count(), g.edge_count() - 5);
    }

    #[test]
    fn connectivity_guard_keeps_a_corrupted_tree_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = PoseEstimate::new(
            (0..4).map(|_| Rotation::random(&mut rng)).collect(),
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 1.0)],
        )
        .unwrap();
        let mut edges: Vec<Edge> = [(0, 1), (1, 2), (2, 3)].iter().map(|&(i, j)| exact_edge(&truth, i, j)).collect();
        corrupt(&mut edges[1]);
        let g = ViewingGraph::new(4, edges).unwrap();
        let out = outlier_filter(&g, &truth, 20.0, 1, &PipelineConfig::default()).unwrap();
        assert_eq!(out.graph, g);
        assert!(out.removed.is_empty());
        assert_eq!(out.flagged, vec![1]);
    }

    #[test]
    fn filter_runs_inside_the_pipeline() {
        let (g, _) = noiseless(30, 0.3, 2);
        let mut edges = g.edges().to_vec();
        corrupt(&mut edges[10]);
        let g = ViewingGraph::new(30, edges).unwrap();
        let cfg = PipelineConfig {
            outlier_filter: OutlierFilter::Residual { threshold_deg: 20.0, rounds: 2 },
            ..Default::default()
        };
        let out = run(Method::Alg1c, &g, &cfg).unwrap();
        assert!(out.trace.removed_edges.contains(&10));
        assert_eq!(out.graph.edge_count(), g.edge_count() - out.trace.removed_edges.len());
        assert_eq!(out.scales.len(), out.graph.edge_count());
    }

    #[test]
    fn algorithm1_keeps_the_averaged_rotations() {
        let spec = SynthSpec { n: 25, density: 0.3, rot_noise_deg: 3.0, dir_noise_deg: 3.0, seed: 4, ..Default::default() };
        let (g, _) = generate(&spec).unwrap();
        let cfg = PipelineConfig::default();
        let ra = rotation_averaging(&g, &cfg.rotavg).unwrap();
        for m in [Method::Alg1c, Method::Alg1o] {
            let out = run(m, &g, &cfg).unwrap();
            assert_eq!(out.estimate.rotations, ra.rotations);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let spec = SynthSpec { n: 20, density: 0.3, rot_noise_deg: 4.0, dir_noise_deg: 4.0, seed: 9, ..Default::default() };
        let (g, _) = generate(&spec).unwrap();
        for m in Method::ALL {
            let a = run(m, &g, &PipelineConfig::default()).unwrap();
            let b = run(m, &g, &PipelineConfig::default()).unwrap();
            assert_eq!(a, b, "{m}");
        }
    }

    #[test]
    fn near_coincident_pair_completes_in_variant_o() {
        let (g, truth) = noiseless(20, 0.4, 6);
        let mut positions = truth.positions.clone();
        let offset = Vec3::new(1.0, 0.5, -0.25).normalize() * 1e-3 * truth.diameter();
        positions[1] = positions[0] + offset;
        let truth = PoseEstimate::new(truth.rotations.clone(), positions).unwrap();
        let edges: Vec<Edge> = g.edges().iter().map(|e| exact_edge(&truth, e.i, e.j)).collect();
        let mut edges = edges;
        if !edges.iter().any(|e| (e.i, e.j) == (0, 1) || (e.i, e.j) == (1, 0)) {
            edges.push(exact_edge(&truth, 0, 1));
        }
        let g = ViewingGraph::new(20, edges).unwrap();
        for m in [Method::Alg1o, Method::Alg2o] {
            let out = run(m, &g, &PipelineConfig::default()).unwrap();
            assert!(out.estimate.positions.iter().all(|p| p.iter().all(|x| x.is_finite())), "{m}");
            assert!(out.scales.as_slice().iter().all(|l| l.is_finite() && *l > 0.0), "{m}");
            let err = position_errors(&out.estimate.positions, &truth.positions).unwrap();
            assert!(err.e_rmse < 1e-6 * truth.diameter(), "{m}: {}", err.e_rmse);
        }
    }

    #[test]
    fn scales_match_distances_at_convergence() {
        let spec = SynthSpec { n: 30, density: 0.3, rot_noise_deg: 5.0, dir_noise_deg: 5.0, seed: 3, ..Default::default() };
        let (g, _) = generate(&spec).unwrap();
        for m in [Method::Alg1c, Method::Alg2c, Method::Alg1o] {
            let out = run(m, &g, &PipelineConfig::default()).unwrap();
            assert!(out.trace.converged, "{m}");
            let lengths = edge_lengths(&out.graph, &out.estimate.positions);
            let variant = if m == Method::Alg1o { Variant::O } else { Variant::C };
            assert!(lambda_consistency(variant, out.scales.as_slice(), &lengths) < 1e-6, "{m}");
        }
    }

    /// Dense clusters at the given offsets, joined by `links`, with small
    /// deterministic direction tilts.
    fn clustered(sizes: &[(usize, Vec3)], links: &[(usize, usize)], seed: u64) -> (ViewingGraph, PoseEstimate) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::new();
        let mut pairs = Vec::new();
        for &(size, base) in sizes {
            let lo = positions.len();
            for _ in 0..size {
                let u: [f64; 3] = rand::Rng::random(&mut rng);
                positions.push(base + Vec3::from(u));
            }
            for i in lo..lo + size {
                for j in i + 1..lo + size {
                    pairs.push((i, j));
                }
            }
        }
        pairs.extend_from_slice(links);
        let n = positions.len();
        let truth = PoseEstimate::new((0..n).map(|_| Rotation::random(&mut rng)).collect(), positions).unwrap();
        let edges = pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let mut e = exact_edge(&truth, i, j);
                let tilt = Rotation::about_axis(&Vec3::new(1.0, k as f64, 0.5).normalize(), 0.03);
                e.direction_local = UnitVector3::new_normalize(tilt.matrix() * e.direction_local.as_vec()).unwrap();
                e
            })
            .collect();
        (ViewingGraph::new(n, edges).unwrap(), truth)
    }

    #[test]
    fn pendant_bridges_are_held_and_converge() {
        let (g, _) = clustered(&[(10, Vec3::zeros()), (1, Vec3::new(2.0, 0.0, 0.0)), (1, Vec3::new(0.0, -2.0, 0.0))], &[(3, 10), (7, 11)], 8);
        for m in [Method::Alg1c, Method::Alg2c] {
            let out = run(m, &g, &PipelineConfig::default()).unwrap();
            assert!(out.trace.converged, "{m}");
            assert!(out.trace.warnings.iter().any(|w| w.starts_with("2 bridge")), "{m}");
            assert!(!out.trace.warnings.iter().any(|w| w.contains("multi-vertex")), "{m}");
            let lengths = edge_lengths(&out.graph, &out.estimate.positions);
            assert!(lambda_consistency(Variant::C, out.scales.as_slice(), &lengths) < 1e-6, "{m}");
        }
    }

    #[test]
    fn split_scale_is_reported() {
        let (g, _) = clustered(&[(6, Vec3::zeros()), (6, Vec3::new(4.0, 0.0, 0.0))], &[(5, 6)], 8);
        let out = run(Method::Alg1c, &g, &PipelineConfig::default()).unwrap();
        assert!(out.trace.warnings.iter().any(|w| w.contains("2 multi-vertex parts")));
        assert_eq!(out.scales.len(), g.edge_count());
    }

    #[test]
    fn consistency_statistic() {
        assert_eq!(lambda_consistency(Variant::C, &[2.0, 1.0], &[2.0, 0.5]), 1.0);
        assert!((lambda_consistency(Variant::O, &[0.5, 1.0], &[2.0, 1.1]) - 0.1).abs() < 1e-15);
    }
}
