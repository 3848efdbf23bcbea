//! C interface to the viewgraph solvers.
//!
//! Graphs and solutions are opaque handles owned by the caller and released
//! with [`vg_graph_free`] and [`vg_solution_free`]. Every fallible call
//! returns a [`VgStatus`]; on failure [`vg_last_error_message`] describes the
//! most recent error on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use viewgraph::datagen::{generate, Layout, SynthSpec};
use viewgraph::io::{config_from_toml, evaluate, GraphFile, ReportFile};
use viewgraph::pipeline::{run, Method, PipelineConfig};
use viewgraph::types::{Edge, Rotation, UnitVector3, Vec3, ViewingGraph};
use viewgraph::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    Disconnected = 4,
    Io = 5,
    Numerical = 6,
    /// The solver stopped before converging; the solution is still returned.
    NotConverged = 7,
    NoGroundTruth = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Solver selection.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VgMethod {
    Cls = 0,
    Alg1c = 1,
    Alg1o = 2,
    Alg2c = 3,
    Alg2o = 4,
    Orthocd = 5,
}

/// Library methods indexed by their [`VgMethod`] value.
const METHODS: [Method; 6] = [Method::Cls, Method::Alg1c, Method::Alg1o, Method::Alg2c, Method::Alg2o, Method::Orthocd];

/// Position and rotation errors against ground truth. `frac_at_bound` is
/// NaN when the scales are not all positive.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VgEvaluation {
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub frac_at_bound: f64,
    pub rotation_error_max: f64,
    pub rotation_error_mean: f64,
}

/// A viewing graph, optionally with ground-truth poses.
pub struct VgGraph(GraphFile);

/// A solver result.
pub struct VgSolution(ReportFile);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> VgStatus {
    match e {
        Error::Parse { .. } => VgStatus::ParseError,
        Error::Disconnected { .. } => VgStatus::Disconnected,
        Error::Io(_) => VgStatus::Io,
        Error::DegenerateEdge { .. }
        | Error::SingularInput { .. }
        | Error::DegenerateConfiguration { .. }
        | Error::CollapseDetected { .. } => VgStatus::Numerical,
        _ => VgStatus::InvalidArgument,
    }
}

struct Fail(VgStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn fail(status: VgStatus, msg: impl Into<String>) -> Fail {
    set_error(msg);
    Fail(status)
}

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<VgStatus, Fail>) -> VgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail(status))) => status,
        Err(_) => {
            set_error("internal panic");
            VgStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(fail(VgStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(VgStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VgStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| fail(VgStatus::NullPointer, "output pointer is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(VgStatus::NullPointer, format!("{what} handle is null")))
}

/// Copies `values` into a caller buffer of `len` entries.
unsafe fn fill<T: Copy>(values: &[T], out: *mut T, len: usize) -> Result<VgStatus, Fail> {
    if len < values.len() {
        return Err(fail(VgStatus::BufferTooSmall, format!("buffer holds {len}, need {}", values.len())));
    }
    if values.is_empty() {
        return Ok(VgStatus::Ok);
    }
    if out.is_null() {
        return Err(fail(VgStatus::NullPointer, "output buffer is null"));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(VgStatus::Ok)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Loads a graph file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_load(path: *const c_char, out: *mut *mut VgGraph) -> VgStatus {
    guard(|| {
        let out = out_arg(out)?;
        let file = GraphFile::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(VgGraph(file)));
        Ok(VgStatus::Ok)
    })
}

/// Builds a graph from `m` edges: `pairs` holds `2m` vertex indices,
/// `rotations` `9m` row-major relative rotations, `directions` `3m` local
/// directions (normalized on input).
///
/// # Safety
/// Array pointers must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_from_arrays(
    n: usize,
    m: usize,
    pairs: *const usize,
    rotations: *const f64,
    directions: *const f64,
    out: *mut *mut VgGraph,
) -> VgStatus {
    guard(|| {
        let out = out_arg(out)?;
        let too_many = || fail(VgStatus::InvalidArgument, "edge count overflows");
        let pairs = slice_arg(pairs, m.checked_mul(2).ok_or_else(too_many)?, "pairs")?;
        let rotations = slice_arg(rotations, m.checked_mul(9).ok_or_else(too_many)?, "rotations")?;
        let directions = slice_arg(directions, m.checked_mul(3).ok_or_else(too_many)?, "directions")?;
        let mut edges = Vec::with_capacity(m);
        for k in 0..m {
            let d = &directions[3 * k..3 * k + 3];
            edges.push(Edge {
                i: pairs[2 * k],
                j: pairs[2 * k + 1],
                rel_rotation: Rotation::from_row_slice(&rotations[9 * k..9 * k + 9])?,
                direction_local: UnitVector3::new_normalize(Vec3::new(d[0], d[1], d[2]))?,
            });
        }
        let graph = ViewingGraph::new(n, edges)?;
        *out = Box::into_raw(Box::new(VgGraph(GraphFile { graph, truth: None })));
        Ok(VgStatus::Ok)
    })
}

/// Generates a synthetic graph with ground truth. `cluster_ratio <= 0`
/// selects the uniform cube layout, otherwise the two-cluster layout.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_generate(
    n: usize,
    density: f64,
    rot_noise_deg: f64,
    dir_noise_deg: f64,
    outlier_frac: f64,
    cluster_ratio: f64,
    seed: u64,
    out: *mut *mut VgGraph,
) -> VgStatus {
    guard(|| {
        let out = out_arg(out)?;
        let layout = if cluster_ratio > 0.0 { Layout::TwoCluster { ratio: cluster_ratio } } else { Layout::UniformCube };
        let spec = SynthSpec { n, density, rot_noise_deg, dir_noise_deg, outlier_frac, layout, seed };
        let (graph, gt) = generate(&spec)?;
        *out = Box::into_raw(Box::new(VgGraph(GraphFile { graph, truth: Some(gt.poses) })));
        Ok(VgStatus::Ok)
    })
}

/// Writes a graph file.
///
/// # Safety
/// `graph` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_save(graph: *const VgGraph, path: *const c_char) -> VgStatus {
    guard(|| {
        handle(graph, "graph")?.0.save(path_arg(path)?)?;
        Ok(VgStatus::Ok)
    })
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_vertex_count(graph: *const VgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.graph.vertex_count())
}

/// Edge count, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_edge_count(graph: *const VgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.graph.edge_count())
}

/// Whether the graph carries ground-truth poses.
///
/// # Safety
/// `graph` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_has_truth(graph: *const VgGraph) -> bool {
    graph.as_ref().is_some_and(|g| g.0.truth.is_some())
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `graph` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_graph_free(graph: *mut VgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Solves `graph` with `method`, a [`VgMethod`] value. `config_toml` may be
/// null for the library defaults.
/// Returns [`VgStatus::NotConverged`] with a valid solution when the solver
/// stopped early.
///
/// # Safety
/// `graph` must come from this library, `config_toml` must be null or
/// NUL-terminated, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_solve(
    graph: *const VgGraph,
    method: u32,
    config_toml: *const c_char,
    out: *mut *mut VgSolution,
) -> VgStatus {
    guard(|| {
        let out = out_arg(out)?;
        let graph = handle(graph, "graph")?;
        let cfg = if config_toml.is_null() {
            PipelineConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|_| fail(VgStatus::InvalidArgument, "configuration is not valid UTF-8"))?;
            config_from_toml(text)?
        };
        let method = *METHODS
            .get(method as usize)
            .ok_or_else(|| fail(VgStatus::InvalidArgument, format!("unknown method {method}")))?;
        let start = Instant::now();
        let output = run(method, &graph.0.graph, &cfg)?;
        let report = ReportFile::new(method, &cfg, output, start.elapsed().as_secs_f64());
        let converged = report.trace.converged;
        *out = Box::into_raw(Box::new(VgSolution(report)));
        if converged {
            Ok(VgStatus::Ok)
        } else {
            set_error(format!("{method} did not converge"));
            Ok(VgStatus::NotConverged)
        }
    })
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_vertex_count(sol: *const VgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.estimate.len())
}

/// Number of solved edges (after outlier removal), or 0 for a null handle.
///
/// # Safety
/// `sol` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_edge_count(sol: *const VgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.edges.len())
}

/// # Safety
/// `sol` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_converged(sol: *const VgSolution) -> bool {
    sol.as_ref().is_some_and(|s| s.0.trace.converged)
}

/// Outer iterations recorded in the trace.
///
/// # Safety
/// `sol` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_iterations(sol: *const VgSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.iterations)
}

/// Copies `3n` positions into `out`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_positions(sol: *const VgSolution, out: *mut f64, len: usize) -> VgStatus {
    guard(|| {
        let flat: Vec<f64> = handle(sol, "solution")?.0.estimate.positions.iter().flat_map(|p| p.iter().copied()).collect();
        fill(&flat, out, len)
    })
}

/// Copies `9n` row-major rotations into `out`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_rotations(sol: *const VgSolution, out: *mut f64, len: usize) -> VgStatus {
    guard(|| {
        let flat: Vec<f64> = handle(sol, "solution")?.0.estimate.rotations.iter().flat_map(|r| r.row_major()).collect();
        fill(&flat, out, len)
    })
}

/// Copies the `m` edge scales into `out`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_scales(sol: *const VgSolution, out: *mut f64, len: usize) -> VgStatus {
    guard(|| fill(handle(sol, "solution")?.0.scales.as_slice(), out, len))
}

/// Copies the `2m` vertex indices of the solved edges into `out`.
///
/// # Safety
/// `out` must hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_edges(sol: *const VgSolution, out: *mut usize, len: usize) -> VgStatus {
    guard(|| {
        let flat: Vec<usize> = handle(sol, "solution")?.0.edges.iter().flat_map(|&(i, j)| [i, j]).collect();
        fill(&flat, out, len)
    })
}

/// Compares a solution with the ground truth carried by `truth`.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_evaluate(
    sol: *const VgSolution,
    truth: *const VgGraph,
    out: *mut VgEvaluation,
) -> VgStatus {
    guard(|| {
        let out = out_arg(out)?;
        let report = &handle(sol, "solution")?.0;
        let Some(gt) = &handle(truth, "graph")?.0.truth else {
            return Err(fail(VgStatus::NoGroundTruth, "graph has no ground truth"));
        };
        let ev = evaluate(&report.estimate, gt, Some((&report.scales, &report.edges)))?;
        *out = VgEvaluation {
            rmse: ev.positions.e_rmse,
            mean: ev.positions.e_mean,
            median: ev.positions.e_median,
            frac_at_bound: ev.positions.frac_at_bound.unwrap_or(f64::NAN),
            rotation_error_max: ev.rotation_error_max,
            rotation_error_mean: ev.rotation_error_mean,
        };
        Ok(VgStatus::Ok)
    })
}

/// Writes the JSON report of a solution.
///
/// # Safety
/// `sol` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_write_report(sol: *const VgSolution, path: *const c_char) -> VgStatus {
    guard(|| {
        handle(sol, "solution")?.0.save(path_arg(path)?)?;
        Ok(VgStatus::Ok)
    })
}

/// Releases a solution. Null is ignored.
///
/// # Safety
/// `sol` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn vg_solution_free(sol: *mut VgSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
