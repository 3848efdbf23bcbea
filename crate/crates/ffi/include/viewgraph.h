#ifndef VIEWGRAPH_H
#define VIEWGRAPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum VgStatus {
  VG_STATUS_OK = 0,
  VG_STATUS_NULL_POINTER = 1,
  VG_STATUS_INVALID_ARGUMENT = 2,
  VG_STATUS_PARSE_ERROR = 3,
  VG_STATUS_DISCONNECTED = 4,
  VG_STATUS_IO = 5,
  VG_STATUS_NUMERICAL = 6,
  /**
   * The solver stopped before converging; the solution is still returned.
   */
  VG_STATUS_NOT_CONVERGED = 7,
  VG_STATUS_NO_GROUND_TRUTH = 8,
  VG_STATUS_BUFFER_TOO_SMALL = 9,
  VG_STATUS_PANIC = 10,
} VgStatus;

/**
 * Solver selection.
 */
typedef enum VgMethod {
  VG_METHOD_CLS = 0,
  VG_METHOD_ALG1C = 1,
  VG_METHOD_ALG1O = 2,
  VG_METHOD_ALG2C = 3,
  VG_METHOD_ALG2O = 4,
  VG_METHOD_ORTHOCD = 5,
} VgMethod;

/**
 * A viewing graph, optionally with ground-truth poses.
 */
typedef struct VgGraph VgGraph;

/**
 * A solver result.
 */
typedef struct VgSolution VgSolution;

/**
 * Position and rotation errors against ground truth. `frac_at_bound` is
 * NaN when the scales are not all positive.
 */
typedef struct VgEvaluation {
  double rmse;
  double mean;
  double median;
  double frac_at_bound;
  double rotation_error_max;
  double rotation_error_mean;
} VgEvaluation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vg_last_error_message(void);

/**
 * Loads a graph file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VgStatus vg_graph_load(const char *path, struct VgGraph **out);

/**
 * Builds a graph from `m` edges: `pairs` holds `2m` vertex indices,
 * `rotations` `9m` row-major relative rotations, `directions` `3m` local
 * directions (normalized on input).
 *
 * # Safety
 * Array pointers must reference the stated number of elements.
 */
enum VgStatus vg_graph_from_arrays(size_t n,
                                   size_t m,
                                   const size_t *pairs,
                                   const double *rotations,
                                   const double *directions,
                                   struct VgGraph **out);

/**
 * Generates a synthetic graph with ground truth. `cluster_ratio <= 0`
 * selects the uniform cube layout, otherwise the two-cluster layout.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum VgStatus vg_graph_generate(size_t n,
                                double density,
                                double rot_noise_deg,
                                double dir_noise_deg,
                                double outlier_frac,
                                double cluster_ratio,
                                uint64_t seed,
                                struct VgGraph **out);

/**
 * Writes a graph file.
 *
 * # Safety
 * `graph` must come from this library; `path` must be NUL-terminated.
 */
enum VgStatus vg_graph_save(const struct VgGraph *graph, const char *path);

/**
 * Vertex count, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or come from this library.
 */
size_t vg_graph_vertex_count(const struct VgGraph *graph);

/**
 * Edge count, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or come from this library.
 */
size_t vg_graph_edge_count(const struct VgGraph *graph);

/**
 * Whether the graph carries ground-truth poses.
 *
 * # Safety
 * `graph` must be null or come from this library.
 */
bool vg_graph_has_truth(const struct VgGraph *graph);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `graph` must be null or an unreleased handle from this library.
 */
void vg_graph_free(struct VgGraph *graph);

/**
 * Solves `graph` with `method`, a [`VgMethod`] value. `config_toml` may be
 * null for the library defaults.
 * Returns [`VgStatus::NotConverged`] with a valid solution when the solver
 * stopped early.
 *
 * # Safety
 * `graph` must come from this library, `config_toml` must be null or
 * NUL-terminated, and `out` must be a valid pointer.
 */
enum VgStatus vg_solve(const struct VgGraph *graph,
                       uint32_t method,
                       const char *config_toml,
                       struct VgSolution **out);

/**
 * Vertex count, or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or come from this library.
 */
size_t vg_solution_vertex_count(const struct VgSolution *sol);

/**
 * Number of solved edges (after outlier removal), or 0 for a null handle.
 *
 * # Safety
 * `sol` must be null or come from this library.
 */
size_t vg_solution_edge_count(const struct VgSolution *sol);

/**
 * # Safety
 * `sol` must be null or come from this library.
 */
bool vg_solution_converged(const struct VgSolution *sol);

/**
 * Outer iterations recorded in the trace.
 *
 * # Safety
 * `sol` must be null or come from this library.
 */
size_t vg_solution_iterations(const struct VgSolution *sol);

/**
 * Copies `3n` positions into `out`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum VgStatus vg_solution_positions(const struct VgSolution *sol, double *out, size_t len);

/**
 * Copies `9n` row-major rotations into `out`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum VgStatus vg_solution_rotations(const struct VgSolution *sol, double *out, size_t len);

/**
 * Copies the `m` edge scales into `out`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum VgStatus vg_solution_scales(const struct VgSolution *sol, double *out, size_t len);

/**
 * Copies the `2m` vertex indices of the solved edges into `out`.
 *
 * # Safety
 * `out` must hold `len` entries.
 */
enum VgStatus vg_solution_edges(const struct VgSolution *sol, size_t *out, size_t len);

/**
 * Compares a solution with the ground truth carried by `truth`.
 *
 * # Safety
 * Handles must come from this library; `out` must be a valid pointer.
 */
enum VgStatus vg_solution_evaluate(const struct VgSolution *sol,
                                   const struct VgGraph *truth,
                                   struct VgEvaluation *out);

/**
 * Writes the JSON report of a solution.
 *
 * # Safety
 * `sol` must come from this library; `path` must be NUL-terminated.
 */
enum VgStatus vg_solution_write_report(const struct VgSolution *sol, const char *path);

/**
 * Releases a solution. Null is ignored.
 *
 * # Safety
 * `sol` must be null or an unreleased handle from this library.
 */
void vg_solution_free(struct VgSolution *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VIEWGRAPH_H */
