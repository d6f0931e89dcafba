#ifndef SCC_H
#define SCC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SccStatus {
  SCC_STATUS_OK = 0,
  SCC_STATUS_NULL_POINTER = 1,
  SCC_STATUS_INVALID_ARGUMENT = 2,
  SCC_STATUS_IO = 3,
  SCC_STATUS_FORMAT = 4,
  SCC_STATUS_DATA = 5,
  SCC_STATUS_NUMERIC = 6,
  SCC_STATUS_CONFIG = 7,
  SCC_STATUS_BUFFER_TOO_SMALL = 8,
  SCC_STATUS_PANIC = 9,
} SccStatus;

/**
 * Prior used by [`scc_fit_run`].
 */
typedef enum SccPrior {
  /**
   * `Λ0 = 1e-6 I`, `ν0 = 0.01`, `s0 = 1`.
   */
  SCC_PRIOR_DEFAULT = 0,
  /**
   * `Λ0 = ξᵀξ / T`, `s0²` from the curves' noise floor.
   */
  SCC_PRIOR_UNIT_INFORMATION = 1,
} SccPrior;

typedef struct SccCurves SccCurves;

/**
 * A finished run with its summaries.
 */
typedef struct SccFit SccFit;

typedef struct SccGraph SccGraph;

/**
 * Settings for one sampler run.
 */
typedef struct SccFitOptions {
  /**
   * Basis size.
   */
  size_t p;
  /**
   * Spline order, capped at `p`.
   */
  size_t order;
  /**
   * Distance decay; 0 gives the plain CRP.
   */
  double h;
  double alpha;
  size_t iterations;
  size_t burn_in;
  size_t thin;
  uint64_t seed;
  enum SccPrior prior;
} SccFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *scc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *scc_version(void);

/**
 * Curves from a row-major `n_regions x n_points` array. With `normalize`
 * nonzero each row is divided by its sum; otherwise rows must already sum
 * to one.
 *
 * # Safety
 * `region_ids` must hold `n_regions` NUL-terminated strings and `values`
 * `n_regions * n_points` doubles.
 */
enum SccStatus scc_curves_new(const char *const *region_ids,
                              size_t n_regions,
                              const double *values,
                              size_t n_points,
                              int32_t normalize,
                              struct SccCurves **out);

/**
 * Curves from a CSV file whose header is `region_id` followed by the grid.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum SccStatus scc_curves_load(const char *path, struct SccCurves **out);

/**
 * # Safety
 * `curves` must be null or a handle not yet freed.
 */
void scc_curves_free(struct SccCurves *curves);

/**
 * # Safety
 * `curves` must be a live handle; the out pointers may be null.
 */
enum SccStatus scc_curves_shape(const struct SccCurves *curves,
                                size_t *n_regions,
                                size_t *n_points);

/**
 * Graph over the regions of `curves` from `n_edges` index pairs stored as
 * `[a0, b0, a1, b1, ...]`.
 *
 * # Safety
 * `curves` must be a live handle and `edges` hold `2 * n_edges` values.
 */
enum SccStatus scc_graph_new(const struct SccCurves *curves,
                             const size_t *edges,
                             size_t n_edges,
                             struct SccGraph **out);

/**
 * Edge-list CSV (`region_a,region_b`), aligned to the regions of `curves`.
 *
 * # Safety
 * `path` must be NUL-terminated and `curves` a live handle.
 */
enum SccStatus scc_graph_load(const char *path,
                              const struct SccCurves *curves,
                              struct SccGraph **out);

/**
 * # Safety
 * `graph` must be null or a handle not yet freed.
 */
void scc_graph_free(struct SccGraph *graph);

/**
 * Defaults: `p = 6`, order 4, `h = 0`, `alpha = 1`, 4000 iterations with
 * 2000 burn-in, no thinning, seed 0, default prior.
 */
struct SccFitOptions scc_fit_options_default(void);

/**
 * Runs the sampler and summarizes the posterior.
 *
 * # Safety
 * `curves` and `graph` must be live handles built over the same regions.
 */
enum SccStatus scc_fit_run(const struct SccCurves *curves,
                           const struct SccGraph *graph,
                           const struct SccFitOptions *options,
                           struct SccFit **out);

/**
 * # Safety
 * `fit` must be null or a handle not yet freed.
 */
void scc_fit_free(struct SccFit *fit);

/**
 * Saved draws, clusters in the point estimate, and LPML.
 *
 * # Safety
 * `fit` must be a live handle; the out pointers may be null.
 */
enum SccStatus scc_fit_stats(const struct SccFit *fit,
                             size_t *n_draws,
                             size_t *n_clusters,
                             double *lpml);

/**
 * Point-estimate labels, one per region. `*len_out` receives the number of
 * regions; pass a null buffer with `capacity` 0 to query it.
 *
 * # Safety
 * `labels` must hold `capacity` values.
 */
enum SccStatus scc_fit_labels(const struct SccFit *fit,
                              size_t *labels,
                              size_t capacity,
                              size_t *len_out);

/**
 * Posterior draws of the CAR coupling, in sampling order.
 *
 * # Safety
 * `phi` must hold `capacity` values.
 */
enum SccStatus scc_fit_phi(const struct SccFit *fit, double *phi, size_t capacity, size_t *len_out);

/**
 * Mean curve of point-estimate cluster `cluster` on the grid.
 *
 * # Safety
 * `curve` must hold `capacity` values.
 */
enum SccStatus scc_fit_mean_curve(const struct SccFit *fit,
                                  size_t cluster,
                                  double *curve,
                                  size_t capacity,
                                  size_t *len_out);

/**
 * Rand index between two labelings of `n` items.
 *
 * # Safety
 * `a` and `b` must each hold `n` values.
 */
enum SccStatus scc_rand_index(const size_t *a, const size_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCC_H */
