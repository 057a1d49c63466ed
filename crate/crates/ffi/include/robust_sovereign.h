#ifndef ROBUST_SOVEREIGN_H
#define ROBUST_SOVEREIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum RsStatus {
  RS_STATUS_OK = 0,
  RS_STATUS_NULL_POINTER = 1,
  RS_STATUS_INVALID_ARGUMENT = 2,
  RS_STATUS_CONFIG = 3,
  RS_STATUS_NOT_CONVERGED = 4,
  RS_STATUS_BREAKDOWN = 5,
  RS_STATUS_NUMERICAL = 6,
  RS_STATUS_TOO_FEW_WINDOWS = 7,
  RS_STATUS_IO = 8,
  RS_STATUS_SERIALIZATION = 9,
  RS_STATUS_VERSION_MISMATCH = 10,
  RS_STATUS_PANIC = 11,
} RsStatus;

/*
 Probability measure that generates simulated output.
 */
typedef enum RsMeasure {
  RS_MEASURE_APPROXIMATING = 0,
  RS_MEASURE_DISTORTED = 1,
} RsMeasure;

/*
 Opaque economy configuration.
 */
typedef struct RsConfig RsConfig;

/*
 Opaque solved equilibrium.
 */
typedef struct RsSolution RsSolution;

/*
 Headline simulated moments; unavailable statistics are NaN.
 */
typedef struct RsPanelStats {
  double mean_spread;
  double std_spread;
  double mean_debt_output;
  double std_c_over_std_y;
  double std_tb_y;
  double corr_y_c;
  double corr_y_spread;
  double corr_y_tb_y;
  double default_frequency;
  size_t n_windows;
} RsPanelStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *rs_last_error_message(void);

/*
 Benchmark calibration on the full grids.
 */
struct RsConfig *rs_config_default(void);

/*
 Parses a TOML config; unspecified keys take benchmark values.

 # Safety
 `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum RsStatus rs_config_from_toml(const char *toml, struct RsConfig **out);

/*
 Sets the robustness penalty; pass `INFINITY` for rational expectations.

 # Safety
 `config` must come from this library.
 */
enum RsStatus rs_config_set_theta(struct RsConfig *config, double theta);

/*
 Sets the output, debt and shock grid sizes.

 # Safety
 `config` must come from this library.
 */
enum RsStatus rs_config_set_grid(struct RsConfig *config, size_t n_y, size_t n_b, size_t n_x);

/*
 # Safety
 `config` must come from this library or be NULL.
 */
void rs_config_free(struct RsConfig *config);

/*
 Solves the equilibrium.

 # Safety
 `config` must come from this library and `out` be a valid pointer.
 */
enum RsStatus rs_solve(const struct RsConfig *config, struct RsSolution **out);

/*
 # Safety
 `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum RsStatus rs_solution_load(const char *path, struct RsSolution **out);

/*
 # Safety
 `solution` must come from this library and `path` be nul-terminated.
 */
enum RsStatus rs_solution_save(const struct RsSolution *solution, const char *path);

/*
 # Safety
 `solution` must come from this library or be NULL.
 */
void rs_solution_free(struct RsSolution *solution);

/*
 Grid sizes and solver iteration count.

 # Safety
 `solution` must come from this library; output pointers must be valid.
 */
enum RsStatus rs_solution_dims(const struct RsSolution *solution,
                               size_t *n_y,
                               size_t *n_b,
                               size_t *iterations);

/*
 Output level and debt level at grid indices.

 # Safety
 `solution` must come from this library; output pointers must be valid.
 */
enum RsStatus rs_solution_levels(const struct RsSolution *solution,
                                 size_t y,
                                 size_t b,
                                 double *y_level,
                                 double *b_level);

/*
 Bond price `q(y, B')`.

 # Safety
 `solution` must come from this library; `out` must be valid.
 */
enum RsStatus rs_solution_price(const struct RsSolution *solution,
                                size_t y,
                                size_t b_next,
                                double *out);

/*
 Next-period default probability under the approximating and distorted
 models after issuing `B'` in state `y`.

 # Safety
 `solution` must come from this library; output pointers must be valid.
 */
enum RsStatus rs_solution_default_probs(const struct RsSolution *solution,
                                        size_t y,
                                        size_t b_next,
                                        double *p_approx,
                                        double *p_distorted);

/*
 Simulates a panel and computes the subsample statistics.

 # Safety
 `solution` must come from this library; `out` must be valid.
 */
enum RsStatus rs_simulate_stats(const struct RsSolution *solution,
                                size_t n_paths,
                                size_t n_periods,
                                size_t burn_in,
                                uint64_t seed,
                                enum RsMeasure measure,
                                size_t min_windows,
                                struct RsPanelStats *out);

/*
 Detection-error probability at sample length `t`.

 # Safety
 `solution` must come from this library; `out` must be valid.
 */
enum RsStatus rs_detection_error(const struct RsSolution *solution,
                                 size_t t,
                                 size_t n_reps,
                                 uint64_t seed,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROBUST_SOVEREIGN_H */
