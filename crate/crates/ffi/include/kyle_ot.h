#ifndef KYLE_OT_H
#define KYLE_OT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KotStatus {
  KOT_STATUS_OK = 0,
  KOT_STATUS_NULL_POINTER = 1,
  KOT_STATUS_INVALID_ARGUMENT = 2,
  KOT_STATUS_CONFIG = 3,
  KOT_STATUS_DEGENERATE_SIGNAL = 4,
  KOT_STATUS_NUMERICAL = 5,
  KOT_STATUS_HORIZON = 6,
  KOT_STATUS_FILTER_DEGENERACY = 7,
  KOT_STATUS_IO = 8,
  KOT_STATUS_PANIC = 99,
} KotStatus;

// A solved equilibrium: transport, pricing rule and strategy.
typedef struct KotEquilibrium KotEquilibrium;

// A parsed scenario file.
typedef struct KotScenario KotScenario;

// Gaussian law of `(ztilde, s)`; coordinates without a density have zero
// variance.
typedef struct KotGaussian {
  double mean[2];
  double cov[2][2];
} KotGaussian;

// Headline numbers of a simulation run. `terminal_coupling_rms` is NaN when
// the strategy has no terminal target.
typedef struct KotSimSummary {
  size_t n_paths;
  size_t n_steps;
  double mean_wealth;
  double mean_wealth_se;
  double expected_gamma_c;
  double expected_gamma_c_se;
  double ot_value;
  double terminal_ks_pvalue;
  double terminal_coupling_rms;
  double max_abs_autocorrelation;
  double qv_ratio;
} KotSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *kot_last_error(void);

// Library version as a static NUL-terminated string.
const char *kot_version(void);

// The unit static Kyle market.
enum KotStatus kot_scenario_static_kyle(struct KotScenario **out);

// # Safety
// `toml` must be a NUL-terminated string; `out` must be writable.
enum KotStatus kot_scenario_from_toml(const char *toml, struct KotScenario **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum KotStatus kot_scenario_from_file(const char *path, struct KotScenario **out);

// Overrides the simulation settings of a scenario.
//
// # Safety
// `scenario` must be a live handle.
enum KotStatus kot_scenario_set_sampling(struct KotScenario *scenario,
                                         size_t n_paths,
                                         size_t n_steps,
                                         uint64_t seed,
                                         bool projected);

// # Safety
// `scenario` must come from a `kot_scenario_*` constructor, or be NULL.
void kot_scenario_free(struct KotScenario *scenario);

// Solves the transport problem and assembles pricing rule and strategy.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum KotStatus kot_solve(const struct KotScenario *scenario, struct KotEquilibrium **out_eq);

// # Safety
// `eq` must come from [`kot_solve`], or be NULL.
void kot_equilibrium_free(struct KotEquilibrium *eq);

// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_lambda(const struct KotEquilibrium *eq, double *out);

// Optimal transport value `E[Gamma^c] + E[Gamma]`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_ot_value(const struct KotEquilibrium *eq, double *out);

// Terminal order flow `I(ztilde, s)`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_map(const struct KotEquilibrium *eq, double ztilde, double s, double *out);

// Order-flow potential `Gamma(y)`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_potential(const struct KotEquilibrium *eq, double y, double *out);

// Dual potential `Gamma^c(ztilde, s)`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_dual_potential(const struct KotEquilibrium *eq,
                                  double ztilde,
                                  double s,
                                  double *out);

// Price `H(t, y)`, `0 <= t <= T`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_price(const struct KotEquilibrium *eq, double t, double y, double *out);

// Value function `Gamma(t, y)`, `0 <= t <= T`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_value(const struct KotEquilibrium *eq, double t, double y, double *out);

// Insider trading rate, `0 <= t < T`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_rate(const struct KotEquilibrium *eq,
                        double t,
                        double y,
                        double ztilde,
                        double s,
                        double *out);

// Market maker's conditional law of `(ztilde, s)` given `Y_t = y`, `t < T`.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_filter_law(const struct KotEquilibrium *eq,
                              double t,
                              double y,
                              struct KotGaussian *out_law);

// Simulates equilibrium paths and summarizes them.
//
// # Safety
// `eq` must be a live handle; `out` must be writable.
enum KotStatus kot_simulate(const struct KotEquilibrium *eq,
                            size_t n_paths,
                            size_t n_steps,
                            uint64_t seed,
                            bool projected,
                            struct KotSimSummary *out_summary);

// Runs the verification suite for a scenario. On success `*json` holds the
// report (release it with [`kot_string_free`]) and `*all_passed` whether
// every check passed.
//
// # Safety
// `scenario` must be a live handle; `json` and `all_passed` must be writable.
enum KotStatus kot_verify(const struct KotScenario *scenario, char **json, bool *all_passed);

// # Safety
// `s` must come from this library, or be NULL.
void kot_string_free(char *s);

// Exact discrete optimal transport maximizing `sum plan * surplus`.
// `surplus` and `plan` are row-major `rows x cols`; `mu` has `rows`
// entries and `nu` `cols`, both summing to one.
//
// # Safety
// All pointers must reference arrays of the stated sizes.
enum KotStatus kot_discrete_ot(const double *surplus,
                               size_t rows,
                               size_t cols,
                               const double *mu,
                               const double *nu,
                               double *plan,
                               double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KYLE_OT_H */
