#ifndef QMC_AMIS_H
#define QMC_AMIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QmcStatus {
  QMC_STATUS_OK = 0,
  QMC_STATUS_INVALID_ARGUMENT = 1,
  QMC_STATUS_UNSUPPORTED = 2,
  QMC_STATUS_IO = 3,
  QMC_STATUS_NUMERICAL = 4,
  QMC_STATUS_NULL_POINTER = 5,
  QMC_STATUS_PANIC = 6,
} QmcStatus;

typedef enum QmcSampler {
  QMC_SAMPLER_MC = 0,
  QMC_SAMPLER_RQMC = 1,
} QmcSampler;

// A parsed experiment configuration.
typedef struct QmcConfig QmcConfig;

// A set of points in the unit cube, row-major.
typedef struct QmcPointSet QmcPointSet;

// The outcome of an experiment run.
typedef struct QmcResult QmcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next library call on the same thread.
const char *qmc_last_error(void);

// Library version as a static NUL-terminated string.
const char *qmc_version(void);

// Standard normal CDF.
double qmc_norm_cdf(double z);

// Standard normal quantile of `u` in (0, 1).
//
// # Safety
// `out` must be valid for a write.
enum QmcStatus qmc_inv_norm_cdf(double u, double *out);

// Smoothed projection of `x` with radius `r > 1`.
//
// # Safety
// `out` must be valid for a write.
enum QmcStatus qmc_smoothed_projection(double x, double r, double *out);

// Scrambled Sobol' set with `2^m` points in `d` dimensions.
//
// # Safety
// `out` must be valid for a write; the handle it receives must be released
// with [`qmc_point_set_free`].
enum QmcStatus qmc_sobol_generate(uint32_t m, uintptr_t d, uint64_t seed, struct QmcPointSet **out);

// `n` points from either sampler; RQMC needs a power of two.
//
// # Safety
// As for [`qmc_sobol_generate`].
enum QmcStatus qmc_points_generate(enum QmcSampler sampler,
                                   uintptr_t n,
                                   uintptr_t d,
                                   uint64_t seed,
                                   struct QmcPointSet **out);

// Number of points, or 0 for a null handle.
//
// # Safety
// `ps` must be null or a live point-set handle.
uintptr_t qmc_point_set_len(const struct QmcPointSet *ps);

// Dimension, or 0 for a null handle.
//
// # Safety
// `ps` must be null or a live point-set handle.
uintptr_t qmc_point_set_dim(const struct QmcPointSet *ps);

// Row-major `len * dim` coordinates, owned by the handle.
//
// # Safety
// `ps` must be null or a live point-set handle. The pointer dies with it.
const double *qmc_point_set_values(const struct QmcPointSet *ps);

// # Safety
// `ps` must be null or a handle not yet freed.
void qmc_point_set_free(struct QmcPointSet *ps);

// Desk-scale defaults for the named experiment.
//
// # Safety
// `experiment` must be a NUL-terminated string and `out` valid for a write.
enum QmcStatus qmc_config_default(const char *experiment, struct QmcConfig **out);

// Parses `key = value` config text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` valid for a write.
enum QmcStatus qmc_config_parse(const char *text, struct QmcConfig **out);

// Reads and parses a config file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` valid for a write.
enum QmcStatus qmc_config_load(const char *path, struct QmcConfig **out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void qmc_config_free(struct QmcConfig *cfg);

// Runs the configured experiment.
//
// # Safety
// `cfg` must be a live config handle and `out` valid for a write; release
// the result with [`qmc_result_free`].
enum QmcStatus qmc_experiment_run(const struct QmcConfig *cfg, struct QmcResult **out);

// Number of `(method, sampler, budget)` series, or 0 for a null handle.
//
// # Safety
// `res` must be null or a live result handle.
uintptr_t qmc_result_series_count(const struct QmcResult *res);

// Budget and RMSE of series `index`. A series that failed reports
// `QMC_STATUS_NUMERICAL` with its failure message.
//
// # Safety
// `res` must be a live result handle; `budget` and `rmse` valid for writes.
enum QmcStatus qmc_result_series(const struct QmcResult *res,
                                 uintptr_t index,
                                 uintptr_t *budget,
                                 double *rmse);

// Fitted log-log slope for `method` under `sampler`.
//
// # Safety
// `res` must be a live result handle, `method` a NUL-terminated string and
// `slope` valid for a write.
enum QmcStatus qmc_result_slope(const struct QmcResult *res,
                                const char *method,
                                enum QmcSampler sampler,
                                double *slope);

// Length of the truth vector, or 0 for a null handle.
//
// # Safety
// `res` must be null or a live result handle.
uintptr_t qmc_result_truth_len(const struct QmcResult *res);

// Copies up to `len` truth components into `out`; returns how many were written.
//
// # Safety
// `res` must be null or a live result handle; `out` valid for `len` writes.
uintptr_t qmc_result_truth(const struct QmcResult *res, double *out, uintptr_t len);

// Writes the result CSV to `path`, creating parent directories.
//
// # Safety
// `res` must be a live result handle and `path` a NUL-terminated string.
enum QmcStatus qmc_result_write_csv(const struct QmcResult *res, const char *path);

// # Safety
// `res` must be null or a handle not yet freed.
void qmc_result_free(struct QmcResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMC_AMIS_H */
