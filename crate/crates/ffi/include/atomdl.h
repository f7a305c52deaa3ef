#ifndef ATOMDL_H
#define ATOMDL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible call.
typedef enum AtomdlStatus {
  ATOMDL_STATUS_OK = 0,
  ATOMDL_STATUS_NULL_POINTER = 1,
  ATOMDL_STATUS_INVALID_ARGUMENT = 2,
  ATOMDL_STATUS_NUMERICAL = 3,
  ATOMDL_STATUS_IO = 4,
  ATOMDL_STATUS_BUFFER_TOO_SMALL = 5,
  ATOMDL_STATUS_PANIC = 6,
} AtomdlStatus;

typedef enum AtomdlMode {
  ATOMDL_MODE_ATOM_ASSISTED = 0,
  ATOMDL_MODE_SDL = 1,
  ATOMDL_MODE_BLIND = 2,
} AtomdlMode;

typedef enum AtomdlThreshold {
  ATOMDL_THRESHOLD_PAPER_LITERAL = 0,
  ATOMDL_THRESHOLD_EXACT_PROX = 1,
} AtomdlThreshold;

// Opaque synthetic dataset.
typedef struct AtomdlDataset AtomdlDataset;

// Opaque fit result.
typedef struct AtomdlFit AtomdlFit;

// Solver settings. Fill with [`atomdl_fit_options_default`] and edit.
// `mode` takes an `AtomdlMode` value and `threshold` an `AtomdlThreshold`.
typedef struct AtomdlFitOptions {
  int32_t mode;
  size_t k;
  double lambda;
  double c_delta;
  double c_d;
  size_t n_outer;
  size_t n_inner;
  uint64_t seed;
  int32_t threshold;
} AtomdlFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message on this thread, without the
// terminating NUL. Zero when the last call succeeded.
size_t atomdl_last_error_length(void);

// Copies the last error message, NUL-terminated, into `buf`.
//
// # Safety
// `buf` must point to `len` writable bytes.
enum AtomdlStatus atomdl_last_error_message(char *buf, size_t len);

// Writes the library defaults (atom-assisted, K = 20, desk budget).
//
// # Safety
// `out` must be null or point to writable memory for one options struct.
enum AtomdlStatus atomdl_fit_options_default(struct AtomdlFitOptions *out);

// Generates the built-in default dataset with the given seed.
//
// # Safety
// `out` must point to writable storage for one handle.
enum AtomdlStatus atomdl_dataset_generate_default(uint64_t seed, struct AtomdlDataset **out);

// Generates a dataset from a JSON dataset spec.
//
// # Safety
// `spec_json` must be a NUL-terminated string; `out` must be writable.
enum AtomdlStatus atomdl_dataset_generate_json(const char *spec_json, struct AtomdlDataset **out);

// Loads a bundle directory written by `atomdl generate`.
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be writable.
enum AtomdlStatus atomdl_dataset_load(const char *dir, struct AtomdlDataset **out);

// Reports T, N and the number of true sources.
//
// # Safety
// `ds` must be a live handle; output pointers may be null.
enum AtomdlStatus atomdl_dataset_shape(const struct AtomdlDataset *ds,
                                       size_t *t,
                                       size_t *n,
                                       size_t *k_true);

// Copies X (T × N, row-major).
//
// # Safety
// `ds` must be a live handle; `buf` must hold `len` doubles.
enum AtomdlStatus atomdl_dataset_copy_x(const struct AtomdlDataset *ds, double *buf, size_t len);

// Copies the true task time course scaled to unit norm (length T), the
// anchor used by the sweeps at zero shift.
//
// # Safety
// `ds` must be a live handle; `buf` must hold `len` doubles.
enum AtomdlStatus atomdl_dataset_copy_task_anchor(const struct AtomdlDataset *ds,
                                                  double *buf,
                                                  size_t len);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void atomdl_dataset_free(struct AtomdlDataset *ds);

// Fits `X ≈ D S`.
//
// `x` is T × N row-major. `anchors` is T × M row-major and may be null when
// `m` is zero; blind mode ignores it.
//
// # Safety
// Buffers must hold the stated number of doubles; `opts` must be valid and
// `out` writable.
enum AtomdlStatus atomdl_fit_run(const double *x,
                                 size_t t,
                                 size_t n,
                                 const double *anchors,
                                 size_t m,
                                 const struct AtomdlFitOptions *opts,
                                 struct AtomdlFit **out);

// Reports T, K, N and the number of recorded outer iterations.
//
// # Safety
// `fit` must be a live handle; output pointers may be null.
enum AtomdlStatus atomdl_fit_shape(const struct AtomdlFit *fit,
                                   size_t *t,
                                   size_t *k,
                                   size_t *n,
                                   size_t *iterations);

// Copies D (T × K, row-major).
//
// # Safety
// `fit` must be a live handle; `buf` must hold `len` doubles.
enum AtomdlStatus atomdl_fit_copy_dictionary(const struct AtomdlFit *fit, double *buf, size_t len);

// Copies S (K × N, row-major).
//
// # Safety
// `fit` must be a live handle; `buf` must hold `len` doubles.
enum AtomdlStatus atomdl_fit_copy_coefficients(const struct AtomdlFit *fit,
                                               double *buf,
                                               size_t len);

// Copies the objective after each outer iteration.
//
// # Safety
// `fit` must be a live handle; `buf` must hold `len` doubles.
enum AtomdlStatus atomdl_fit_copy_objective(const struct AtomdlFit *fit, double *buf, size_t len);

// Whether the final dictionary satisfies every atom constraint.
//
// # Safety
// `fit` must be a live handle; `feasible` must be writable.
enum AtomdlStatus atomdl_fit_is_feasible(const struct AtomdlFit *fit, bool *feasible);

// Scores the fit against the dataset's task-of-interest spatial map.
//
// # Safety
// Both handles must be live; output pointers may be null.
enum AtomdlStatus atomdl_fit_score_task(const struct AtomdlFit *fit,
                                        const struct AtomdlDataset *ds,
                                        double *r,
                                        double *one_minus_r2);

// Releases a fit result. Null is ignored.
//
// # Safety
// `fit` must come from this library and not be used afterwards.
void atomdl_fit_free(struct AtomdlFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATOMDL_H */
