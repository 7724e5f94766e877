#ifndef STADION_H
#define STADION_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum StadionStatus {
  STADION_STATUS_OK = 0,
  STADION_STATUS_NULL_POINTER = 1,
  STADION_STATUS_INVALID_UTF8 = 2,
  STADION_STATUS_INVALID_INPUT = 3,
  STADION_STATUS_INSUFFICIENT_DATA = 4,
  STADION_STATUS_UNSUPPORTED_KERNEL = 5,
  STADION_STATUS_DIVERGED = 6,
  STADION_STATUS_NOT_STABLE = 7,
  STADION_STATUS_NEAR_SINGULAR = 8,
  STADION_STATUS_NO_CONVERGENCE = 9,
  STADION_STATUS_NON_FINITE_LOSS = 10,
  STADION_STATUS_NON_POSITIVE_VALUE = 11,
  STADION_STATUS_IO = 12,
  STADION_STATUS_JSON = 13,
  STADION_STATUS_BUFFER_TOO_SMALL = 14,
  STADION_STATUS_PANIC = 15,
} StadionStatus;

typedef enum StadionDiffusion {
  STADION_DIFFUSION_DIAG_EXP = 0,
  STADION_DIFFUSION_BASIS_CONE = 1,
} StadionDiffusion;

typedef enum StadionKernel {
  STADION_KERNEL_RBF = 0,
  STADION_KERNEL_TILTED_RBF = 1,
  STADION_KERNEL_IMQ_PLUS = 2,
} StadionKernel;

typedef enum StadionEstimator {
  STADION_ESTIMATOR_LINEAR_PAIRS = 0,
  STADION_ESTIMATOR_U_STATISTIC = 1,
} StadionEstimator;

/**
 * Opaque row-major sample matrix.
 */
typedef struct StadionDataset StadionDataset;

/**
 * Opaque model handle.
 */
typedef struct StadionModel StadionModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. Valid until the
 * next failing call on this thread.
 */
const char *stadion_last_error(void);

/**
 * Static version string.
 */
const char *stadion_version(void);

/**
 * Parses a model from its JSON representation.
 *
 * # Safety
 * `json` must be a valid C string and `out` a valid pointer.
 */
enum StadionStatus stadion_model_from_json(const char *json, struct StadionModel **out);

/**
 * Linear drift model with the default initialization.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum StadionStatus stadion_model_linear(size_t d,
                                        enum StadionDiffusion diffusion,
                                        struct StadionModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void stadion_model_free(struct StadionModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t stadion_model_dim(const struct StadionModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t stadion_model_num_params(const struct StadionModel *model);

/**
 * Copies the parameter vector into `buf`, which must hold `num_params` values.
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum StadionStatus stadion_model_get_params(const struct StadionModel *model,
                                            double *buf,
                                            size_t len);

/**
 * # Safety
 * `params` must point to `len` readable doubles.
 */
enum StadionStatus stadion_model_set_params(struct StadionModel *model,
                                            const double *params,
                                            size_t len);

/**
 * Copies `n * d` row-major values into a new dataset.
 *
 * # Safety
 * `values` must point to `n * d` readable doubles; `out` must be valid.
 */
enum StadionStatus stadion_dataset_new(const double *values,
                                       size_t n,
                                       size_t d,
                                       struct StadionDataset **out);

/**
 * # Safety
 * `data` must come from this library and not be used afterwards.
 */
void stadion_dataset_free(struct StadionDataset *data);

/**
 * # Safety
 * `data` must be a valid handle.
 */
size_t stadion_dataset_rows(const struct StadionDataset *data);

/**
 * # Safety
 * `data` must be a valid handle.
 */
size_t stadion_dataset_cols(const struct StadionDataset *data);

/**
 * Borrowed row-major values, valid while the handle lives.
 *
 * # Safety
 * `data` must be a valid handle.
 */
const double *stadion_dataset_values(const struct StadionDataset *data);

/**
 * Empirical SKDS of `model` under the intervention (JSON, or null for none).
 * When `grad_theta` is non-null it receives `num_params` values.
 *
 * # Safety
 * Pointers must be valid; `grad_theta` must hold `grad_len` doubles.
 */
enum StadionStatus stadion_skds(const struct StadionModel *model,
                                const char *intervention_json,
                                const struct StadionDataset *data,
                                enum StadionKernel kernel,
                                double bandwidth,
                                enum StadionEstimator est,
                                double *loss_out,
                                double *grad_theta,
                                size_t grad_len);

/**
 * Euler-Maruyama samples of the stationary law, started at zero.
 *
 * # Safety
 * Pointers must be valid; `intervention_json` may be null.
 */
enum StadionStatus stadion_simulate(const struct StadionModel *model,
                                    const char *intervention_json,
                                    size_t n_samples,
                                    double dt,
                                    uint64_t burn_in_steps,
                                    uint64_t thinning,
                                    uint64_t seed,
                                    struct StadionDataset **out);

/**
 * Empirical Wasserstein distance between two sample sets.
 *
 * # Safety
 * Pointers must be valid.
 */
enum StadionStatus stadion_wasserstein(const struct StadionDataset *a,
                                       const struct StadionDataset *b,
                                       uint64_t seed,
                                       double *out);

/**
 * One-sided paired Wilcoxon test with a relative margin; `ours_better`
 * selects the direction of the alternative.
 *
 * # Safety
 * `ours` and `baseline` must each point to `n` readable doubles.
 */
enum StadionStatus stadion_wilcoxon(const double *ours,
                                    const double *baseline,
                                    size_t n,
                                    double margin,
                                    bool ours_better,
                                    double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STADION_H */
