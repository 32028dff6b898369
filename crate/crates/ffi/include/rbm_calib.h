#ifndef RBM_CALIB_H
#define RBM_CALIB_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RbmStatus {
  RBM_STATUS_OK = 0,
  RBM_STATUS_NULL_POINTER = 1,
  RBM_STATUS_INVALID_ARGUMENT = 2,
  RBM_STATUS_DIMENSION_MISMATCH = 3,
  RBM_STATUS_ENUMERATION_CAP = 4,
  RBM_STATUS_EMPTY_SAMPLE_SET = 5,
  RBM_STATUS_PARSE = 6,
  RBM_STATUS_IO = 7,
  RBM_STATUS_PANIC = 8,
} RbmStatus;

typedef enum RbmVariant {
  RBM_VARIANT_ONE_PARAMETER = 0,
  RBM_VARIANT_THREE_PARAMETER = 1,
  RBM_VARIANT_ONE_AND_ALL_BIAS = 2,
} RbmVariant;

/**
 * Opaque calibration handle.
 */
typedef struct RbmBeta RbmBeta;

/**
 * Opaque model handle.
 */
typedef struct RbmModel RbmModel;

/**
 * Opaque sample set handle.
 */
typedef struct RbmSamples RbmSamples;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into this library from the same thread.
 */
const char *rbm_last_error(void);

/**
 * Creates a model from row-major `w` (`n_visible * n_hidden`), `b` and `c`.
 *
 * # Safety
 * The arrays must hold the stated number of doubles; `out` must be writable.
 */
enum RbmStatus rbm_model_new(size_t n_visible,
                             size_t n_hidden,
                             const double *w,
                             const double *b,
                             const double *c,
                             struct RbmModel **out);

/**
 * Parses a model from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum RbmStatus rbm_model_from_json(const char *json, struct RbmModel **out);

/**
 * Writes the model's JSON form to `*out`; release it with
 * [`rbm_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RbmStatus rbm_model_to_json(const struct RbmModel *model, char **out);

/**
 * # Safety
 * `s` must come from this library and not have been freed; null is ignored.
 */
void rbm_string_free(char *s);

/**
 * # Safety
 * `model` must come from this library and not have been freed; null is
 * ignored.
 */
void rbm_model_free(struct RbmModel *model);

/**
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum RbmStatus rbm_model_dims(const struct RbmModel *model, size_t *n_visible, size_t *n_hidden);

/**
 * Energy of one joint configuration.
 *
 * # Safety
 * `v` and `h` must hold `n_visible` and `n_hidden` bytes.
 */
enum RbmStatus rbm_energy(const struct RbmModel *model,
                          const uint8_t *v,
                          const uint8_t *h,
                          double *out);

/**
 * `log Z` by exact enumeration.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RbmStatus rbm_log_partition(const struct RbmModel *model, double *out);

/**
 * Exact samples from the enumerated distribution.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RbmStatus rbm_sample_exact(const struct RbmModel *model,
                                size_t n_samples,
                                uint64_t seed,
                                struct RbmSamples **out);

/**
 * Block Gibbs samples.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum RbmStatus rbm_sample_gibbs(const struct RbmModel *model,
                                size_t n_samples,
                                size_t burn_in,
                                size_t thinning,
                                size_t chains,
                                uint64_t seed,
                                struct RbmSamples **out);

/**
 * Samples from a simulated annealer that multiplies each parameter by the
 * given positive factors (same shapes as the model's `w`, `b`, `c`).
 *
 * # Safety
 * The factor arrays must match the model's shapes; `out` must be writable.
 */
enum RbmStatus rbm_sample_noisy_annealer(const struct RbmModel *model,
                                         const double *w_factors,
                                         const double *b_factors,
                                         const double *c_factors,
                                         size_t n_samples,
                                         uint64_t seed,
                                         struct RbmSamples **out);

/**
 * # Safety
 * `samples` must be a live handle; `out` must be writable.
 */
enum RbmStatus rbm_samples_len(const struct RbmSamples *samples, size_t *out);

/**
 * Copies row `k` into `v` and `h`.
 *
 * # Safety
 * `v` and `h` must have room for `n_visible` and `n_hidden` bytes.
 */
enum RbmStatus rbm_samples_row(const struct RbmSamples *samples, size_t k, uint8_t *v, uint8_t *h);

/**
 * # Safety
 * `samples` must come from this library and not have been freed; null is
 * ignored.
 */
void rbm_samples_free(struct RbmSamples *samples);

/**
 * `D(Q || P)` of the samples' empirical distribution to the model.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum RbmStatus rbm_kl_joint(const struct RbmModel *model,
                            const struct RbmSamples *samples,
                            double *out);

/**
 * A beta set with the given components: 1, 3 or `1 + n_visible + n_hidden`
 * values depending on the variant. A null `components` gives all ones.
 *
 * # Safety
 * `components` must hold `len` doubles; `out` must be writable.
 */
enum RbmStatus rbm_beta_new(enum RbmVariant variant,
                            size_t n_visible,
                            size_t n_hidden,
                            const double *components,
                            size_t len,
                            struct RbmBeta **out);

/**
 * Copies the components into `out` (capacity `len`) and their count into
 * `written`. Fails without writing when `len` is too small.
 *
 * # Safety
 * `out` must have room for `len` doubles.
 */
enum RbmStatus rbm_beta_components(const struct RbmBeta *beta,
                                   double *out,
                                   size_t len,
                                   size_t *written);

/**
 * # Safety
 * `beta` must come from this library and not have been freed; null is
 * ignored.
 */
void rbm_beta_free(struct RbmBeta *beta);

/**
 * The parameters to program so a sampler with factors `beta` realizes the
 * model: `params / expand(beta)`.
 *
 * # Safety
 * Both handles must be live; `out` must be writable.
 */
enum RbmStatus rbm_compensate(const struct RbmModel *model,
                              const struct RbmBeta *beta,
                              struct RbmModel **out);

/**
 * One estimation step from `samples`, drawn by the sampler programmed with
 * `compensate(model, beta_old)`. `layer_updates` > 0 evolves the samples
 * that many layer updates for the model phase; 0 uses exact enumeration.
 * A non-zero `collapsed` applies the single-factor update to every
 * component.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum RbmStatus rbm_beta_estimate_step(const struct RbmModel *model,
                                      const struct RbmSamples *samples,
                                      const struct RbmBeta *beta_old,
                                      double eta,
                                      size_t inner_iters,
                                      size_t layer_updates,
                                      int32_t collapsed,
                                      uint64_t seed,
                                      struct RbmBeta **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RBM_CALIB_H */
