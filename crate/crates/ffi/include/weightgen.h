/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef WEIGHTGEN_H
#define WEIGHTGEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values 2 to 4 match the command-line exit codes.
 */
typedef enum WgStatus {
  WG_STATUS_OK = 0,
  WG_STATUS_ERROR = 1,
  WG_STATUS_CONFIG = 2,
  WG_STATUS_MISSING_ARTIFACT = 3,
  WG_STATUS_NUMERICAL = 4,
  WG_STATUS_NULL_POINTER = 5,
  WG_STATUS_INVALID_ARGUMENT = 6,
  WG_STATUS_BUFFER_TOO_SMALL = 7,
  WG_STATUS_PANIC = 8,
} WgStatus;

/**
 * A trained autoencoder.
 */
typedef struct WgAutoencoder WgAutoencoder;

/**
 * A fitted latent sampler.
 */
typedef struct WgSampler WgSampler;

typedef struct WgMwuResult {
  double u;
  double p_value;
  double cles;
  /**
   * 1 when the p-value comes from exact enumeration.
   */
  int32_t exact;
} WgMwuResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *wg_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *wg_last_error(void);

/**
 * Parameter count of the reference CNN for 1 or 3 input channels.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `size_t`.
 */
enum WgStatus wg_reference_param_count(size_t channels, size_t *out);

/**
 * Loads an autoencoder checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * memory for one handle.
 */
enum WgStatus wg_ae_load(const char *path, struct WgAutoencoder **out);

/**
 * Releases an autoencoder; null is ignored.
 *
 * # Safety
 * `ae` must come from [`wg_ae_load`] and not be used afterwards.
 */
void wg_ae_free(struct WgAutoencoder *ae);

/**
 * Latent size and flattened weight-vector length.
 *
 * # Safety
 * `ae` must be a live handle; the out pointers may be null.
 */
enum WgStatus wg_ae_dims(const struct WgAutoencoder *ae, size_t *d_z, size_t *n_params);

/**
 * Encodes `n` weight vectors (`n * n_params` floats) into `out`
 * (`n * d_z` floats).
 *
 * # Safety
 * Buffers must hold the stated number of floats.
 */
enum WgStatus wg_ae_encode(const struct WgAutoencoder *ae,
                           const float *weights,
                           size_t n,
                           float *out,
                           size_t out_len);

/**
 * Decodes `n` latent codes (`n * d_z` floats) into weight vectors.
 *
 * # Safety
 * Buffers must hold the stated number of floats.
 */
enum WgStatus wg_ae_decode(const struct WgAutoencoder *ae,
                           const float *z,
                           size_t n,
                           float *out,
                           size_t out_len);

/**
 * Loads a fitted sampler.
 *
 * # Safety
 * As for [`wg_ae_load`].
 */
enum WgStatus wg_sampler_load(const char *path, struct WgSampler **out);

/**
 * Releases a sampler; null is ignored.
 *
 * # Safety
 * `s` must come from [`wg_sampler_load`] and not be used afterwards.
 */
void wg_sampler_free(struct WgSampler *s);

/**
 * Latent dimension the sampler draws.
 *
 * # Safety
 * `s` must be a live handle and `out` writable.
 */
enum WgStatus wg_sampler_dim(const struct WgSampler *s, size_t *out);

/**
 * Draws `n` codes into `out` (`n * dim` floats), deterministic in `seed`.
 *
 * # Safety
 * `out` must hold `out_len` floats.
 */
enum WgStatus wg_sampler_sample(const struct WgSampler *s,
                                size_t n,
                                uint64_t seed,
                                float *out,
                                size_t out_len);

/**
 * Two-sided Mann-Whitney U test of `a` against `b`.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` doubles; `out` must be writable.
 */
enum WgStatus wg_mwu_test(const double *a,
                          size_t na,
                          const double *b,
                          size_t nb,
                          struct WgMwuResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEIGHTGEN_H */
