#ifndef CELP_H
#define CELP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every exported function.
typedef enum CelpStatus {
  CELP_STATUS_OK = 0,
  CELP_STATUS_NULL_POINTER = 1,
  CELP_STATUS_DIMENSION = 2,
  CELP_STATUS_EMPTY_REGION = 3,
  // Latent mining found no candidate centre.
  CELP_STATUS_NO_LATENT_REGION = 4,
  CELP_STATUS_INVALID_MASK = 5,
  CELP_STATUS_OUT_OF_RANGE = 6,
  CELP_STATUS_FORMAT = 7,
  CELP_STATUS_CONFIG = 8,
  CELP_STATUS_IO = 9,
  CELP_STATUS_INTERNAL = 10,
} CelpStatus;

// Opaque model: frozen backbone plus trained decoder.
typedef struct CelpModel CelpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or an empty string if
// none has failed. Valid until the next failing call.
const char *celp_last_error(void);

// Cosine similarity of two length-`n` vectors; 0 when either is (near) zero.
//
// # Safety
// `u` and `v` must point to `n` readable doubles and `out` to one writable double.
enum CelpStatus celp_cosine(const double *u, const double *v, size_t n, double *out);

// Feature grid produced by the backbone for an `height×width` image.
//
// # Safety
// `out_h` and `out_w` must be writable.
enum CelpStatus celp_feature_grid(size_t height, size_t width, size_t *out_h, size_t *out_w);

// Latent prototype sampling on caller-supplied features.
//
// `feature_m` is `c_m×h×w` and `feature_h` is `c_h×h×w`, row-major;
// `mask` holds `h·w` labels in {0, 1, 255}. `sigma = 0` selects the
// default count threshold. On success `out_mask` (`h·w`) receives the
// pseudo-mask, `out_prototype` (`c_m`) the latent prototype and
// `out_center` the sampled centre. Returns `NoLatentRegion` when the
// candidate set is empty.
//
// # Safety
// Every pointer must reference a buffer of the stated length.
enum CelpStatus celp_mine(const double *feature_m,
                          size_t c_m,
                          const double *feature_h,
                          size_t c_h,
                          size_t h,
                          size_t w,
                          const uint8_t *mask,
                          double delta,
                          size_t sigma,
                          uint64_t seed,
                          uint8_t *out_mask,
                          double *out_prototype,
                          size_t *out_center);

// Loads a decoder checkpoint written by `celp train` (`hidden` must match
// the training configuration) on top of the standard frozen backbone.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CelpStatus celp_model_load(const char *path, size_t hidden, struct CelpModel **out);

// Untrained model with decoder weights drawn from `seed`.
//
// # Safety
// `out` must be writable.
enum CelpStatus celp_model_init(uint64_t seed, size_t hidden, struct CelpModel **out);

// Predicts the query foreground on the feature grid.
//
// `query` is `3×height×width`; `supports` holds `k` such images back to
// back and `support_masks` their `k` binary masks of `height·width`.
// `vote = 0` averages supports, `vote = j` marks positions predicted
// foreground by at least `j` supports. `out_mask` must hold the feature
// grid reported by [`celp_feature_grid`].
//
// # Safety
// `model` must come from a `celp_model_*` constructor and every buffer
// must have the stated length.
enum CelpStatus celp_model_predict(const struct CelpModel *model,
                                   const double *query,
                                   const double *supports,
                                   const uint8_t *support_masks,
                                   size_t k,
                                   size_t height,
                                   size_t width,
                                   size_t vote,
                                   uint8_t *out_mask);

// Number of trainable decoder parameters.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum CelpStatus celp_model_parameter_count(const struct CelpModel *model, size_t *out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must come from a `celp_model_*` constructor and not be used again.
void celp_model_free(struct CelpModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELP_H */
