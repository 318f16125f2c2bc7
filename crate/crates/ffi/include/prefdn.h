#ifndef PREFDN_H
#define PREFDN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrefdnStatus {
  PREFDN_STATUS_OK = 0,
  PREFDN_STATUS_NULL_POINTER = 1,
  PREFDN_STATUS_INVALID_ARGUMENT = 2,
  PREFDN_STATUS_SHAPE_MISMATCH = 3,
  PREFDN_STATUS_PARAM_RANGE = 4,
  PREFDN_STATUS_FORMAT = 5,
  PREFDN_STATUS_IO = 6,
  PREFDN_STATUS_NUMERIC = 7,
  PREFDN_STATUS_BUFFER_TOO_SMALL = 8,
  PREFDN_STATUS_PANIC = 9,
} PrefdnStatus;

typedef enum PrefdnLossVariant {
  PREFDN_LOSS_VARIANT_BEST_MATCH = 0,
  PREFDN_LOSS_VARIANT_FORCED_CHOICE = 1,
  PREFDN_LOSS_VARIANT_HYBRID = 2,
} PrefdnLossVariant;

/*
 Opaque grayscale image.
 */
typedef struct PrefdnImage PrefdnImage;

/*
 σ and ε per pyramid level.
 */
typedef struct PrefdnParams {
  double sigmas[3];
  double epsilons[3];
} PrefdnParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. The pointer
 stays valid until the next prefdn call on the same thread.
 */
const char *prefdn_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *prefdn_version(void);

/*
 Copies `width * height` row-major pixels into a new image.

 # Safety
 `pixels` must point to `width * height` readable doubles; `out` must be
 writable.
 */
enum PrefdnStatus prefdn_image_new(size_t width,
                                   size_t height,
                                   const double *pixels,
                                   struct PrefdnImage **out);

/*
 Releases an image handle. NULL is ignored.

 # Safety
 `img` must come from this library and not be used afterwards.
 */
void prefdn_image_free(struct PrefdnImage *img);

/*
 Width in pixels, 0 for NULL.

 # Safety
 `img` must be NULL or a live handle.
 */
size_t prefdn_image_width(const struct PrefdnImage *img);

/*
 Height in pixels, 0 for NULL.

 # Safety
 `img` must be NULL or a live handle.
 */
size_t prefdn_image_height(const struct PrefdnImage *img);

/*
 Copies the pixels into `out`, which holds `len` doubles.

 # Safety
 `img` must be a live handle and `out` writable for `len` doubles.
 */
enum PrefdnStatus prefdn_image_copy_pixels(const struct PrefdnImage *img, double *out, size_t len);

/*
 Reads a PGM or PNG file chosen by extension.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PrefdnStatus prefdn_image_load(const char *path, struct PrefdnImage **out);

/*
 Writes a PGM (16-bit) or PNG (8-bit) file chosen by extension.

 # Safety
 `img` must be a live handle; `path` a NUL-terminated string.
 */
enum PrefdnStatus prefdn_image_save(const struct PrefdnImage *img, const char *path);

/*
 Runs the pyramid denoiser and returns a new image.

 # Safety
 `img` must be a live handle, `params` readable and `out` writable.
 */
enum PrefdnStatus prefdn_denoise(const struct PrefdnImage *img,
                                 const struct PrefdnParams *params,
                                 struct PrefdnImage **out);

/*
 `sign(x) * max(|x| - epsilon, 0)`.
 */
double prefdn_soft_threshold(double x, double epsilon);

/*
 Projects `params` into the default bounds.

 # Safety
 `params` must be readable and `out` writable.
 */
enum PrefdnStatus prefdn_clamp_params(const struct PrefdnParams *params, struct PrefdnParams *out);

/*
 Loss of one choice given the `q` candidate errors. `variant` is a
 `PrefdnLossVariant` value.

 # Safety
 `errors` must hold `q` doubles and `out` be writable.
 */
enum PrefdnStatus prefdn_loss(const double *errors,
                              size_t q,
                              size_t selected,
                              uint32_t variant,
                              double *out);

/*
 ∂loss/∂e_q for each candidate, written to `out_weights[0..q]`.

 # Safety
 `errors` must hold `q` doubles and `out_weights` be writable for `q`.
 */
enum PrefdnStatus prefdn_loss_gradient_weights(const double *errors,
                                               size_t q,
                                               size_t selected,
                                               uint32_t variant,
                                               double *out_weights);

/*
 Mean squared error between `denoise(img, params)` and `target` and its
 gradient with respect to σ and ε.

 # Safety
 Handles must be live; `params` readable; outputs writable.
 */
enum PrefdnStatus prefdn_mse_gradient(const struct PrefdnImage *img,
                                      const struct PrefdnParams *params,
                                      const struct PrefdnImage *target,
                                      double *out_loss,
                                      struct PrefdnParams *out_grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PREFDN_H */
