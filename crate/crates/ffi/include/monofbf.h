#ifndef MONOFBF_H
#define MONOFBF_H

#include <stddef.h>
#include <stdint.h>

typedef enum MonofbfStatus {
  MONOFBF_STATUS_OK = 0,
  MONOFBF_STATUS_NULL_POINTER = 1,
  MONOFBF_STATUS_INVALID_ARGUMENT = 2,
  MONOFBF_STATUS_SHAPE = 3,
  MONOFBF_STATUS_CONFIG = 4,
  // Step search failure, non-finite values or a collapsed power iteration.
  MONOFBF_STATUS_NUMERICAL = 5,
  MONOFBF_STATUS_IO = 6,
  MONOFBF_STATUS_FORMAT = 7,
  MONOFBF_STATUS_PANIC = 8,
} MonofbfStatus;

typedef enum MonofbfFormulation {
  MONOFBF_FORMULATION_DIRECT = 0,
  MONOFBF_FORMULATION_LEAST_SQUARES = 1,
} MonofbfFormulation;

// An operator `F` acting on images.
typedef struct MonofbfOperator MonofbfOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *monofbf_version(void);

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *monofbf_last_error_message(void);

// Loads a checkpoint written by `monofbf train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum MonofbfStatus monofbf_operator_from_checkpoint(const char *path, struct MonofbfOperator **out);

// The saturated-blur model `x ↦ (1/K) Σ ψ_δ(k_i ⊛ x)`.
//
// `kernels` holds `count` normalized `size × size` kernels back to back.
//
// # Safety
// `kernels` must point to `count * size * size` doubles and `out` must be
// writable.
enum MonofbfStatus monofbf_operator_sat_blur(const double *kernels,
                                             size_t count,
                                             size_t size,
                                             double delta,
                                             struct MonofbfOperator **out);

// Releases an operator. NULL is ignored.
//
// # Safety
// `op` must come from a `monofbf_operator_*` constructor and must not be
// used afterwards.
void monofbf_operator_free(struct MonofbfOperator *op);

// Writes `F(x)` to `out`.
//
// # Safety
// `x` and `out` must hold `height * width` doubles.
enum MonofbfStatus monofbf_operator_apply(const struct MonofbfOperator *op,
                                          size_t height,
                                          size_t width,
                                          const double *x,
                                          double *out);

// Estimates the smallest eigenvalue of the symmetric part of the Jacobian
// of `F` at `x`. `n_iter = 0` selects the default.
//
// # Safety
// `x` must hold `height * width` doubles and `out_lambda` must be writable.
enum MonofbfStatus monofbf_operator_lambda_min(const struct MonofbfOperator *op,
                                               size_t height,
                                               size_t width,
                                               const double *x,
                                               size_t n_iter,
                                               uint64_t seed,
                                               double *out_lambda);

// Recovers `x̄` from `F(x̄)` over the box `[0, 1]`. `max_iter = 0` and
// `tol = 0` select the defaults.
//
// # Safety
// `x_bar` and `out_x` must hold `height * width` doubles; `out_iterations`
// may be NULL.
enum MonofbfStatus monofbf_invert(const struct MonofbfOperator *op,
                                  size_t height,
                                  size_t width,
                                  const double *x_bar,
                                  size_t max_iter,
                                  double tol,
                                  double *out_x,
                                  size_t *out_iterations);

// Restores `y` by solving the direct or least-squares inclusion with TV
// weight `rho` over `[0, 1]`. For least squares, `lin_kernel` (a
// `lin_size × lin_size` kernel) may be NULL when the operator has a
// single kernel of its own.
//
// # Safety
// `y` and `out_x` must hold `height * width` doubles; `lin_kernel` is NULL
// or holds `lin_size * lin_size` doubles; `out_iterations` may be NULL.
enum MonofbfStatus monofbf_restore(const struct MonofbfOperator *op,
                                   enum MonofbfFormulation formulation,
                                   const double *lin_kernel,
                                   size_t lin_size,
                                   size_t height,
                                   size_t width,
                                   const double *y,
                                   double rho,
                                   size_t max_iter,
                                   double tol,
                                   double *out_x,
                                   size_t *out_iterations);

// PSNR for peak value 1; `+inf` for identical images.
//
// # Safety
// `x` and `reference` must hold `height * width` doubles.
enum MonofbfStatus monofbf_psnr(size_t height,
                                size_t width,
                                const double *x,
                                const double *reference,
                                double *out);

// Mean SSIM with an 11×11 Gaussian window.
//
// # Safety
// `x` and `reference` must hold `height * width` doubles.
enum MonofbfStatus monofbf_ssim(size_t height,
                                size_t width,
                                const double *x,
                                const double *reference,
                                double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MONOFBF_H */
