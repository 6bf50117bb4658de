#ifndef RRDPH_H
#define RRDPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum RrdphStatus {
  RRDPH_STATUS_OK = 0,
  // A required pointer was null.
  RRDPH_STATUS_NULL_POINTER = 1,
  // A parameter, dimension or buffer length is invalid.
  RRDPH_STATUS_INVALID_ARGUMENT = 2,
  // A numerical failure: singular system, zero likelihood, non-convergence.
  RRDPH_STATUS_NUMERICAL = 3,
  // A size or step budget was exceeded.
  RRDPH_STATUS_BUDGET = 4,
  // An internal invariant was violated.
  RRDPH_STATUS_INTERNAL = 5,
  // A panic was caught.
  RRDPH_STATUS_PANIC = 6,
} RrdphStatus;

// Distribution of the per-visit rewards.
typedef enum RrdphRewardKind {
  RRDPH_REWARD_KIND_BERNOULLI = 0,
  RRDPH_REWARD_KIND_GEOMETRIC = 1,
} RrdphRewardKind;

// Opaque EM fit result.
typedef struct RrdphFit RrdphFit;

// Opaque random-reward model.
typedef struct RrdphModel RrdphModel;

// Message describing the last failure on this thread, or an empty string.
// The pointer stays valid until the next call into this library on the same
// thread.
const char *rrdph_last_error(void);

// Builds a random-reward model from `pi` (length `d`), `t` (`d * d`,
// row-major) and per-state reward probabilities `rewards` (length `d`).
//
// # Safety
// The arrays must hold the stated number of values and `out` must be valid
// for writes.
enum RrdphStatus rrdph_model_new(enum RrdphRewardKind kind,
                                 size_t d,
                                 const double *pi,
                                 const double *t,
                                 const double *rewards,
                                 struct RrdphModel **out);

// Builds an inertia-escalation model with `d` levels, inertia `nu`,
// escalation `eta` and geometric reward probabilities `q` (length `d`).
//
// # Safety
// `q` must hold `d` values and `out` must be valid for writes.
enum RrdphStatus rrdph_iem_new(size_t d,
                               double nu,
                               double eta,
                               const double *q,
                               struct RrdphModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void rrdph_model_free(struct RrdphModel *model);

// Number of states of the underlying chain.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_model_dim(const struct RrdphModel *model, size_t *out);

// `P(Y1 = y1, Y2 = y2)`.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_joint_pmf(const struct RrdphModel *model,
                                 uint64_t y1,
                                 uint64_t y2,
                                 double *out);

// Fills `out` (length `len`, at least `(y1_max + 1) * (y2_max + 1)`) with
// the joint pmf, indexed `[y2 * (y1_max + 1) + y1]`.
//
// # Safety
// `model` must be a live handle and `out` valid for `len` writes.
enum RrdphStatus rrdph_joint_pmf_table(const struct RrdphModel *model,
                                       size_t y1_max,
                                       size_t y2_max,
                                       double *out,
                                       size_t len);

// Joint generating function `E[theta1^Y1 theta2^Y2]`.
//
// # Safety
// `model` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_pgf(const struct RrdphModel *model,
                           double theta1,
                           double theta2,
                           double *out);

// `E[Y1]` and `E[Y2]`.
//
// # Safety
// `model` must be a live handle and both outputs valid for writes.
enum RrdphStatus rrdph_expected_rewards(const struct RrdphModel *model,
                                        double *out_y1,
                                        double *out_y2);

// Draws `n` observations with generator `seed` into `y1` and `y2`.
//
// # Safety
// `model` must be a live handle and `y1`, `y2` valid for `n` writes.
enum RrdphStatus rrdph_simulate(const struct RrdphModel *model,
                                size_t n,
                                uint64_t seed,
                                uint64_t *y1,
                                uint64_t *y2);

// Fits a homogeneous inertia-escalation model with `d` levels to `n`
// observations by EM. With `linear_rewards` nonzero the reward probabilities
// follow `logit(q_j) = b0 + b1 j`; otherwise each is free. `max_iter` and
// `min_var` of zero select the defaults (500 and 1e-6).
//
// # Safety
// `y1` and `y2` must hold `n` values and `out` must be valid for writes.
enum RrdphStatus rrdph_fit_iem(size_t d,
                               int32_t linear_rewards,
                               const uint64_t *y1,
                               const uint64_t *y2,
                               size_t n,
                               size_t max_iter,
                               double min_var,
                               struct RrdphFit **out);

// Releases a fit result. Null is ignored.
//
// # Safety
// `fit` must be null or a handle not yet freed.
void rrdph_fit_free(struct RrdphFit *fit);

// Number of estimated parameters.
//
// # Safety
// `fit` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_fit_param_count(const struct RrdphFit *fit, size_t *out);

// Name of parameter `index`; the string lives as long as the fit.
//
// # Safety
// `fit` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_fit_param_name(const struct RrdphFit *fit, size_t index, const char **out);

// Estimate of parameter `index`.
//
// # Safety
// `fit` must be a live handle and `out` valid for writes.
enum RrdphStatus rrdph_fit_param_value(const struct RrdphFit *fit, size_t index, double *out);

// Final log-likelihood, iteration count and convergence flag (1 or 0).
//
// # Safety
// `fit` must be a live handle and the outputs valid for writes.
enum RrdphStatus rrdph_fit_summary(const struct RrdphFit *fit,
                                   double *loglik,
                                   size_t *iterations,
                                   int32_t *converged);

#endif  /* RRDPH_H */
