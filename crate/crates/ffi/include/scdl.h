#ifndef SCDL_H
#define SCDL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum ScdlStatus {
  SCDL_STATUS_OK = 0,
  SCDL_STATUS_NULL_POINTER = 1,
  SCDL_STATUS_INVALID_ARGUMENT = 2,
  SCDL_STATUS_PARSE = 3,
  SCDL_STATUS_VALIDATION = 4,
  SCDL_STATUS_DIMENSION_MISMATCH = 5,
  SCDL_STATUS_FORMAT = 6,
  SCDL_STATUS_IO = 7,
  SCDL_STATUS_DIVERGENCE = 8,
  SCDL_STATUS_ENUMERATION_TOO_LARGE = 9,
  SCDL_STATUS_DEGENERATE_MARGIN = 10,
  SCDL_STATUS_BUFFER_TOO_SMALL = 11,
  SCDL_STATUS_INVALID_UTF8 = 12,
  SCDL_STATUS_PANIC = 255,
} ScdlStatus;

// Opposite-label sampling rule.
typedef enum ScdlOppositeMode {
  // Outside the true label's colony.
  SCDL_OPPOSITE_MODE_SD = 0,
  // Any class other than the true label.
  SCDL_OPPOSITE_MODE_RT = 1,
} ScdlOppositeMode;

typedef struct ScdlModel ScdlModel;

typedef struct ScdlPrior ScdlPrior;

typedef struct ScdlRng ScdlRng;

typedef struct ScdlTransition ScdlTransition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *scdl_last_error_message(void);

// Parses taxonomy text.
//
// # Safety
// `text` must be a nul-terminated string and `out` a valid pointer.
enum ScdlStatus scdl_prior_parse(const char *text, struct ScdlPrior **out);

// Loads a builtin prior: `fashion-mnist`, `cifar10`, `cifar100-sd-v1` or `cifar100-sd-v2`.
//
// # Safety
// `name` must be a nul-terminated string and `out` a valid pointer.
enum ScdlStatus scdl_prior_builtin(const char *name, struct ScdlPrior **out);

// # Safety
// `prior` must come from this library and not be used afterwards.
void scdl_prior_free(struct ScdlPrior *prior);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `prior` must be null or a live handle.
size_t scdl_prior_class_count(const struct ScdlPrior *prior);

// Number of colonies, or 0 for a null handle.
//
// # Safety
// `prior` must be null or a live handle.
size_t scdl_prior_colony_count(const struct ScdlPrior *prior);

// Index of the colony holding `class`.
//
// # Safety
// `prior` must be a live handle and `out_colony` a valid pointer.
enum ScdlStatus scdl_prior_colony_of(const struct ScdlPrior *prior,
                                     size_t class_,
                                     size_t *out_colony);

// Classes outside the colony of `class`, ascending.
//
// # Safety
// `buf` must hold `cap` elements (or be null with `cap == 0`); `out_len` must be valid.
enum ScdlStatus scdl_prior_opposite_pool(const struct ScdlPrior *prior,
                                         size_t class_,
                                         size_t *buf,
                                         size_t cap,
                                         size_t *out_len);

struct ScdlRng *scdl_rng_new(uint64_t seed);

// # Safety
// `rng` must come from this library and not be used afterwards.
void scdl_rng_free(struct ScdlRng *rng);

// Draws one opposite label for `class`.
//
// # Safety
// `prior` and `rng` must be live handles and `out_label` a valid pointer.
enum ScdlStatus scdl_sample_opposite(const struct ScdlPrior *prior,
                                     struct ScdlRng *rng,
                                     size_t class_,
                                     enum ScdlOppositeMode mode,
                                     size_t *out_label);

// Composite loss of one sample from its logits, and optionally its logit gradient.
//
// `opposite` < 0 means no opposite label. `out_grad` may be null; otherwise it
// must hold `class_count` values.
//
// # Safety
// `logits` must hold `class_count` values and `out_loss` must be valid.
enum ScdlStatus scdl_composite_loss(const double *logits,
                                    size_t class_count,
                                    size_t label,
                                    int64_t opposite,
                                    double alpha1,
                                    double alpha2,
                                    double prob_clamp,
                                    double *out_loss,
                                    double *out_grad);

// # Safety
// `prior` must be a live handle and `out` a valid pointer.
enum ScdlStatus scdl_transition_new(const struct ScdlPrior *prior, struct ScdlTransition **out);

// # Safety
// `t` must come from this library and not be used afterwards.
void scdl_transition_free(struct ScdlTransition *t);

// Row-major `c × c` entries, `P(opposite = j | label = i)` at `i * c + j`.
//
// # Safety
// `buf` must hold `cap` values; `out_len` must be valid.
enum ScdlStatus scdl_transition_entries(const struct ScdlTransition *t,
                                        double *buf,
                                        size_t cap,
                                        size_t *out_len);

// Opposite-label distribution induced by the class posterior `posterior`.
//
// # Safety
// `posterior` and `out` must each hold `class_count` values.
enum ScdlStatus scdl_induced_opposite(const struct ScdlTransition *t,
                                      const double *posterior,
                                      size_t class_count,
                                      double *out);

// Exhaustive check on a discrete instance. `cond` is row-major, one row of
// `class_count` posteriors per support point.
//
// # Safety
// `point_mass` must hold `support` values, `cond` `support * class_count`
// values; the output pointers must be valid.
enum ScdlStatus scdl_verify_minimizer_agreement(const struct ScdlPrior *prior,
                                                const double *point_mass,
                                                size_t support,
                                                const double *cond,
                                                size_t class_count,
                                                double alpha1,
                                                double alpha2,
                                                bool *out_agreement,
                                                double *out_risk_gap);

// He-initialized ReLU MLP.
//
// # Safety
// `hidden` must hold `hidden_len` widths and `out` must be valid.
enum ScdlStatus scdl_model_new(size_t input_dim,
                               const size_t *hidden,
                               size_t hidden_len,
                               size_t class_count,
                               uint64_t seed,
                               struct ScdlModel **out);

// Reads a checkpoint produced by `scdl_model_save` or the Rust API.
//
// # Safety
// `bytes` must hold `len` bytes and `out` must be valid.
enum ScdlStatus scdl_model_load(const uint8_t *bytes, size_t len, struct ScdlModel **out);

// Serializes the model into `buf`.
//
// # Safety
// `buf` must hold `cap` bytes (or be null with `cap == 0`); `out_len` must be valid.
enum ScdlStatus scdl_model_save(const struct ScdlModel *model,
                                uint8_t *buf,
                                size_t cap,
                                size_t *out_len);

// # Safety
// `model` must come from this library and not be used afterwards.
void scdl_model_free(struct ScdlModel *model);

// Class probabilities and predicted label for one feature vector.
//
// # Safety
// `features` must hold `dim` values; `out_probs` must be null or hold the
// model's class count; `out_label` must be valid.
enum ScdlStatus scdl_model_predict(const struct ScdlModel *model,
                                   const double *features,
                                   size_t dim,
                                   double *out_probs,
                                   size_t *out_label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCDL_H */
