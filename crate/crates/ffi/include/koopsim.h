#ifndef KOOPSIM_H
#define KOOPSIM_H

#include <stddef.h>
#include <stdint.h>

typedef enum KsStatus {
  KS_STATUS_OK = 0,
  KS_STATUS_NULL_POINTER = 1,
  KS_STATUS_INVALID_ARGUMENT = 2,
  KS_STATUS_DIMENSION = 3,
  KS_STATUS_IO = 4,
  KS_STATUS_FORMAT = 5,
  KS_STATUS_NUMERICAL = 6,
  KS_STATUS_PANIC = 7,
} KsStatus;

// Loaded model plus its current step-size and damping edits.
typedef struct KsModel KsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *ks_last_error(void);

// Reads a model file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum KsStatus ks_model_load(const char *path, struct KsModel **out);

// Fits a model to a snapshot file. `energy` in (0, 1] selects the rank by
// singular-value energy; 0 keeps every singular value above the noise floor.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum KsStatus ks_model_fit(const char *path, double energy, struct KsModel **out);

// Writes the model as loaded, without step-size or damping edits.
//
// # Safety
// `model` must come from this library; `path` must be nul-terminated.
enum KsStatus ks_model_save(const struct KsModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void ks_model_free(struct KsModel *model);

// Number of retained modes; 0 for null.
//
// # Safety
// `model` must be null or come from this library.
size_t ks_model_rank(const struct KsModel *model);

// Lifted state length `6n`; 0 for null.
//
// # Safety
// `model` must be null or come from this library.
size_t ks_model_state_dim(const struct KsModel *model);

// Current step size; NaN for null.
//
// # Safety
// `model` must be null or come from this library.
double ks_model_h(const struct KsModel *model);

// Step size of the training data.
//
// # Safety
// `model` must be null or come from this library.
double ks_model_training_h(const struct KsModel *model);

// Sets the step size. Edits are absolute: the loaded spectrum is rescaled
// and the current damping reapplied.
//
// # Safety
// `model` must come from this library.
enum KsStatus ks_model_set_h(struct KsModel *model, double h);

// Sets the per-step damping fraction `mu` in [0, 1), replacing any
// previous value.
//
// # Safety
// `model` must come from this library.
enum KsStatus ks_model_set_damping(struct KsModel *model, double mu);

// Copies the current eigenvalues into `re` and `im`, each of length `rank`.
//
// # Safety
// `re` and `im` must hold `len` doubles.
enum KsStatus ks_model_eigenvalues(const struct KsModel *model, double *re, double *im, size_t len);

// Advances `x` by `n` steps in one realified jump. `x` and `out` hold
// `len = 6n` doubles and may alias.
//
// # Safety
// `x` and `out` must hold `len` doubles.
enum KsStatus ks_model_step(const struct KsModel *model,
                            const double *x,
                            size_t len,
                            uint64_t n,
                            double *out);

// One step under a per-unit-mass force `f` of `force_len = len / 2`
// doubles, lifted at the current step size.
//
// # Safety
// `x` and `out` must hold `len` doubles, `f` must hold `force_len`.
enum KsStatus ks_model_step_forced(const struct KsModel *model,
                                   const double *x,
                                   size_t len,
                                   const double *f,
                                   size_t force_len,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KOOPSIM_H */
