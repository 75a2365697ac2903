#ifndef LEXHAZ_H
#define LEXHAZ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum LexhazStatus {
  LEXHAZ_STATUS_OK = 0,
  LEXHAZ_STATUS_INVALID_ARGUMENT = 1,
  LEXHAZ_STATUS_DATA_ERROR = 2,
  LEXHAZ_STATUS_NON_CONVERGENCE = 3,
  LEXHAZ_STATUS_OUT_OF_DOMAIN = 4,
  LEXHAZ_STATUS_IO_ERROR = 5,
  LEXHAZ_STATUS_NUMERICAL_ERROR = 6,
  LEXHAZ_STATUS_PANIC = 7,
} LexhazStatus;

/*
 A fitted model.
 */
typedef struct LexhazModel LexhazModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until
 the next failing call on the same thread.
 */
const char *lexhaz_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *lexhaz_version(void);

/*
 Loads a model written by `lexhaz fit` (`model.json`).

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LexhazStatus lexhaz_model_load(const char *path, struct LexhazModel **out);

/*
 Parses a model from JSON text.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LexhazStatus lexhaz_model_from_json(const char *json, struct LexhazModel **out);

/*
 Fits a model from `n` records. `s_entry` may be null (all zero).
 `cause` is 0 (censored), 1 or 2. `config_toml` may be null for the
 default configuration.

 # Safety
 Array arguments must hold `n` elements; strings must be NUL-terminated.
 */
enum LexhazStatus lexhaz_model_fit(const double *u,
                                   const double *s_entry,
                                   const double *s_exit,
                                   const uint8_t *cause,
                                   uintptr_t n,
                                   const char *config_toml,
                                   struct LexhazModel **out);

/*
 Writes the model as JSON.

 # Safety
 `model` must come from this library; `path` must be NUL-terminated.
 */
enum LexhazStatus lexhaz_model_save(const struct LexhazModel *model, const char *path);

/*
 Basis sizes of one cause's surface.

 # Safety
 `model` must come from this library; `c_u`, `c_s` must be valid.
 */
enum LexhazStatus lexhaz_model_dims(const struct LexhazModel *model,
                                    int cause,
                                    uintptr_t *c_u,
                                    uintptr_t *c_s);

/*
 Cause-specific hazard at `n` points `(u[i], s[i])`.

 # Safety
 `u`, `s` and `out` must hold `n` elements.
 */
enum LexhazStatus lexhaz_hazard(const struct LexhazModel *model,
                                int cause,
                                const double *u,
                                const double *s,
                                uintptr_t n,
                                double *out);

/*
 Delta-method standard error of the log-hazard.

 # Safety
 As for [`lexhaz_hazard`].
 */
enum LexhazStatus lexhaz_log_hazard_se(const struct LexhazModel *model,
                                       int cause,
                                       const double *u,
                                       const double *s,
                                       uintptr_t n,
                                       double *out);

/*
 Cumulative cause-specific hazard from `s = 0`.

 # Safety
 As for [`lexhaz_hazard`].
 */
enum LexhazStatus lexhaz_cumulative_hazard(const struct LexhazModel *model,
                                           int cause,
                                           const double *u,
                                           const double *s,
                                           uintptr_t n,
                                           double *out);

/*
 Overall survival.

 # Safety
 As for [`lexhaz_hazard`].
 */
enum LexhazStatus lexhaz_survival(const struct LexhazModel *model,
                                  const double *u,
                                  const double *s,
                                  uintptr_t n,
                                  double *out);

/*
 Cumulative incidence of one cause.

 # Safety
 As for [`lexhaz_hazard`].
 */
enum LexhazStatus lexhaz_cif(const struct LexhazModel *model,
                             int cause,
                             const double *u,
                             const double *s,
                             uintptr_t n,
                             double *out);

/*
 Monte-Carlo standard error of the cumulative incidence.

 # Safety
 As for [`lexhaz_hazard`].
 */
enum LexhazStatus lexhaz_cif_se(const struct LexhazModel *model,
                                int cause,
                                const double *u,
                                const double *s,
                                uintptr_t n,
                                uintptr_t n_draws,
                                uint64_t seed,
                                double *out);

/*
 Releases a model; null is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void lexhaz_model_free(struct LexhazModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEXHAZ_H */
