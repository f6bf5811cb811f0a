/* C interface for the coupled recurrent network library.
 *
 * Maintained by hand to match crates/ffi/src/lib.rs; keep the two in
 * sync when the surface changes.
 *
 * Every entry point returns a CrnStatus. On anything but CRN_STATUS_OK,
 * crn_last_error() holds a message for the calling thread until its next
 * library call. Panics inside the library are caught and reported as
 * CRN_STATUS_PANIC.
 */

#ifndef CRN_H
#define CRN_H

#include <stdint.h>
#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum CrnStatus {
  CRN_STATUS_OK = 0,
  /* A required pointer argument was null. */
  CRN_STATUS_NULL_ARGUMENT = 1,
  /* A string argument was not valid UTF-8. */
  CRN_STATUS_INVALID_UTF8 = 2,
  /* The config failed to parse or validate. */
  CRN_STATUS_INVALID_CONFIG = 3,
  /* Filesystem trouble under the run directory. */
  CRN_STATUS_IO = 4,
  /* Any other library error; see crn_last_error. */
  CRN_STATUS_RUNTIME = 5,
  /* A panic was caught at the boundary. */
  CRN_STATUS_PANIC = 6,
} CrnStatus;

/* kind values in CrnMetrics. */
#define CRN_METRICS_CLASSIFICATION 0u
#define CRN_METRICS_REGRESSION 1u

/* Flat validation summary. `kind` selects which fields are meaningful;
 * the others are zero. */
typedef struct CrnMetrics {
  /* CRN_METRICS_CLASSIFICATION or CRN_METRICS_REGRESSION. */
  uint32_t kind;
  /* Classification: fraction of validation samples classified correctly. */
  double accuracy;
  /* Regression: final-step mean heatmap MSE. */
  double heatmap_mse;
  /* Regression: final-step mean limb-field MSE. */
  double field_mse;
  /* Regression: mean distance (px) from predicted to true joint peaks. */
  double peak_error_px;
  /* Validation samples evaluated. */
  uint64_t samples;
} CrnMetrics;

/* Opaque parsed experiment configuration. */
typedef struct CrnConfig CrnConfig;

/* Library version as a static string. */
const char *crn_version(void);

/* Message for the most recent failure on this thread. The pointer stays
 * valid until the next library call from the same thread. */
const char *crn_last_error(void);

/* Parse a TOML experiment config from memory. */
CrnStatus crn_config_parse(const char *toml_text, CrnConfig **out);

/* Read and parse a TOML experiment config from a file. */
CrnStatus crn_config_load(const char *path, CrnConfig **out);

/* Release a config handle. Null is a no-op. */
void crn_config_free(CrnConfig *cfg);

/* Train one run into out_dir (created if needed): writes the config
 * copy, a metrics log, and a checkpoint, then reports the final
 * validation metrics and the wall time spent. `metrics` and
 * `wall_seconds` may be null; `metrics` is only written when the run
 * trained for at least one epoch. */
CrnStatus crn_train(const CrnConfig *cfg,
                    uint64_t seed,
                    const char *out_dir,
                    CrnMetrics *metrics,
                    double *wall_seconds);

/* Evaluate the checkpoint inside a run directory against its own
 * config. */
CrnStatus crn_eval(const char *run_dir, uint64_t seed, CrnMetrics *metrics);

/* Finite-difference check of every parameter gradient. On success the
 * largest relative error and the number of scalars checked are written.
 * Exceeding `tolerance` is reported as CRN_STATUS_RUNTIME with the
 * offending parameter in the error message; pass an infinite tolerance
 * to always retrieve the error value. */
CrnStatus crn_gradcheck(const CrnConfig *cfg,
                        uint64_t seed,
                        double tolerance,
                        double *max_rel_err,
                        uint64_t *scalars_checked);

/* Export export_n training samples into out_dir in the checkpoint tensor
 * format, one sampleNNNN.{manifest,bin} pair per sample. */
CrnStatus crn_datagen(const CrnConfig *cfg,
                      uint64_t seed,
                      size_t export_n,
                      const char *out_dir);

#ifdef __cplusplus
}
#endif

#endif /* CRN_H */
