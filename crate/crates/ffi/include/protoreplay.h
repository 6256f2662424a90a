#ifndef PROTOREPLAY_H
#define PROTOREPLAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum PrStatus {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_POINTER = 1,
  PR_STATUS_INVALID_UTF8 = 2,
  PR_STATUS_CONFIG = 3,
  PR_STATUS_DATA = 4,
  PR_STATUS_SHAPE = 5,
  PR_STATUS_IO = 6,
  PR_STATUS_CHECKPOINT = 7,
  PR_STATUS_RUNTIME = 8,
  PR_STATUS_PANIC = 9,
} PrStatus;

/**
 * Parsed run configuration.
 */
typedef struct PrConfig PrConfig;

/**
 * A learner built from a configuration, trained one batch at a time.
 */
typedef struct PrLearner PrLearner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the next
 * failing call on the same thread; do not free.
 */
const char *pr_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void pr_string_free(char *s);

/**
 * Parses a TOML configuration into `*out`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum PrStatus pr_config_from_toml(const char *toml, struct PrConfig **out);

/**
 * Loads a named built-in configuration into `*out`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum PrStatus pr_config_preset(const char *name, struct PrConfig **out);

/**
 * Applies one `key=value` override, with the value in TOML syntax.
 *
 * # Safety
 * `cfg` must be a live handle; `assignment` a NUL-terminated string.
 */
enum PrStatus pr_config_set(struct PrConfig *cfg, const char *assignment);

/**
 * Writes the configuration as TOML to `*out`; free with [`pr_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PrStatus pr_config_to_toml(const struct PrConfig *cfg, char **out);

/**
 * Writes the short configuration hash to `*out`; free with [`pr_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PrStatus pr_config_hash(const struct PrConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void pr_config_free(struct PrConfig *cfg);

/**
 * Builds a learner for the configured method, network and image shape.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum PrStatus pr_learner_new(const struct PrConfig *cfg, uint64_t seed, struct PrLearner **out);

/**
 * One online step on `n` samples of the configured shape, row-major
 * `[n, channels, height, width]`. The total loss goes to `*loss` when non-null.
 *
 * # Safety
 * `images` must hold `n * channels * height * width` floats and `labels` `n` values.
 */
enum PrStatus pr_learner_train_batch(struct PrLearner *learner,
                                     const float *images,
                                     const uint32_t *labels,
                                     uintptr_t n,
                                     double *loss);

/**
 * Predicts a class among those seen so far for each of `n` samples into `out_labels`.
 *
 * # Safety
 * `images` must hold `n` samples; `out_labels` must have room for `n` values.
 */
enum PrStatus pr_learner_predict(const struct PrLearner *learner,
                                 const float *images,
                                 uintptr_t n,
                                 uint32_t *out_labels);

/**
 * Number of training steps taken so far.
 *
 * # Safety
 * `learner` must be a live handle; `out` must be writable.
 */
enum PrStatus pr_learner_steps(const struct PrLearner *learner, uint64_t *out);

/**
 * # Safety
 * `learner` must be null or a handle not yet freed.
 */
void pr_learner_free(struct PrLearner *learner);

/**
 * Average forgetting of a `phases x phases` row-major accuracy matrix in percent;
 * entries above the diagonal are ignored. Fails for fewer than two phases.
 *
 * # Safety
 * `matrix` must hold `phases * phases` values; `out` must be writable.
 */
enum PrStatus pr_forgetting(const double *matrix, uintptr_t phases, double *out);

/**
 * Runs every configured seed and writes the run records as a JSON array to
 * `*out_json`; free with [`pr_string_free`]. `output_dir` may be null to keep
 * the configured directory.
 *
 * # Safety
 * `cfg` must be a live handle; `output_dir` null or NUL-terminated; `out_json` writable.
 */
enum PrStatus pr_run(const struct PrConfig *cfg, const char *output_dir, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROTOREPLAY_H */
