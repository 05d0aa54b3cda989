#ifndef PSADKIT_H
#define PSADKIT_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PSADKIT_OK 0

#define PSADKIT_ERR_MISSING_FILE 1

#define PSADKIT_ERR_SCHEMA_VIOLATION 2

#define PSADKIT_ERR_DUPLICATE_SAMPLE 3

#define PSADKIT_ERR_CORPUS_TOO_SMALL 4

#define PSADKIT_ERR_SIGNAL_TOO_SHORT 5

#define PSADKIT_ERR_EMPTY_TRANSCRIPT 6

#define PSADKIT_ERR_SCALER_NOT_FITTED 7

#define PSADKIT_ERR_TOO_FEW_POINTS 8

#define PSADKIT_ERR_DEGENERATE_CLUSTERING 9

#define PSADKIT_ERR_ALL_ZERO_DIFFERENCES 10

#define PSADKIT_ERR_NO_PAIRED_PARTICIPANTS 11

#define PSADKIT_ERR_SHAPE_MISMATCH 12

#define PSADKIT_ERR_STALE_CACHE 13

#define PSADKIT_ERR_EMPTY_DATASET 14

#define PSADKIT_ERR_CONFIG_INVALID 15

#define PSADKIT_ERR_VERSION_MISMATCH 16

#define PSADKIT_ERR_CORRUPT_FILE 17

#define PSADKIT_ERR_EMPTY_SUBSET 18

#define PSADKIT_ERR_MODEL_NOT_TRAINED 19

#define PSADKIT_ERR_EMPTY_PREDICTIONS 20

#define PSADKIT_ERR_EMPTY_GRID 21

#define PSADKIT_ERR_IO 22

#define PSADKIT_ERR_AUDIO 23

/**
 * A required pointer argument was null.
 */
#define PSADKIT_ERR_NULL_ARGUMENT -1

/**
 * A string argument was not valid UTF-8.
 */
#define PSADKIT_ERR_INVALID_UTF8 -2

/**
 * An enum-like integer argument was out of range.
 */
#define PSADKIT_ERR_INVALID_ARGUMENT -3

/**
 * The library panicked; this is a bug.
 */
#define PSADKIT_ERR_PANIC -99

#define PSADKIT_CONTEXT_NON_EVALUATIVE 0

#define PSADKIT_CONTEXT_EVALUATIVE 1

/**
 * Loaded corpus with its extracted features.
 */
typedef struct PsadkitCorpus PsadkitCorpus;

/**
 * Trained detector.
 */
typedef struct PsadkitModel PsadkitModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next psadkit call on the same thread.
 */
const char *psadkit_last_error(void);

/**
 * Library version as a static string.
 */
const char *psadkit_version(void);

/**
 * Load a corpus manifest and extract features with the built-in lexicons.
 *
 * # Safety
 * `manifest` must be a valid C string; `out` must be writable.
 */
int psadkit_corpus_load(const char *manifest, struct PsadkitCorpus **out);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `corpus` must be null or a live handle.
 */
size_t psadkit_corpus_len(const struct PsadkitCorpus *corpus);

/**
 * # Safety
 * `corpus` must be null or a handle not yet freed.
 */
void psadkit_corpus_free(struct PsadkitCorpus *corpus);

/**
 * Train a detector on the whole corpus. `config_json` may be null for the
 * default configuration.
 *
 * # Safety
 * `corpus` must be a live handle, `config_json` null or a valid C string,
 * `out` writable.
 */
int psadkit_model_train(const struct PsadkitCorpus *corpus,
                        const char *config_json,
                        struct PsadkitModel **out);

/**
 * # Safety
 * `model` must be a live handle and `dir` a valid C string.
 */
int psadkit_model_save(const struct PsadkitModel *model, const char *dir);

/**
 * # Safety
 * `dir` must be a valid C string and `out` writable.
 */
int psadkit_model_load(const char *dir, struct PsadkitModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void psadkit_model_free(struct PsadkitModel *model);

/**
 * Score one sample.
 *
 * `features` points to 17 raw feature values in the canonical order,
 * `scales` to the four trait scores (DASS, SIAS, BFNE, DERS). On success
 * `probability` receives the positive-class probability and `positive`
 * receives 1 or 0.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
int psadkit_model_predict(const struct PsadkitModel *model,
                          const double *features,
                          int context,
                          const double *scales,
                          double *probability,
                          int *positive);

/**
 * Exact or normal-approximation two-sided Wilcoxon signed-rank p-value for
 * `n` paired observations `(x[i], y[i])`.
 *
 * # Safety
 * `x` and `y` must be valid for `n` reads, `p_value` writable.
 */
int psadkit_wilcoxon(const double *x, const double *y, size_t n, double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSADKIT_H */
