#ifndef R2AG_H
#define R2AG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum R2agStatus {
  R2AG_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  R2AG_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  R2AG_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration or argument value.
   */
  R2AG_STATUS_CONFIG = 3,
  /**
   * Input files or data could not be read or were malformed.
   */
  R2AG_STATUS_DATA = 4,
  /**
   * The text-generation endpoint failed.
   */
  R2AG_STATUS_ENDPOINT = 5,
  /**
   * The library panicked; the handle involved should be discarded.
   */
  R2AG_STATUS_PANIC = 6,
} R2agStatus;

/**
 * Graph, embeddings and the derived group vectors.
 */
typedef struct R2agModel R2agModel;

/**
 * Retriever policy parameters.
 */
typedef struct R2agPolicy R2agPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *r2ag_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *r2ag_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void r2ag_string_free(char *s);

/**
 * Loads the concept and relation TSV files and the embedding file.
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum R2agStatus r2ag_model_load(const char *concepts,
                                const char *relations,
                                const char *embeddings,
                                struct R2agModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`r2ag_model_load`] not yet freed.
 */
void r2ag_model_free(struct R2agModel *model);

/**
 * Number of concepts in the graph; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t r2ag_model_concept_count(const struct R2agModel *model);

/**
 * Embedding dimension; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t r2ag_model_dim(const struct R2agModel *model);

/**
 * Fresh Glorot-initialized policy of dimension `d`.
 *
 * # Safety
 * `out` must be writable.
 */
enum R2agStatus r2ag_policy_init(size_t d, uint64_t seed, struct R2agPolicy **out);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum R2agStatus r2ag_policy_load(const char *path, struct R2agPolicy **out);

/**
 * Writes a JSON checkpoint.
 *
 * # Safety
 * `policy` must be a live handle; `path` a NUL-terminated string.
 */
enum R2agStatus r2ag_policy_save(const struct R2agPolicy *policy, const char *path);

/**
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void r2ag_policy_free(struct R2agPolicy *policy);

/**
 * Concept ids linked in `text`, as a JSON array of strings.
 *
 * # Safety
 * `model` must be a live handle, `text` a NUL-terminated string and `out`
 * writable.
 */
enum R2agStatus r2ag_link(const struct R2agModel *model, const char *text, char **out);

/**
 * Runs the retriever over `pre_admission` for `horizon` steps and returns
 * the reasoning paths as a JSON array of `{"origin", "steps"}` objects,
 * ordered by origin id. `sample = 0` picks the most probable action at
 * every step; otherwise actions are sampled with a generator seeded by
 * `seed`.
 *
 * # Safety
 * Handles must be live, `pre_admission` a NUL-terminated string and `out`
 * writable.
 */
enum R2agStatus r2ag_retrieve(const struct R2agModel *model,
                              const struct R2agPolicy *policy,
                              const char *pre_admission,
                              size_t horizon,
                              int32_t sample,
                              uint64_t seed,
                              char **out);

/**
 * Clinical-efficacy and NLG metrics of one generated text against its
 * reference, as a JSON object with `ngram`, `concept` (null when the
 * reference has no such items) and `nlg` fields.
 *
 * # Safety
 * `model` must be a live handle, the texts NUL-terminated strings and
 * `out` writable.
 */
enum R2agStatus r2ag_score(const struct R2agModel *model,
                           const char *generated,
                           const char *reference,
                           char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* R2AG_H */
