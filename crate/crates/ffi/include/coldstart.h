#ifndef COLDSTART_H
#define COLDSTART_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_UTF8 = 2,
  CS_STATUS_INVALID_ARGUMENT = 3,
  CS_STATUS_CONFIG = 4,
  CS_STATUS_IO = 5,
  CS_STATUS_PARSE = 6,
  CS_STATUS_MISSING_ARTIFACT = 7,
  CS_STATUS_FINGERPRINT_MISMATCH = 8,
  CS_STATUS_CHECKPOINT = 9,
  CS_STATUS_DIVERGED = 10,
  CS_STATUS_NOT_FOUND = 11,
  CS_STATUS_BUFFER_TOO_SMALL = 12,
  CS_STATUS_PANIC = 13,
} CsStatus;

/**
 * Pipeline stages for [`cs_run_stage`].
 */
typedef enum CsStage {
  CS_STAGE_INGEST = 0,
  CS_STAGE_SPLIT = 1,
  CS_STAGE_GROUND_TRUTH = 2,
  CS_STAGE_PRETRAIN = 3,
  CS_STAGE_FINETUNE = 4,
  CS_STAGE_EVAL = 5,
  CS_STAGE_BENCH = 6,
  CS_STAGE_ABLATION = 7,
  CS_STAGE_REPORT = 8,
} CsStage;

/**
 * Fused embeddings of cold users and all items from a fine-tuned run.
 */
typedef struct CsModel CsModel;

/**
 * A config bound to an artifact directory.
 */
typedef struct CsRun CsRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated)
 * and stores the full length, without the NUL, in `len_out`. With a null
 * or short buffer only the length is reported.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null; `len_out` may be null.
 */
enum CsStatus cs_last_error(char *buf, size_t cap, size_t *len_out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cs_version(void);

/**
 * Opens a run. `config_path` may be null for the defaults. `overrides` is
 * null or newline-separated `key=value` pairs.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum CsStatus cs_run_new(const char *config_path,
                         const char *out_dir,
                         const char *overrides,
                         struct CsRun **out);

/**
 * # Safety
 * `run` must come from [`cs_run_new`] and not be used afterwards.
 */
void cs_run_free(struct CsRun *run);

/**
 * Runs one stage, reading and writing artifacts in the run directory.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum CsStatus cs_run_stage(const struct CsRun *run, enum CsStage stage);

/**
 * Every stage from ingest to report.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum CsStatus cs_run_all(const struct CsRun *run);

/**
 * Reads one metric (e.g. `recall@20`, `intrinsic_cosine_Rg`) from the run's
 * evaluation artifact.
 *
 * # Safety
 * `run` must be a live handle, `name` NUL-terminated, outputs writable or null.
 */
enum CsStatus cs_run_metric(const struct CsRun *run,
                            const char *name,
                            double *value,
                            double *std_err);

/**
 * Loads the fine-tuned model of a run and embeds its cold users and all
 * items.
 *
 * # Safety
 * `run` must be a live handle; `out` must be writable.
 */
enum CsStatus cs_model_load(const struct CsRun *run, struct CsModel **out);

/**
 * # Safety
 * `model` must come from [`cs_model_load`] and not be used afterwards.
 */
void cs_model_free(struct CsModel *model);

/**
 * Embedding size, item count and number of embedded users.
 *
 * # Safety
 * `model` must be a live handle; outputs writable or null.
 */
enum CsStatus cs_model_shape(const struct CsModel *model,
                             size_t *dim,
                             size_t *num_items,
                             size_t *num_users);

/**
 * Inner-product relevance of a cold user to an item.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum CsStatus cs_model_score(const struct CsModel *model,
                             uint32_t user,
                             uint32_t item,
                             double *out);

/**
 * Writes the user's top `k` items (training items excluded, ties by id)
 * into `items` and their count into `written`.
 *
 * # Safety
 * `model` must be a live handle, `items` valid for `k` entries, `written` writable.
 */
enum CsStatus cs_model_top_k(const struct CsModel *model,
                             uint32_t user,
                             size_t k,
                             uint32_t *items,
                             size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLDSTART_H */
