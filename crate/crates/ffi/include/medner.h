#ifndef MEDNER_H
#define MEDNER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MednerStatus {
  MEDNER_STATUS_OK = 0,
  MEDNER_STATUS_NULL_POINTER = 1,
  MEDNER_STATUS_INVALID_ARGUMENT = 2,
  MEDNER_STATUS_IO = 3,
  MEDNER_STATUS_PARSE = 4,
  MEDNER_STATUS_CHECKPOINT = 5,
  MEDNER_STATUS_NUMERIC = 6,
  MEDNER_STATUS_PANIC = 7,
} MednerStatus;

// In-memory annotated corpus.
typedef struct MednerCorpus MednerCorpus;

// Loaded model with a trained head.
typedef struct MednerModel MednerModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *medner_last_error(void);

// # Safety
// `s` must come from this library and not have been freed.
void medner_string_free(char *s);

// Harmonic mean of precision and recall.
//
// # Safety
// `out` must be a valid pointer to a double.
enum MednerStatus medner_f1_from_pr(double precision, double recall, double *out);

// Log partition function of a linear-chain CRF. `emissions` is row-major
// `n x k`, `transitions` is `k x k` indexed `[from][to]`.
//
// # Safety
// Every pointer must reference the stated number of doubles.
enum MednerStatus medner_crf_log_partition(const double *emissions,
                                           size_t n,
                                           size_t k,
                                           const double *transitions,
                                           const double *start,
                                           const double *stop,
                                           double *out);

// Best tag sequence; ties resolve to the lexicographically smallest.
// `tags_out` receives `n` entries.
//
// # Safety
// As for [`medner_crf_log_partition`]; `tags_out` must hold `n` entries.
enum MednerStatus medner_crf_viterbi(const double *emissions,
                                     size_t n,
                                     size_t k,
                                     const double *transitions,
                                     const double *start,
                                     const double *stop,
                                     size_t *tags_out,
                                     double *score_out);

// Generates a synthetic corpus.
//
// # Safety
// `out` must be a valid pointer; it receives a handle owned by the caller.
enum MednerStatus medner_corpus_generate(size_t size, uint64_t seed, struct MednerCorpus **out);

// Number of sentences; 0 for a NULL handle.
//
// # Safety
// `corpus` must be NULL or a live handle.
size_t medner_corpus_len(const struct MednerCorpus *corpus);

// Writes the tag file and, when `annotations_path` is not NULL, the
// annotation file.
//
// # Safety
// `corpus` must be a live handle and the paths NUL-terminated strings.
enum MednerStatus medner_corpus_save(const struct MednerCorpus *corpus,
                                     const char *tags_path,
                                     const char *annotations_path);

// # Safety
// `corpus` must be NULL or a handle not yet freed.
void medner_corpus_free(struct MednerCorpus *corpus);

// Loads a trained checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MednerStatus medner_model_load(const char *path, struct MednerModel **out);

// Tags one line of whitespace-tokenized text. `json_out` receives a JSON
// object with tokens, tags, spans and relations; free it with
// [`medner_string_free`].
//
// # Safety
// `model` must be a live handle, `text` a NUL-terminated string and
// `json_out` a valid pointer.
enum MednerStatus medner_model_predict_json(const struct MednerModel *model,
                                            const char *text,
                                            char **json_out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void medner_model_free(struct MednerModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDNER_H */
