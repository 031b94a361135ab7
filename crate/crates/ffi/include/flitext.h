#ifndef FLITEXT_H
#define FLITEXT_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Which of the two configured networks a cost query refers to.
typedef enum FlitextModelKind {
  FLITEXT_MODEL_KIND_INSPIRER = 0,
  FLITEXT_MODEL_KIND_TARGET = 1,
} FlitextModelKind;

// Result of every fallible call. Zero is success.
typedef enum FlitextStatus {
  FLITEXT_STATUS_OK = 0,
  FLITEXT_STATUS_NULL_ARGUMENT = 1,
  FLITEXT_STATUS_INVALID_UTF8 = 2,
  FLITEXT_STATUS_BUFFER_TOO_SMALL = 3,
  FLITEXT_STATUS_DIMENSION = 10,
  FLITEXT_STATUS_PRECONDITION = 11,
  FLITEXT_STATUS_NUMERIC = 12,
  FLITEXT_STATUS_USAGE = 13,
  FLITEXT_STATUS_CONFIG = 14,
  FLITEXT_STATUS_DATA = 15,
  FLITEXT_STATUS_DIVERGENCE = 16,
  FLITEXT_STATUS_FORMAT = 17,
  FLITEXT_STATUS_IO = 18,
  FLITEXT_STATUS_PANIC = 99,
} FlitextStatus;

// A loaded checkpoint with its vocabulary. Opaque to C.
typedef struct FlitextModel FlitextModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Inference parameter count of one network declared in a run config
// (TOML text; null selects the reference config). Sizes are taken as
// declared, including the vocabulary size.
//
// # Safety
// `config_toml` must be null or nul-terminated; `out` must be writable.
enum FlitextStatus flitext_count_params(const char *config_toml,
                                        enum FlitextModelKind kind,
                                        uint64_t *out);

// Headline FLOPs of one forward pass over a sequence of `seq_len` tokens,
// counting a multiply-add as two operations.
//
// # Safety
// `config_toml` must be null or nul-terminated; `out` must be writable.
enum FlitextStatus flitext_estimate_flops(const char *config_toml,
                                          enum FlitextModelKind kind,
                                          size_t seq_len,
                                          uint64_t *out);

// Parses an alignment such as `{0,1}-{2,5}` and checks it against a model
// with `layers` transformer layers and the given filter sizes. Pairs are
// written as (layer, filter size) into `out_pairs`, two entries per pair;
// `*out_len` receives the pair count. When `pair_capacity` is too small
// only the count is written.
//
// # Safety
// `spec_text` must be nul-terminated, `filter_sizes` valid for `n_sizes`
// reads, `out_pairs` valid for `2 * pair_capacity` writes, `out_len` writable.
enum FlitextStatus flitext_alignment_parse(const char *spec_text,
                                           size_t layers,
                                           const size_t *filter_sizes,
                                           size_t n_sizes,
                                           size_t *out_pairs,
                                           size_t pair_capacity,
                                           size_t *out_len);

// Loads a checkpoint. `vocab_path` may be null, in which case the
// vocabulary file next to the checkpoint is used. On success `*out` owns a
// handle that must be released with `flitext_model_free`.
//
// # Safety
// String arguments must be null or nul-terminated; `out` must be writable.
enum FlitextStatus flitext_model_load(const char *ckpt_path,
                                      const char *vocab_path,
                                      struct FlitextModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from `flitext_model_load` and not be freed twice.
void flitext_model_free(struct FlitextModel *model);

// Number of output classes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t flitext_model_num_classes(const struct FlitextModel *model);

// Class probabilities for one text. `*out_len` always receives the class
// count; when `capacity` is smaller nothing else is written and
// `FLITEXT_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `model` must be a live handle, `input` nul-terminated, `out_probs` valid
// for `capacity` writes and `out_len` writable.
enum FlitextStatus flitext_model_predict(const struct FlitextModel *model,
                                         const char *input,
                                         double *out_probs,
                                         size_t capacity,
                                         size_t *out_len);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into the library on this thread.
const char *flitext_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLITEXT_H */
