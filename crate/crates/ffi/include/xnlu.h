#ifndef XNLU_H
#define XNLU_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum XnluStatus {
  XNLU_STATUS_OK = 0,
  XNLU_STATUS_NULL_ARGUMENT = 1,
  XNLU_STATUS_INVALID_UTF8 = 2,
  XNLU_STATUS_INVALID_INPUT = 3,
  XNLU_STATUS_CHECKPOINT = 4,
  XNLU_STATUS_IO = 5,
  XNLU_STATUS_BUFFER_TOO_SMALL = 6,
  XNLU_STATUS_NO_ATTENTION = 7,
  XNLU_STATUS_OUT_OF_RANGE = 8,
  XNLU_STATUS_INTERNAL = 9,
  XNLU_STATUS_PANIC = 10,
} XnluStatus;

// A loaded checkpoint.
typedef struct XnluModel XnluModel;

// Prediction and attention for one utterance.
typedef struct XnluPrediction XnluPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *xnlu_version(void);

// Message for the most recent failure on this thread. Empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *xnlu_last_error(void);

// Loads a checkpoint file into a new model handle.
enum XnluStatus xnlu_model_load(const char *path, struct XnluModel **out);

// Releases a model. Null is ignored.
void xnlu_model_free(struct XnluModel *model);

// Number of slot types, `O` included.
enum XnluStatus xnlu_model_num_types(const struct XnluModel *model, size_t *out);

// Name of slot type `index`.
enum XnluStatus xnlu_model_type_name(const struct XnluModel *model,
                                     size_t index,
                                     char *buf,
                                     size_t capacity,
                                     size_t *needed);

// Runs the model on a whitespace-tokenized utterance.
enum XnluStatus xnlu_predict(const struct XnluModel *model,
                             const char *utterance,
                             struct XnluPrediction **out);

// Releases a prediction. Null is ignored.
void xnlu_prediction_free(struct XnluPrediction *prediction);

// Number of tokens scored, after truncation to the model's maximum length.
enum XnluStatus xnlu_prediction_len(const struct XnluPrediction *prediction, size_t *out);

// Predicted intent name.
enum XnluStatus xnlu_prediction_intent(const struct XnluPrediction *prediction,
                                       char *buf,
                                       size_t capacity,
                                       size_t *needed);

// Predicted BIO tag of token `index`.
enum XnluStatus xnlu_prediction_tag(const struct XnluPrediction *prediction,
                                    size_t index,
                                    char *buf,
                                    size_t capacity,
                                    size_t *needed);

// Copies the `len x len` row-major attention of slot type `type_index`.
// Row `i`, column `j` is the weight query token `i` puts on token `j`.
enum XnluStatus xnlu_prediction_attention(const struct XnluPrediction *prediction,
                                          size_t type_index,
                                          double *buf,
                                          size_t capacity,
                                          size_t *needed);

// Base-2 entropy of the largest `k_percent` percent of one type's
// attention weights, the matrix taken as a single list.
enum XnluStatus xnlu_prediction_entropy(const struct XnluPrediction *prediction,
                                        size_t type_index,
                                        double k_percent,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XNLU_H */
