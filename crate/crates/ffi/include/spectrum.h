#ifndef SPECTRUM_H
#define SPECTRUM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum SpectrumStatus {
  SPECTRUM_STATUS_OK = 0,
  SPECTRUM_STATUS_NULL_POINTER = 1,
  SPECTRUM_STATUS_INVALID_UTF8 = 2,
  SPECTRUM_STATUS_IO = 3,
  SPECTRUM_STATUS_FORMAT = 4,
  SPECTRUM_STATUS_SHAPE = 5,
  SPECTRUM_STATUS_CHECKPOINT = 6,
  SPECTRUM_STATUS_INVALID_ARGUMENT = 7,
  SPECTRUM_STATUS_PANIC = 8,
} SpectrumStatus;

/**
 * One `tokens × width` feature matrix.
 */
typedef struct SpectrumFeature SpectrumFeature;

/**
 * A loaded checkpoint.
 */
typedef struct SpectrumModel SpectrumModel;

/**
 * Corpus-level scores; fractions except `cider` (×100) and `sum`.
 */
typedef struct SpectrumReport {
  double bleu1;
  double bleu2;
  double bleu3;
  double bleu4;
  double meteor;
  double rouge_l;
  double cider;
  double sum;
  double acc_sw;
  double acc_c;
  double bfs;
  double cfs;
  size_t items;
} SpectrumReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *spectrum_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *spectrum_version(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void spectrum_string_free(char *s);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum SpectrumStatus spectrum_model_load(const char *dir, struct SpectrumModel **out);

/**
 * # Safety
 * `m` must come from [`spectrum_model_load`] and not be freed twice.
 */
void spectrum_model_free(struct SpectrumModel *m);

/**
 * Feature width the model expects.
 *
 * # Safety
 * `m` must be a live model handle or NULL (returns 0).
 */
size_t spectrum_model_feature_width(const struct SpectrumModel *m);

/**
 * Beam-searches a caption for one video. `video_embedding` (length
 * `embedding_len`) enables caption retrieval and may be NULL. The caption
 * is written to `*out` and must be released with [`spectrum_string_free`].
 *
 * # Safety
 * Handles must be live; `video_embedding` must point to `embedding_len`
 * floats when non-NULL; `out` must be writable.
 */
enum SpectrumStatus spectrum_model_caption(const struct SpectrumModel *m,
                                           const struct SpectrumFeature *appearance,
                                           const struct SpectrumFeature *motion,
                                           const struct SpectrumFeature *audio,
                                           const float *video_embedding,
                                           size_t embedding_len,
                                           char **out);

/**
 * Reads an SPFT feature file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum SpectrumStatus spectrum_feature_load(const char *path, struct SpectrumFeature **out);

/**
 * Copies a row-major `rows × cols` matrix into a feature handle.
 *
 * # Safety
 * `data` must point to `rows * cols` floats; `out` must be writable.
 */
enum SpectrumStatus spectrum_feature_from_data(const float *data,
                                               size_t rows,
                                               size_t cols,
                                               struct SpectrumFeature **out);

/**
 * # Safety
 * `f` must be a live feature handle or NULL (returns 0).
 */
size_t spectrum_feature_rows(const struct SpectrumFeature *f);

/**
 * # Safety
 * `f` must be a live feature handle or NULL (returns 0).
 */
size_t spectrum_feature_cols(const struct SpectrumFeature *f);

/**
 * Row-major values, valid while the handle lives.
 *
 * # Safety
 * `f` must be a live feature handle or NULL (returns NULL).
 */
const float *spectrum_feature_data(const struct SpectrumFeature *f);

/**
 * # Safety
 * `f` must come from this library and not be freed twice.
 */
void spectrum_feature_free(struct SpectrumFeature *f);

/**
 * Scores `n` candidate captions against their references with the bundled
 * emotion lexicon. `references[i]` holds the references of item `i`
 * separated by newlines.
 *
 * # Safety
 * `candidates` and `references` must each point to `n` NUL-terminated
 * strings; `out` must be writable.
 */
enum SpectrumStatus spectrum_evaluate(const char *const *candidates,
                                      const char *const *references,
                                      size_t n,
                                      double gamma,
                                      struct SpectrumReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRUM_H */
