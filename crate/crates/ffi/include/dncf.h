#ifndef DNCF_H
#define DNCF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DncfStatus {
  DNCF_STATUS_OK = 0,
  DNCF_STATUS_NULL_POINTER = 1,
  DNCF_STATUS_INVALID_ARGUMENT = 2,
  DNCF_STATUS_IO = 3,
  DNCF_STATUS_DATA = 4,
  DNCF_STATUS_CONFIG = 5,
  DNCF_STATUS_NUMERIC = 6,
  DNCF_STATUS_CHECKPOINT = 7,
  DNCF_STATUS_INTERNAL = 8,
  DNCF_STATUS_PANIC = 9,
} DncfStatus;

/**
 * Loaded interaction data with its test instances.
 */
typedef struct DncfDataset DncfDataset;

/**
 * A model of any kind together with its hyperparameters.
 */
typedef struct DncfModel DncfModel;

typedef struct DncfTrainOptions {
  size_t epochs;
  size_t batch_size;
  double lr;
  double l2;
  size_t neg_ratio;
  uint64_t seed;
  /**
   * 0 = Adam, 1 = SGD.
   */
  uint32_t optimizer;
  size_t eval_every;
  /**
   * 0 disables early stopping.
   */
  size_t patience;
} DncfTrainOptions;

typedef struct DncfMetrics {
  double hr;
  double ndcg;
  size_t k;
  size_t users;
} DncfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dncf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dncf_version(void);

/**
 * Loads `<train>`, `<test>` and `<negatives>` files into a new dataset.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum DncfStatus dncf_dataset_load(const char *train,
                                  const char *test,
                                  const char *negatives,
                                  struct DncfDataset **out);

/**
 * Generates a clustered synthetic dataset.
 *
 * # Safety
 * `out` must be writable.
 */
enum DncfStatus dncf_dataset_synthetic(size_t users,
                                       size_t items,
                                       size_t clusters,
                                       uint64_t seed,
                                       struct DncfDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle or NULL.
 */
size_t dncf_dataset_num_users(const struct DncfDataset *dataset);

/**
 * # Safety
 * `dataset` must be a live handle or NULL.
 */
size_t dncf_dataset_num_items(const struct DncfDataset *dataset);

/**
 * # Safety
 * `dataset` must be a handle from this library or NULL, and not used again.
 */
void dncf_dataset_free(struct DncfDataset *dataset);

/**
 * Creates a freshly initialized model sized for `dataset`.
 * `kind` is one of itempop, dgmf, dmlp, dnmf, dncf_mf; `combiner` one of
 * sum, mean, concat, attention (NULL means sum).
 *
 * # Safety
 * Strings must be NUL-terminated; `dataset` live; `out` writable.
 */
enum DncfStatus dncf_model_new(const char *kind,
                               size_t factors,
                               const char *combiner,
                               const struct DncfDataset *dataset,
                               uint64_t seed,
                               struct DncfModel **out);

/**
 * # Safety
 * `model` must be a handle from this library or NULL, and not used again.
 */
void dncf_model_free(struct DncfModel *model);

/**
 * Defaults: 50 epochs, batch 256, Adam at 0.001, L2 1e-6, 4 negatives,
 * validation every epoch, patience 5.
 */
struct DncfTrainOptions dncf_train_options_default(void);

/**
 * Trains `model` with a held-out validation item per user, keeps the best
 * validation state and writes its HR@10 / NDCG@10 on the test instances.
 *
 * # Safety
 * Handles must be live; `options` readable; `metrics` writable or NULL.
 */
enum DncfStatus dncf_model_train(struct DncfModel *model,
                                 const struct DncfDataset *dataset,
                                 const struct DncfTrainOptions *options,
                                 struct DncfMetrics *metrics);

/**
 * Leave-one-out HR@k / NDCG@k over the dataset's test instances.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum DncfStatus dncf_model_evaluate(const struct DncfModel *model,
                                    const struct DncfDataset *dataset,
                                    size_t k,
                                    struct DncfMetrics *out);

/**
 * Score of (user, item): a probability, or a raw score for itempop and
 * dncf_mf.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum DncfStatus dncf_model_score(const struct DncfModel *model,
                                 const struct DncfDataset *dataset,
                                 size_t user,
                                 size_t item,
                                 double *out);

/**
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
enum DncfStatus dncf_model_save(const struct DncfModel *model, const char *path);

/**
 * Replaces the parameters of `model` with a checkpoint of the same shape.
 *
 * # Safety
 * `model` must be live; `path` NUL-terminated.
 */
enum DncfStatus dncf_model_load(struct DncfModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t dncf_model_num_parameters(const struct DncfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNCF_H */
