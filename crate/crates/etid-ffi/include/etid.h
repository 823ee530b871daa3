#ifndef ETID_H
#define ETID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes for every fallible call.
 */
typedef enum EtidStatus {
  EtidStatus_Ok = 0,
  EtidStatus_Error = 1,
  EtidStatus_InvalidArgument = 2,
  EtidStatus_ValidityExpired = 3,
  EtidStatus_ShapeMismatch = 4,
  EtidStatus_IoError = 5,
  EtidStatus_NullPointer = 6,
} EtidStatus;

/**
 * Opaque dataset handle.
 */
typedef struct EtidDataset EtidDataset;

/**
 * Opaque ensemble handle.
 */
typedef struct EtidEnsemble EtidEnsemble;

/**
 * SGD hyperparameters for one training phase.
 */
typedef struct EtidTrainConfig {
  double learning_rate;
  size_t epochs;
  size_t batch_size;
  uint64_t seed;
  bool shuffle;
} EtidTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread, or null when the last
 * call succeeded. Owned by the library; do not free.
 */
const char *etid_last_error(void);

/**
 * Release a string returned by this library.
 */
void etid_string_free(char *s);

/**
 * Generate a seeded synthetic Gaussian-cluster dataset.
 */
enum EtidStatus etid_dataset_generate(size_t n_samples,
                                      size_t n_features,
                                      size_t n_classes,
                                      double cluster_spread,
                                      uint64_t seed,
                                      struct EtidDataset **out);

/**
 * Load a dataset from a CSV file with header `id,label,f0..`.
 */
enum EtidStatus etid_dataset_load_csv(const char *path, struct EtidDataset **out);

/**
 * Seeded disjoint train/test split.
 */
enum EtidStatus etid_dataset_split(const struct EtidDataset *dataset,
                                   double train_ratio,
                                   uint64_t seed,
                                   struct EtidDataset **out_train,
                                   struct EtidDataset **out_test);

size_t etid_dataset_len(const struct EtidDataset *dataset);

size_t etid_dataset_num_features(const struct EtidDataset *dataset);

size_t etid_dataset_num_classes(const struct EtidDataset *dataset);

/**
 * Copy the dataset's sample ids into `out` (capacity `cap`); returns the
 * number of ids written.
 */
size_t etid_dataset_ids(const struct EtidDataset *dataset, uint64_t *out, size_t cap);

void etid_dataset_free(struct EtidDataset *dataset);

/**
 * Train a leave-one-part-out ensemble of `k` sub-models on the dataset.
 * `hidden` points to `hidden_len` hidden-layer widths.
 */
enum EtidStatus etid_ensemble_build(const struct EtidDataset *train,
                                    size_t k,
                                    const size_t *hidden,
                                    size_t hidden_len,
                                    struct EtidTrainConfig train_cfg,
                                    bool parallel,
                                    struct EtidEnsemble **out);

size_t etid_ensemble_k(const struct EtidEnsemble *ensemble);

/**
 * Number of erased training ids recorded so far.
 */
size_t etid_ensemble_ledger_len(const struct EtidEnsemble *ensemble);

/**
 * Averaged posterior probabilities for `rows` feature rows of width `cols`.
 * `out` must hold `rows * num_classes` doubles.
 */
enum EtidStatus etid_ensemble_predict(const struct EtidEnsemble *ensemble,
                                      const double *features,
                                      size_t rows,
                                      size_t cols,
                                      double *out);

/**
 * Erase the given training ids via iterative distillation and rectification.
 * On success `out_report_json`, when non-null, receives a JSON report that
 * must be freed with `etid_string_free`.
 */
enum EtidStatus etid_ensemble_unlearn(struct EtidEnsemble *ensemble,
                                      const struct EtidDataset *train,
                                      const uint64_t *ids,
                                      size_t ids_len,
                                      struct EtidTrainConfig distill_cfg,
                                      struct EtidTrainConfig rectify_cfg,
                                      bool parallel,
                                      char **out_report_json);

/**
 * Draw a seeded uniform unlearning request of round(ratio * N) training ids.
 * Returns the number of ids written to `out` (capacity `cap`).
 */
size_t etid_sample_unlearning(const struct EtidDataset *train,
                              double ratio,
                              uint64_t seed,
                              uint64_t *out,
                              size_t cap);

/**
 * Persist the ensemble (manifest plus per-sub-model checkpoints) to a
 * directory.
 */
enum EtidStatus etid_ensemble_save(const struct EtidEnsemble *ensemble, const char *dir);

enum EtidStatus etid_ensemble_load(const char *dir, struct EtidEnsemble **out);

void etid_ensemble_free(struct EtidEnsemble *ensemble);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ETID_H */
