#ifndef KGNSF_H
#define KGNSF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KgnsfStatus {
  KGNSF_STATUS_OK = 0,
  KGNSF_STATUS_NULL_POINTER = 1,
  KGNSF_STATUS_INVALID_ARGUMENT = 2,
  KGNSF_STATUS_IO = 3,
  KGNSF_STATUS_PARSE = 4,
  KGNSF_STATUS_OUT_OF_RANGE = 5,
  KGNSF_STATUS_CHECKPOINT = 6,
  KGNSF_STATUS_TRAINING = 7,
  KGNSF_STATUS_BUFFER_TOO_SMALL = 8,
  KGNSF_STATUS_PANIC = 9,
} KgnsfStatus;

typedef enum KgnsfModelKind {
  KGNSF_MODEL_KIND_TRANSE_L1 = 0,
  KGNSF_MODEL_KIND_TRANSE_L2 = 1,
  KGNSF_MODEL_KIND_DISTMULT = 2,
} KgnsfModelKind;

typedef enum KgnsfSplit {
  KGNSF_SPLIT_TRAIN = 0,
  KGNSF_SPLIT_VALID = 1,
  KGNSF_SPLIT_TEST = 2,
} KgnsfSplit;

typedef enum KgnsfObjective {
  KGNSF_OBJECTIVE_BT = 0,
  KGNSF_OBJECTIVE_HSIC = 1,
} KgnsfObjective;

// Opaque loaded knowledge graph.
typedef struct KgnsfGraph KgnsfGraph;

// Opaque embedding model.
typedef struct KgnsfModel KgnsfModel;

typedef struct KgnsfStats {
  size_t n_entities;
  size_t n_relations;
  size_t n_train;
  size_t n_valid;
  size_t n_test;
} KgnsfStats;

typedef struct KgnsfMetrics {
  double mr;
  double mrr;
  double hits1;
  double hits3;
  double hits10;
  size_t n_triples;
} KgnsfMetrics;

// Options for negative-sampling-free training. Obtain defaults from
// [`kgnsf_train_options_default`].
typedef struct KgnsfTrainOptions {
  enum KgnsfModelKind kind;
  size_t dim;
  double lr;
  size_t batch_size;
  size_t max_epochs;
  size_t patience;
  uint64_t seed;
  double alpha;
  // Values `<= 0` select `1/dim`.
  double lambda;
  enum KgnsfObjective objective;
  // 0 disables ShuffledDBN.
  size_t sdbn_group;
  bool extended_terms;
} KgnsfTrainOptions;

// Summary of a finished training run.
typedef struct KgnsfTrainSummary {
  size_t epochs_run;
  size_t best_epoch;
  // NaN when no validation split was available.
  double best_val_mrr;
  double final_train_loss;
} KgnsfTrainSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *kgnsf_last_error(void);

// Library version as a static NUL-terminated string.
const char *kgnsf_version(void);

// Loads three tab-separated triple files into `*out`.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum KgnsfStatus kgnsf_graph_load(const char *train,
                                  const char *valid,
                                  const char *test,
                                  struct KgnsfGraph **out);

// # Safety
// `graph` must come from [`kgnsf_graph_load`] and not be used afterwards.
void kgnsf_graph_free(struct KgnsfGraph *graph);

// # Safety
// `graph` must be a live handle and `out` writable.
enum KgnsfStatus kgnsf_graph_stats(const struct KgnsfGraph *graph, struct KgnsfStats *out);

// Looks up the id of an entity label.
//
// # Safety
// `graph` must be a live handle, `label` NUL-terminated, `out` writable.
enum KgnsfStatus kgnsf_graph_entity_id(const struct KgnsfGraph *graph,
                                       const char *label,
                                       size_t *out);

// Looks up the id of a relation label.
//
// # Safety
// `graph` must be a live handle, `label` NUL-terminated, `out` writable.
enum KgnsfStatus kgnsf_graph_relation_id(const struct KgnsfGraph *graph,
                                         const char *label,
                                         size_t *out);

// Reads a checkpoint. When `graph` is non-null its entity and relation
// counts must match the checkpoint.
//
// # Safety
// `path` NUL-terminated; `graph` null or live; `out` writable.
enum KgnsfStatus kgnsf_model_load(const char *path,
                                  const struct KgnsfGraph *graph,
                                  struct KgnsfModel **out);

// # Safety
// `model` live, `path` NUL-terminated.
enum KgnsfStatus kgnsf_model_save(const struct KgnsfModel *model, const char *path);

// # Safety
// `model` must come from this library and not be used afterwards.
void kgnsf_model_free(struct KgnsfModel *model);

// Writes the model kind and table sizes; any output pointer may be null.
//
// # Safety
// `model` live; non-null outputs writable.
enum KgnsfStatus kgnsf_model_info(const struct KgnsfModel *model,
                                  enum KgnsfModelKind *kind,
                                  size_t *n_entities,
                                  size_t *n_relations,
                                  size_t *dim);

// Plausibility score of `(head, relation, tail)`; higher is more plausible.
//
// # Safety
// `model` live, `out` writable.
enum KgnsfStatus kgnsf_model_score(const struct KgnsfModel *model,
                                   size_t head,
                                   size_t relation,
                                   size_t tail,
                                   double *out);

// Scores of `(head, relation, e)` for every entity `e`, written to
// `out[0..n_entities]`.
//
// # Safety
// `model` live; `out` points to at least `len` writable doubles.
enum KgnsfStatus kgnsf_model_score_tails(const struct KgnsfModel *model,
                                         size_t head,
                                         size_t relation,
                                         double *out,
                                         size_t len);

// Scores of `(e, relation, tail)` for every entity `e`, written to
// `out[0..n_entities]`.
//
// # Safety
// `model` live; `out` points to at least `len` writable doubles.
enum KgnsfStatus kgnsf_model_score_heads(const struct KgnsfModel *model,
                                         size_t relation,
                                         size_t tail,
                                         double *out,
                                         size_t len);

// Raw or filtered link-prediction metrics on one split.
//
// # Safety
// Handles live, `out` writable.
enum KgnsfStatus kgnsf_evaluate(const struct KgnsfModel *model,
                                const struct KgnsfGraph *graph,
                                enum KgnsfSplit split,
                                bool filtered,
                                struct KgnsfMetrics *out);

// Defaults: TransE-L2, d=100, lr=1e-3, b=1000, 200 epochs, patience 5,
// seed 0, alpha 0.5, lambda 1/d, BT objective, no SDBN.
struct KgnsfTrainOptions kgnsf_train_options_default(void);

// Trains a model without negative sampling and returns the parameters of
// the best validated epoch in `*out`. `summary` may be null.
//
// # Safety
// `graph` live, `options` readable, `out` writable, `summary` null or writable.
enum KgnsfStatus kgnsf_train(const struct KgnsfGraph *graph,
                             const struct KgnsfTrainOptions *options,
                             struct KgnsfModel **out,
                             struct KgnsfTrainSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGNSF_H */
