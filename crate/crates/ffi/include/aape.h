/* SPDX-License-Identifier: MIT OR Apache-2.0 */

#ifndef AAPE_H
#define AAPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Step-1 activity statistic.
typedef enum AapeActivity {
  AAPE_ACTIVITY_PEAK_CLASS = 0,
  AAPE_ACTIVITY_POOLED = 1,
} AapeActivity;

// Population whose class probabilities set the step-3 threshold.
typedef enum AapePopulation {
  AAPE_POPULATION_ALL_NEURONS = 0,
  AAPE_POPULATION_SURVIVORS = 1,
} AapePopulation;

// Result of every fallible call.
typedef enum AapeStatus {
  AAPE_STATUS_OK = 0,
  AAPE_STATUS_NULL_POINTER = 1,
  AAPE_STATUS_INVALID_ARGUMENT = 2,
  AAPE_STATUS_IO = 3,
  AAPE_STATUS_FORMAT = 4,
  AAPE_STATUS_GEOMETRY = 5,
  AAPE_STATUS_EMPTY_SELECTION = 6,
  AAPE_STATUS_DEGENERATE = 7,
  AAPE_STATUS_UNKNOWN_CLASS = 8,
  AAPE_STATUS_MASK_TOO_LARGE = 9,
  AAPE_STATUS_BUFFER_TOO_SMALL = 10,
  AAPE_STATUS_PANIC = 11,
} AapeStatus;

typedef enum AapeCombine {
  AAPE_COMBINE_INTERSECTION = 0,
  AAPE_COMBINE_UNION = 1,
} AapeCombine;

// An activation dataset directory with its parsed manifest.
typedef struct AapeDataset AapeDataset;

// Set of neurons to zero.
typedef struct AapeMask AapeMask;

// Per-class activation probabilities.
typedef struct AapeProbs AapeProbs;

// Per-class neuron sets.
typedef struct AapeSelection AapeSelection;

typedef struct AapeSelectionConfig {
  double r_aape;
  double low_activation_cut;
  double assignment_cut;
  enum AapeActivity activity;
  enum AapePopulation population;
} AapeSelectionConfig;

typedef struct AapeNeuronId {
  uint32_t layer;
  uint32_t neuron;
} AapeNeuronId;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *aape_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *aape_version(void);

struct AapeSelectionConfig aape_selection_config_default(void);

// Opens a dataset directory after reading its manifest.
enum AapeStatus aape_dataset_open(const char *path, struct AapeDataset **out);

// Writes layer count, neurons per layer, class count and sample count.
// Any output pointer may be null.
enum AapeStatus aape_dataset_shape(const struct AapeDataset *ds,
                                   size_t *num_layers,
                                   size_t *neurons_per_layer,
                                   size_t *num_classes,
                                   size_t *num_samples);

void aape_dataset_free(struct AapeDataset *ds);

// Streams the dataset and counts activations per class.
enum AapeStatus aape_probs_compute(const struct AapeDataset *ds, struct AapeProbs **out);

enum AapeStatus aape_probs_read(const char *path, struct AapeProbs **out);

enum AapeStatus aape_probs_write(const struct AapeProbs *probs, const char *path);

// Probability that `(layer, neuron)` is positive on a sample of `class`.
enum AapeStatus aape_probs_get(const struct AapeProbs *probs,
                               struct AapeNeuronId id,
                               size_t class_,
                               double *out);

// Writes one entropy score per neuron, in layer-major order, into `buf`.
// `len` must equal the neuron count.
enum AapeStatus aape_probs_scores(const struct AapeProbs *probs, double *buf, size_t len);

void aape_probs_free(struct AapeProbs *probs);

// Entropy of the normalized probability vector; +infinity when it sums to 0.
enum AapeStatus aape_entropy(const double *probs, size_t len, double *out);

// Runs the three-step filter. Task and class names come from `ds`.
enum AapeStatus aape_selection_run(const struct AapeProbs *probs,
                                   const struct AapeDataset *ds,
                                   const struct AapeSelectionConfig *cfg,
                                   struct AapeSelection **out);

enum AapeStatus aape_selection_read(const char *path, struct AapeSelection **out);

enum AapeStatus aape_selection_write_json(const struct AapeSelection *sel, const char *path);

enum AapeStatus aape_selection_num_classes(const struct AapeSelection *sel, size_t *out);

// Copies the sorted neuron set of `class` into `buf`. `*len` receives the set
// size even when `cap` is too small, in which case nothing is copied.
enum AapeStatus aape_selection_class_neurons(const struct AapeSelection *sel,
                                             size_t class_,
                                             struct AapeNeuronId *buf,
                                             size_t cap,
                                             size_t *len);

// Jaccard ratio between class `a` of `sa` and class `b` of `sb`; 0 when both
// sets are empty.
enum AapeStatus aape_selection_jaccard(const struct AapeSelection *sa,
                                       size_t a,
                                       const struct AapeSelection *sb,
                                       size_t b,
                                       double *out);

void aape_selection_free(struct AapeSelection *sel);

// Jaccard ratio of two neuron id arrays (duplicates ignored).
enum AapeStatus aape_jaccard(const struct AapeNeuronId *a,
                             size_t a_len,
                             const struct AapeNeuronId *b,
                             size_t b_len,
                             double *out);

// Mask of the neurons of the named classes, combined by `mode`.
enum AapeStatus aape_mask_targeted(const struct AapeSelection *sel,
                                   const char *const *classes,
                                   size_t num_classes,
                                   enum AapeCombine mode,
                                   struct AapeMask **out);

// Uniform mask of `size` neurons drawn with the documented counter-based
// generator. `exclude` may be null.
enum AapeStatus aape_mask_random(size_t num_layers,
                                 size_t neurons_per_layer,
                                 size_t size,
                                 uint64_t seed,
                                 const struct AapeMask *exclude,
                                 struct AapeMask **out);

// Mask from an explicit id list.
enum AapeStatus aape_mask_from_ids(size_t num_layers,
                                   size_t neurons_per_layer,
                                   const struct AapeNeuronId *ids,
                                   size_t len,
                                   struct AapeMask **out);

enum AapeStatus aape_mask_len(const struct AapeMask *mask, size_t *out);

// Copies the sorted mask ids into `buf`; same contract as
// [`aape_selection_class_neurons`].
enum AapeStatus aape_mask_neurons(const struct AapeMask *mask,
                                  struct AapeNeuronId *buf,
                                  size_t cap,
                                  size_t *len);

// Zeroes the masked columns of one layer's row-major `samples x neurons`
// activation block in place.
enum AapeStatus aape_mask_apply_layer(const struct AapeMask *mask,
                                      size_t layer,
                                      float *values,
                                      size_t samples,
                                      size_t neurons);

enum AapeStatus aape_mask_write_json(const struct AapeMask *mask, const char *path);

enum AapeStatus aape_mask_read_json(const char *path, struct AapeMask **out);

void aape_mask_free(struct AapeMask *mask);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AAPE_H */
