#ifndef KGALIGN_H
#define KGALIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. The non-zero values match the exit codes
 * of the `kgalign` command where they overlap.
 */
typedef enum KgaStatus {
  KGA_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or an out-of-range argument.
   */
  KGA_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Missing file or bad configuration.
   */
  KGA_STATUS_USAGE = 2,
  /**
   * Malformed or inconsistent data.
   */
  KGA_STATUS_DATA = 3,
  /**
   * The model endpoint could not be reached.
   */
  KGA_STATUS_GATEWAY = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  KGA_STATUS_PANIC = 5,
} KgaStatus;

/**
 * Both graph sides of a dataset plus its gold alignment.
 */
typedef struct KgaDataset KgaDataset;

/**
 * Source and target embedding matrices.
 */
typedef struct KgaIndex KgaIndex;

/**
 * Counts for one graph side.
 */
typedef struct KgaGraphStats {
  size_t entity_count;
  size_t relation_count;
  size_t attribute_count;
  size_t rel_triple_count;
  size_t att_triple_count;
} KgaGraphStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *kga_version(void);

/**
 * Copy of the last error message on this thread, or NULL if none.
 * Release with [`kga_string_free`].
 */
char *kga_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void kga_string_free(char *s);

/**
 * Parse a dataset directory in DBP15K layout (`ent_ids_1`, `triples_1`,
 * `att_triples_1`, the same for side 2, and `ref_ent_ids`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KgaStatus kga_dataset_open(const char *dir, struct KgaDataset **out);

/**
 * Statistics of side 1 (source) or 2 (target).
 *
 * # Safety
 * `dataset` must come from [`kga_dataset_open`]; `out` must be valid.
 */
enum KgaStatus kga_dataset_stats(const struct KgaDataset *dataset,
                                 uint32_t side,
                                 struct KgaGraphStats *out);

/**
 * Number of gold pairs, or 0 for a NULL handle.
 *
 * # Safety
 * `dataset` must be NULL or come from [`kga_dataset_open`].
 */
size_t kga_dataset_gold_count(const struct KgaDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or come from [`kga_dataset_open`], not yet freed.
 */
void kga_dataset_free(struct KgaDataset *dataset);

/**
 * Load `count dim` headed embedding files for both sides.
 *
 * # Safety
 * Paths must be NUL-terminated strings and `out` a valid pointer.
 */
enum KgaStatus kga_index_open(const char *source_embeddings,
                              const char *target_embeddings,
                              struct KgaIndex **out);

/**
 * Top-`k` targets of `source` by cosine similarity, best first. Writes `k`
 * ids to `targets` and, if `scores` is not NULL, `k` scores.
 *
 * # Safety
 * `index` must come from [`kga_index_open`]; `targets` must hold `k`
 * values and `scores` must be NULL or hold `k` values.
 */
enum KgaStatus kga_index_top_k(const struct KgaIndex *index,
                               uint32_t source,
                               size_t k,
                               uint32_t *targets,
                               double *scores);

/**
 * # Safety
 * `index` must be NULL or come from [`kga_index_open`], not yet freed.
 */
void kga_index_free(struct KgaIndex *index);

/**
 * Apply the voting rule to `len` chosen target ids. Sets `*has_winner` to
 * 1 and `*winner` to the target if a unique most-voted target has at least
 * `threshold` votes, otherwise `*has_winner` to 0.
 *
 * # Safety
 * `choices` must hold `len` values (or be NULL with `len == 0`); the out
 * pointers must be valid.
 */
enum KgaStatus kga_tally(const uint32_t *choices,
                         size_t len,
                         size_t threshold,
                         uint32_t *winner,
                         uint8_t *has_winner);

/**
 * Up to `n` distinct orderings of `0..m`, written row by row into `out`
 * (capacity `n * m`). `*produced` receives the number of rows, which is
 * `min(n, m!)`.
 *
 * # Safety
 * `out` must hold `n * m` values and `produced` must be valid.
 */
enum KgaStatus kga_sample_permutations(size_t m,
                                       size_t n,
                                       uint64_t seed,
                                       bool identity_first,
                                       size_t *out,
                                       size_t *produced);

/**
 * Index of the option an answer selects among `count` options labelled
 * `A`, `B`, ... with the given display names. Sets `*chosen` to 1 and
 * `*index` on a choice, `*chosen` to 0 on abstention.
 *
 * # Safety
 * `raw` must be a NUL-terminated string; `names` must be NULL or hold
 * `count` NUL-terminated strings; the out pointers must be valid.
 */
enum KgaStatus kga_parse_choice(const char *raw,
                                const char *const *names,
                                size_t count,
                                size_t *index,
                                uint8_t *chosen);

/**
 * Render a knowledge-driven prompt for `source` with the given candidates
 * in the given order. `*out` receives a string to release with
 * [`kga_string_free`].
 *
 * # Safety
 * `dataset` must come from [`kga_dataset_open`]; `candidates` must hold
 * `len` values; `out` must be valid.
 */
enum KgaStatus kga_render_prompt(const struct KgaDataset *dataset,
                                 uint32_t source,
                                 const uint32_t *candidates,
                                 size_t len,
                                 char **out);

/**
 * Align every gold source of `dataset` with candidates from `index`, using
 * the run settings in `config_toml` (the same format as the command-line
 * config file; an empty string means defaults, i.e. the truthful oracle).
 * The decisions are written as JSONL to `report_path`. Remote endpoints are
 * refused unless `allow_remote` is true.
 *
 * # Safety
 * Handles must come from this library; strings must be NUL-terminated.
 */
enum KgaStatus kga_align(const struct KgaDataset *dataset,
                         const struct KgaIndex *index,
                         const char *config_toml,
                         const char *report_path,
                         bool allow_remote);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KGALIGN_H */
