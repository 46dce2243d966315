#ifndef CLAUSE_H
#define CLAUSE_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Outcome of a call. Zero is success.
typedef enum ClauseStatus {
  CLAUSE_STATUS_OK = 0,
  CLAUSE_STATUS_NULL_POINTER = 1,
  CLAUSE_STATUS_INVALID_UTF8 = 2,
  CLAUSE_STATUS_PARSE = 3,
  CLAUSE_STATUS_CONFIG = 4,
  CLAUSE_STATUS_IO = 5,
  CLAUSE_STATUS_CHECKPOINT = 6,
  CLAUSE_STATUS_AUDIT = 7,
  CLAUSE_STATUS_OUT_OF_RANGE = 8,
  CLAUSE_STATUS_INTERNAL = 9,
  CLAUSE_STATUS_PANIC = 10,
} ClauseStatus;

// A graph with its train and eval questions.
typedef struct ClauseDataset ClauseDataset;

// Trained (or freshly initialised) networks plus the prices they were
// trained against.
typedef struct ClauseModel ClauseModel;

// Per-episode caps.
typedef struct ClauseBudgets {
  double beta_edge;
  double beta_lat;
  double beta_tok;
} ClauseBudgets;

// Result of one episode.
typedef struct ClauseEpisodeResult {
  uint8_t em;
  uint64_t c_edge;
  uint64_t c_lat;
  uint64_t c_tok;
  uint32_t selected;
} ClauseEpisodeResult;

// Aggregates over a set of evaluation episodes.
typedef struct ClauseEvalReport {
  uint64_t episodes;
  double em;
  double mean_edge;
  double mean_lat;
  double mean_tok;
  double feasibility;
} ClauseEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Length in bytes of the last error message on this thread, excluding the
// terminating nul; 0 when there is none.
size_t clause_last_error_length(void);

// Copies the last error message (nul-terminated, truncated to fit) into
// `buf`. Returns the number of bytes written excluding the nul, or -1 when
// `buf` is null or `len` is 0.
//
// # Safety
// `buf` must point to `len` writable bytes.
int64_t clause_last_error_message(char *buf, size_t len);

// Generates a synthetic task family from a JSON configuration (`"{}"`
// selects the defaults; unknown keys are rejected).
//
// # Safety
// `config_json` must be a nul-terminated string; `out` must be writable.
enum ClauseStatus clause_dataset_generate(const char *config_json, struct ClauseDataset **out);

// Loads a directory written by the `gen-data` command.
//
// # Safety
// `dir` must be a nul-terminated string; `out` must be writable.
enum ClauseStatus clause_dataset_load_dir(const char *dir, struct ClauseDataset **out);

// Triple, train-example and eval-example counts.
//
// # Safety
// `ds` must come from this library; the out pointers must be writable.
enum ClauseStatus clause_dataset_counts(const struct ClauseDataset *ds,
                                        uint64_t *triples,
                                        uint64_t *train,
                                        uint64_t *eval);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must come from this library and not be used afterwards.
void clause_dataset_free(struct ClauseDataset *ds);

// Fresh networks with the default sizes.
//
// # Safety
// `out` must be writable.
enum ClauseStatus clause_model_new(uint64_t seed, struct ClauseModel **out);

// Loads a checkpoint written by training.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum ClauseStatus clause_model_load(const char *path, struct ClauseModel **out);

// Writes the 64-character hex parameter checksum plus a nul into `buf`,
// which must hold at least 65 bytes.
//
// # Safety
// `model` must come from this library; `buf` must point to `len` bytes.
enum ClauseStatus clause_model_checksum(const struct ClauseModel *model, char *buf, size_t len);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void clause_model_free(struct ClauseModel *model);

// Runs eval example `index` in cap mode. When `trace_json` is non-null it
// receives the episode trace as JSON, to be released with
// [`clause_string_free`].
//
// # Safety
// Handles must come from this library; `out` must be writable;
// `trace_json` may be null.
enum ClauseStatus clause_run_eval_episode(const struct ClauseDataset *ds,
                                          const struct ClauseModel *model,
                                          uint64_t index,
                                          struct ClauseBudgets caps,
                                          uint64_t seed,
                                          bool greedy,
                                          struct ClauseEpisodeResult *out,
                                          char **trace_json);

// Evaluates the first `n` eval examples (all when `n` is 0) in cap mode.
//
// # Safety
// Handles must come from this library; `out` must be writable.
enum ClauseStatus clause_evaluate(const struct ClauseDataset *ds,
                                  const struct ClauseModel *model,
                                  struct ClauseBudgets caps,
                                  uint64_t seed,
                                  uint64_t n,
                                  struct ClauseEvalReport *out);

// Replays a JSON trace against the dataset's graph. Returns
// `ClauseStatus::Audit` when the trace does not reproduce.
//
// # Safety
// `ds` must come from this library; `trace_json` must be nul-terminated.
enum ClauseStatus clause_audit_trace(const struct ClauseDataset *ds, const char *trace_json);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void clause_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLAUSE_H */
