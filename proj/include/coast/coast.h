#ifndef COAST_COAST_H
#define COAST_COAST_H

/* Stable C interface to the engine. Handles are opaque; every call that can
   fail returns a coast_status and leaves a message for coast_last_error().
   Strings returned through char** are owned by the caller and released with
   coast_string_free(). Configs and reports travel as JSON text. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define COAST_API __declspec(dllexport)
#else
#define COAST_API __attribute__((visibility("default")))
#endif

typedef enum coast_status {
  COAST_OK = 0,
  COAST_E_INVALID_ARGUMENT = 1,
  COAST_E_IO = 2,
  COAST_E_PARSE = 3,
  COAST_E_DIMENSION = 4,
  COAST_E_NUMERIC_DOMAIN = 5,
  COAST_E_CONTRACT = 6,
  COAST_E_CONFIG = 7,
  COAST_E_DEGENERATE_OUTPUT = 8,
  COAST_E_DIVERGENCE = 9,
  COAST_E_INTERNAL = 100
} coast_status;

typedef struct coast_dataset coast_dataset;
typedef struct coast_split coast_split;
typedef struct coast_model coast_model;

/* Called after every training epoch with the mean losses of that epoch. */
typedef void (*coast_epoch_fn)(size_t epoch, double total, double supervised, double user_user,
                               double user_item, void* user_data);

COAST_API const char* coast_version(void);
/* Message of the last failed call on this thread; empty when none. */
COAST_API const char* coast_last_error(void);
COAST_API const char* coast_status_name(coast_status status);
COAST_API void coast_string_free(char* s);

/* Synthetic data: writes interactions, features and labels into out_dir.
   config_json may be NULL for defaults. */
COAST_API coast_status coast_synth_write(const char* config_json, const char* out_dir);

/* Loads a directory holding interactions.tsv and optional feature files.
   options_json keys: min_interactions, fallback_features, fallback_dim. */
COAST_API coast_status coast_dataset_load(const char* dir, const char* options_json, coast_dataset** out);
/* Explicit file paths; feature paths may be NULL. */
COAST_API coast_status coast_dataset_load_files(const char* interactions, const char* user_features,
                                                const char* item_features_s, const char* item_features_t,
                                                const char* options_json, coast_dataset** out);
COAST_API coast_status coast_dataset_hash(const coast_dataset* ds, uint64_t* out);
/* Counts per domain and overlap size as JSON. */
COAST_API coast_status coast_dataset_summary(const coast_dataset* ds, char** out_json);
/* Writes the filtered dataset back out in the input formats. */
COAST_API coast_status coast_dataset_write(const coast_dataset* ds, const char* out_dir);
COAST_API void coast_dataset_free(coast_dataset* ds);

/* A split borrows its dataset, which must outlive it. */
COAST_API coast_status coast_split_create(const coast_dataset* ds, uint64_t seed, coast_split** out);
COAST_API coast_status coast_split_read(const coast_dataset* ds, const char* path, coast_split** out);
COAST_API coast_status coast_split_write(const coast_split* split, const char* path);
COAST_API coast_status coast_split_hash(const coast_split* split, uint64_t* out);
COAST_API void coast_split_free(coast_split* split);

/* A model borrows its split. config_json may be NULL for defaults; on_epoch
   may be NULL. */
COAST_API coast_status coast_train(const coast_split* split, const char* config_json, coast_epoch_fn on_epoch,
                                   void* user_data, coast_model** out);
/* Per-epoch losses and wall time of the training run as JSON. */
COAST_API coast_status coast_model_history(const coast_model* model, char** out_json);
COAST_API coast_status coast_model_config(const coast_model* model, char** out_json);
/* EvalReport JSON including wall time. */
COAST_API coast_status coast_model_evaluate(const coast_model* model, char** out_json);
/* Digest of the deterministic part of the report (no timing). */
COAST_API coast_status coast_model_evaluate_hash(const coast_model* model, uint64_t* out);
/* metadata_json (may be NULL) is stored next to config and data hashes. */
COAST_API coast_status coast_model_save(const coast_model* model, const char* path, const char* metadata_json);
/* The split (and its dataset) must match the hashes recorded at save time. */
COAST_API coast_status coast_model_load(const coast_split* split, const char* path, coast_model** out);
COAST_API void coast_model_free(coast_model* model);
/* Metadata block of a checkpoint without loading any tensors. */
COAST_API coast_status coast_checkpoint_metadata(const char* path, char** out_json);

/* Experiment runners; results as JSON. variant is one of full, NF, NS, NM, NU, NI. */
COAST_API coast_status coast_run_ablation(const coast_split* split, const char* config_json, const char* variant,
                                          char** out_json);
COAST_API coast_status coast_run_overlap(const coast_split* split, const char* config_json, const double* ratios,
                                         size_t n_ratios, char** out_json);
/* axes_json keys (all optional): dim, prototypes, lambda2 as arrays. */
COAST_API coast_status coast_run_sweep(const coast_split* split, const char* config_json, const char* axes_json,
                                       char** out_json);

#ifdef __cplusplus
}
#endif

#endif
