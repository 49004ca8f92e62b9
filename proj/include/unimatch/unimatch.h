#ifndef UNIMATCH_UNIMATCH_H
#define UNIMATCH_UNIMATCH_H

/* C interface to the unimatch library.
 *
 * Objects are opaque handles released with their *_free function. Every call
 * returns a um_status; on failure um_last_error() describes the problem for
 * the calling thread until its next failing call. Settings are passed as JSON
 * text; strings returned through char** are released with um_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define UM_API __declspec(dllexport)
#else
#define UM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum um_status {
  UM_OK = 0,
  UM_ERR_USAGE = 1,
  UM_ERR_DATA = 2,
  UM_ERR_NUMERICAL = 3,
  UM_ERR_IO = 4,
  UM_ERR_SHAPE = 5,
  UM_ERR_GRAPH = 6,
  UM_ERR_INFEASIBLE = 7,
  UM_ERR_INTEGRITY = 8,
  UM_ERR_VERSION = 9,
  UM_ERR_INTERNAL = 10
} um_status;

typedef struct um_dataset um_dataset;
typedef struct um_model um_model;

/* Called for every logged training record with one JSON line. */
typedef void (*um_log_fn)(const char* json_line, void* user);

UM_API const char* um_version(void);
UM_API const char* um_last_error(void);
UM_API const char* um_status_name(um_status status);
UM_API void um_string_free(char* s);

/* Datasets. */
UM_API um_status um_dataset_load(const char* path, um_dataset** out);
/* config_json: synthetic generator settings (NULL for defaults). */
UM_API um_status um_dataset_synthesize(const char* config_json, um_dataset** out);
UM_API um_status um_dataset_save(const um_dataset* ds, const char* path);
/* Categories, instance counts per split and universe sizes. */
UM_API um_status um_dataset_summary(const um_dataset* ds, char** json_out);
UM_API void um_dataset_free(um_dataset* ds);

/* Models. network_json may be NULL. The universe sizes come from the dataset. */
UM_API um_status um_model_create(const um_dataset* ds, const char* network_json, uint64_t seed, um_model** out);
UM_API um_status um_model_load(const char* checkpoint_path, um_model** out);
UM_API um_status um_model_save(const um_model* model, const char* checkpoint_path);
/* Training iterations completed so far. */
UM_API um_status um_model_iteration(const um_model* model, int* out);
/* Settings the model was last trained with, as JSON ("{}" if never trained). */
UM_API um_status um_model_run_config(const um_model* model, char** json_out);

/* Trains on the train split from the model's current iteration up to the
 * configured total. checkpoint_path may be NULL; when set, the checkpoint is
 * written on the configured interval, at the end, and with the last good state
 * on divergence (UM_ERR_NUMERICAL). result_json receives iterations run and the
 * final log record. */
UM_API um_status um_model_train(um_model* model, const um_dataset* ds, const char* train_json,
                                const char* checkpoint_path, um_log_fn log, void* user, char** result_json);

/* split is "train", "test" or "all" (NULL means "test"). */
UM_API um_status um_model_evaluate(um_model* model, const um_dataset* ds, const char* split, const char* eval_json,
                                   char** report_json);

/* Writes static universe points and per-instance deformed points. */
UM_API um_status um_model_export_geometry(um_model* model, const um_dataset* ds, const char* split, const char* dir,
                                          const char* eval_json);
/* Writes one matchings_<category>.json per category. */
UM_API um_status um_model_export_matchings(um_model* model, const um_dataset* ds, const char* split, const char* dir,
                                           const char* eval_json, int include_pairwise);

UM_API void um_model_free(um_model* model);

#ifdef __cplusplus
}
#endif

#endif
