/* attenlab C API: histology image classification with attention blocks,
 * training, evaluation and saliency rendering behind opaque handles.
 *
 * Every entry point returns atl_status; on failure, atl_last_error() gives a
 * thread-local human-readable message describing what went wrong.
 */
#ifndef ATTENLAB_H
#define ATTENLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ATL_API __declspec(dllexport)
#else
#define ATL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum atl_status {
  ATL_OK = 0,
  ATL_E_INVALID_ARG = 1,  /* bad call arguments or contract violation */
  ATL_E_DIMENSION = 2,    /* tensor/layer shape mismatch */
  ATL_E_CONFIG = 3,       /* inconsistent model or run configuration */
  ATL_E_FORMAT = 4,       /* malformed file contents */
  ATL_E_NUMERIC = 5,      /* non-finite values where finite ones are required */
  ATL_E_INPUT = 6,        /* unusable input data */
  ATL_E_IO = 7,           /* filesystem failure */
  ATL_E_UNKNOWN = 8
} atl_status;

typedef struct atl_dataset atl_dataset;
typedef struct atl_model atl_model;

ATL_API const char* atl_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
ATL_API const char* atl_last_error(void);

/* ---- datasets ---- */

/* Generate the synthetic motif dataset in memory. size is the square image
 * side in pixels (0 selects the default of 64). */
ATL_API atl_status atl_dataset_synth(int n_per_class, int size, uint64_t seed,
                                     atl_dataset** out);

/* Load a dataset from <root>/{NE,EP,EH,EA}/ (png, jpg, jpeg); masks are
 * picked up from <root>/masks/<id>.png when present. Per-file decode
 * failures are skipped with a warning (see atl_dataset_warnings). */
ATL_API atl_status atl_dataset_open(const char* root, atl_dataset** out);

/* Write a dataset back out as a directory tree in the layout above. */
ATL_API atl_status atl_dataset_export(const atl_dataset* ds, const char* root);

ATL_API int atl_dataset_size(const atl_dataset* ds);
ATL_API const char* atl_dataset_warnings(const atl_dataset* ds);
ATL_API void atl_dataset_close(atl_dataset* ds);

/* ---- models ---- */

/* config_json accepts {"preset": "hienet-mini"|"hienet-full"} plus optional
 * overrides (input_size, stages, position_attention, channel_attention,
 * head1, head2, classes, gate_reduction, seed). */
ATL_API atl_status atl_model_create(const char* config_json, atl_model** out);
ATL_API atl_status atl_model_save(const atl_model* model, const char* path);
ATL_API atl_status atl_model_load(const char* path, atl_model** out);
ATL_API atl_status atl_model_config(const atl_model* model, char* buf, size_t buf_size);
ATL_API void atl_model_close(atl_model* model);

/* ---- training ---- */

/* train_json keys (all optional): learning_rate, decay_factor, patience,
 * beta1, beta2, epsilon, batch_size, epochs, seed.
 * history_csv_path may be NULL. Returns after the final epoch. */
ATL_API atl_status atl_train(atl_model* model, const atl_dataset* ds,
                             const char* train_json, const char* history_csv_path);

/* ---- evaluation ---- */

/* Evaluates the model on ds. Writes per-task metric rows to metrics_csv_path
 * and, when binary_task is nonzero, the ROC points to roc_csv_path (either
 * path may be NULL to skip the file). */
ATL_API atl_status atl_evaluate(atl_model* model, const atl_dataset* ds, int binary_task,
                                const char* metrics_csv_path, const char* roc_csv_path);

/* k-fold cross-validation: per fold trains a fresh model on the remaining
 * folds and evaluates on the held-out one. Writes metrics.csv plus
 * roc_fold<i>.csv under out_dir. jobs caps concurrent folds (0 = serial). */
ATL_API atl_status atl_crossval(const atl_dataset* ds, const char* model_json,
                                const char* train_json, int folds, uint64_t seed,
                                int jobs, int stratified, const char* out_dir);

/* ---- saliency ---- */

/* kind: "cam" or "gb". target_class -1 uses the predicted class per image.
 * mode: "gray" or "overlay". Writes <id>.<kind>.<CLASS>.png under out_dir. */
ATL_API atl_status atl_saliency(atl_model* model, const atl_dataset* ds, const char* kind,
                                int target_class, const char* mode, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* ATTENLAB_H */
