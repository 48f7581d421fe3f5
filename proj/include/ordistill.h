/* C interface to the ordistill library.
 *
 * Every function returns an ord_status. On failure a message is available
 * from ord_last_error() until the next call on the same thread. Strings
 * returned through char** outputs are owned by the caller and released
 * with ord_string_free().
 */
#ifndef ORDISTILL_H
#define ORDISTILL_H

#include <stddef.h>

#if defined(_WIN32)
#define ORD_API __declspec(dllexport)
#else
#define ORD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ord_status {
    ORD_OK = 0,
    ORD_VERIFY_FAILED = 1, /* a check ran and did not pass */
    ORD_ERR_CONFIG = 2,
    ORD_ERR_IO = 3,
    ORD_ERR_CORRUPT = 4,   /* unreadable checkpoint or artifact */
    ORD_ERR_RUNTIME = 5    /* shape, numeric or contract failure */
} ord_status;

typedef struct ord_config ord_config;
typedef struct ord_dataset ord_dataset;
typedef struct ord_model ord_model;

ORD_API const char* ord_version(void);
ORD_API const char* ord_last_error(void);
ORD_API void ord_string_free(char* s);

/* Configuration: a flat key/value document covering dataset generation and
 * training. Keys may be spelled with '-' or '_'. */
ORD_API ord_status ord_config_new(ord_config** out);
ORD_API ord_status ord_config_load(const char* path, ord_config** out);
ORD_API ord_status ord_config_set(ord_config* config, const char* key, const char* value);
ORD_API ord_status ord_config_set_json(ord_config* config, const char* json_object);
ORD_API ord_status ord_config_to_json(const ord_config* config, char** out_json);
ORD_API void ord_config_free(ord_config* config);

ORD_API size_t ord_config_key_count(void);
ORD_API ord_status ord_config_key(size_t index, const char** name, const char** type, const char** help);

/* Pipeline. `threads` below 1 means one thread. */
ORD_API ord_status ord_generate_dataset(const ord_config* config, const char* out_dir);
ORD_API ord_status ord_train(const ord_config* config, const char* out_dir, int threads, int force,
                             char** out_summary_json);
ORD_API ord_status ord_evaluate(const char* run_dir, const char* data_dir, const char* split, size_t subset,
                                const char* ensemble_mode, int with_overlap, char** out_result_json,
                                char** out_overlap_csv);
ORD_API ord_status ord_export_attention(const char* run_dir, const char* data_dir, const char* split,
                                        const char* const* image_ids, size_t id_count, const char* out_dir,
                                        size_t* out_written);
/* `op` may be NULL for the full suite. Returns ORD_VERIFY_FAILED when any
 * check exceeds its tolerance. */
ORD_API ord_status ord_gradcheck(const char* op, char** out_report_json);
ORD_API ord_status ord_ablate_alpha(const ord_config* config, const double* alphas, size_t alpha_count,
                                    const char* out_csv, int force);
ORD_API ord_status ord_ablate_n(const ord_config* config, size_t n_min, size_t n_max, const char* out_csv,
                                int force);

/* Handles for embedding: load a split and a checkpoint, then predict. */
ORD_API ord_status ord_dataset_load(const char* dir, const char* split, ord_dataset** out);
ORD_API size_t ord_dataset_size(const ord_dataset* dataset);
ORD_API ord_status ord_dataset_label(const ord_dataset* dataset, size_t index, int* out_label);
ORD_API void ord_dataset_free(ord_dataset* dataset);

ORD_API ord_status ord_model_load(const char* checkpoint_path, ord_model** out);
ORD_API size_t ord_model_num_classes(const ord_model* model);
/* Writes ord_dataset_size() class indices into out_classes. */
ORD_API ord_status ord_model_predict(const ord_model* model, const ord_dataset* dataset, int* out_classes);
ORD_API void ord_model_free(ord_model* model);

#ifdef __cplusplus
}
#endif

#endif
