/* C interface to the volumetric segmentation core. All functions are thread-safe with
 * respect to distinct handles; a single model handle must not be mutated concurrently.
 * Strings returned through char** are owned by the caller and released with lms_string_free. */
#ifndef LMS_LMS_H
#define LMS_LMS_H

#include <stdint.h>

#if defined(_WIN32)
#define LMS_API __declspec(dllexport)
#else
#define LMS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lms_status {
    LMS_OK = 0,
    LMS_ERR_ARGUMENT = 1,
    LMS_ERR_SHAPE = 2,
    LMS_ERR_CONFIG = 3,
    LMS_ERR_IO = 4,
    LMS_ERR_RUNTIME = 5,
    LMS_ERR_DIVERGENCE = 6
} lms_status;

typedef struct lms_model lms_model;

/* Dense (C, D, H, W) float volume. Volumes filled by the library are released with lms_volume_free. */
typedef struct lms_volume {
    int64_t channels;
    int64_t depth;
    int64_t height;
    int64_t width;
    float* data;
} lms_volume;

typedef struct lms_epoch {
    int64_t epoch;
    double lr;
    double total_loss;
    double dice_loss;
    double ce_loss;
    double boundary_loss;
    double mean_dice;
    double seconds;
} lms_epoch;

typedef void (*lms_epoch_fn)(const lms_epoch* record, void* user);
typedef void (*lms_gradcheck_fn)(const char* name, double max_rel_error, double tolerance, int passed, void* user);

/* Message of the most recent failure on the calling thread ("" when none). */
LMS_API const char* lms_last_error(void);
LMS_API const char* lms_version(void);
LMS_API void lms_string_free(char* s);

/* preset: "brats" or "toy". */
LMS_API lms_status lms_config_preset(const char* preset, char** json_out);

LMS_API lms_status lms_model_create(const char* config_json, uint64_t seed, lms_model** out);
LMS_API void lms_model_destroy(lms_model* model);
LMS_API lms_status lms_model_config(const lms_model* model, char** json_out);
LMS_API lms_status lms_model_param_count(const lms_model* model, int64_t* out);

/* Cost report for an input of shape (B, Cin, D, H, W); as_json selects JSON over text. */
LMS_API lms_status lms_model_cost_report(const lms_model* model, const int64_t shape[5], int as_json, char** out);

/* Single-precision logits (B, N_cls, D, H, W) for x of the given shape. */
LMS_API lms_status lms_model_forward(const lms_model* model, const float* x, const int64_t shape[5], float* logits,
                                     int64_t logits_len);
/* Argmax labels (B, D, H, W), lowest class index on ties. */
LMS_API lms_status lms_model_predict(const lms_model* model, const float* x, const int64_t shape[5], int32_t* labels,
                                     int64_t labels_len);

LMS_API lms_status lms_model_save_weights(const lms_model* model, const char* path);
LMS_API lms_status lms_model_load_weights(lms_model* model, const char* path);

LMS_API lms_status lms_rv3d_read(const char* path, lms_volume* out);
LMS_API lms_status lms_rv3d_write(const char* path, const lms_volume* volume);
LMS_API void lms_volume_free(lms_volume* volume);

/* Writes image_NNN.rv3d and label_NNN.rv3d into out_dir; *warnings receives the clip-warning count. */
LMS_API lms_status lms_phantom_generate(const char* spec_json, int64_t count, const char* out_dir, int64_t* warnings);

/* Trains on `samples` generated phantoms described by phantom_json (NULL: defaults). log_json_out may be NULL. */
LMS_API lms_status lms_train_toy(lms_model* model, const char* train_json, const char* phantom_json, int64_t samples,
                                 lms_epoch_fn on_epoch, void* user, char** log_json_out);

/* Finite-difference suite; blocks at block_size^3, the full model at the next multiple of 16. */
LMS_API lms_status lms_gradcheck(uint64_t seed, int64_t block_size, lms_gradcheck_fn on_result, void* user,
                                 int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
