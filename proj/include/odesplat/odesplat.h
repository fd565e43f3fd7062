/* odesplat — dynamic Gaussian-splat scenes with latent ODE motion.
 *
 * C interface of the shared library. All functions return ods_status;
 * on failure ods_last_error() holds a thread-local diagnostic message.
 * Handles are opaque and must be released with the matching close call.
 *
 * Arguments named *_json accept either an inline JSON object (first
 * non-space character '{') or a path to a JSON file.
 */
#ifndef ODESPLAT_H
#define ODESPLAT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ods_status {
    ODS_OK = 0,
    ODS_ERR_INVALID_ARGUMENT = 1,
    ODS_ERR_IO = 2,
    ODS_ERR_NUMERIC = 3,
    ODS_ERR_CONTRACT = 4,
    ODS_ERR_INTERNAL = 5
} ods_status;

const char* ods_status_name(ods_status s);

/* Message of the most recent failure on this thread ("" when none). */
const char* ods_last_error(void);

void ods_version(int* major, int* minor, int* patch);

typedef struct ods_dataset ods_dataset;
typedef struct ods_model ods_model;

typedef struct ods_dataset_info {
    int32_t frame_count;
    int32_t camera_count;
    int32_t width;
    int32_t height;
    double split_threshold;
    int32_t train_frames;
    int32_t extrapolation_frames;
} ods_dataset_info;

typedef struct ods_eval_summary {
    double mean_psnr_train, mean_ssim_train, mean_l1_train;
    double mean_psnr_extrap, mean_ssim_extrap, mean_l1_extrap;
    int32_t n_train, n_extrap;
} ods_eval_summary;

/* step/total progress callback; loss is the current training loss */
typedef void (*ods_progress_fn)(int64_t step, int64_t total, double loss, void* user);

/* Generates a synthetic multi-view dataset under out_dir. Deterministic in
 * (spec, seed). */
ods_status ods_generate_scene(const char* spec_json, uint64_t seed, const char* out_dir);

ods_status ods_dataset_open(const char* dir, ods_dataset** out);
void ods_dataset_close(ods_dataset* ds);
ods_status ods_dataset_info_get(const ods_dataset* ds, ods_dataset_info* out);

typedef struct ods_frame_info {
    int32_t camera;
    double t;
    int32_t is_train; /* 1 when the frame falls in the training split */
} ods_frame_info;

ods_status ods_dataset_frame_info(const ods_dataset* ds, int32_t frame_index,
                                  ods_frame_info* out);

/* Trains on the dataset and writes logs, metrics and the final checkpoint
 * under out_dir. seed_override >= 0 replaces the config seed. progress may
 * be NULL. Returns the checkpoint path in out_checkpoint_path (optional,
 * capacity bytes). */
ods_status ods_train(const char* config_json, const char* dataset_dir, const char* out_dir,
                     int64_t seed_override, ods_progress_fn progress, void* user,
                     char* out_checkpoint_path, size_t capacity);

ods_status ods_model_open(const char* checkpoint_path, ods_model** out);
void ods_model_close(ods_model* m);

/* Renders dataset frame frame_index from its own camera/timestamp.
 * out_png / out_f64 may each be NULL to skip that output. */
ods_status ods_model_render_frame(ods_model* m, const ods_dataset* ds, int32_t frame_index,
                                  const char* out_png, const char* out_f64);

/* Renders camera camera_index at an arbitrary time t (extrapolation when t
 * lies beyond the training window). */
ods_status ods_model_render_view(ods_model* m, const ods_dataset* ds, int32_t camera_index,
                                 double t, const char* out_png, const char* out_f64);

/* split: "train" | "extrapolation" | "all". out_csv and out_plot_prefix may
 * be NULL. Writes <prefix>_psnr.png and <prefix>_ssim.png when given. */
ods_status ods_evaluate(ods_model* m, const ods_dataset* ds, const char* split,
                        const char* out_csv, const char* out_plot_prefix,
                        ods_eval_summary* out);

/* Mean particle-center distance to the analytic trajectory at time t
 * (synthetic datasets only). */
ods_status ods_trajectory_error(ods_model* m, const ods_dataset* ds, double t, double* out);

#ifdef __cplusplus
}
#endif

#endif /* ODESPLAT_H */
