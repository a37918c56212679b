#ifndef SAGAN_SAGAN_H
#define SAGAN_SAGAN_H

/*
 * C interface of the sagan library: semi-supervised anomaly detection by
 * adversarial restoration. All handles are opaque; every call that can fail
 * returns a sagan_status and leaves a message in sagan_last_error().
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SAGAN_API __declspec(dllexport)
#else
#define SAGAN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SAGAN_OK = 0,
  SAGAN_ERR_USAGE = 1,      /* bad argument or config value */
  SAGAN_ERR_DATA = 2,       /* manifest, repartition or image content */
  SAGAN_ERR_IO = 3,         /* filesystem */
  SAGAN_ERR_NUMERIC = 4,    /* non-finite loss */
  SAGAN_ERR_CHECKPOINT = 5, /* missing or mismatched checkpoint */
  SAGAN_ERR_INVALID_HANDLE = 6,
  SAGAN_ERR_INTERNAL = 99
} sagan_status;

typedef struct sagan_config sagan_config;
typedef struct sagan_trainer sagan_trainer;
typedef struct sagan_model sagan_model;

/* Message of the last failed call on this thread ("" if none). */
SAGAN_API const char* sagan_last_error(void);
SAGAN_API const char* sagan_status_name(int status);
SAGAN_API const char* sagan_version(void);

/* 16 hex digits of a stable 64-bit hash of `text`; `out` holds 17 bytes. */
SAGAN_API int sagan_fingerprint(const char* text, char* out);

/* ---- configuration ---------------------------------------------------- */

SAGAN_API int sagan_config_new(sagan_config** out);
SAGAN_API int sagan_config_load(const char* path, sagan_config** out);
SAGAN_API int sagan_config_parse(const char* json_text, sagan_config** out);
/* "section.key=value"; value is JSON or a bare string. */
SAGAN_API int sagan_config_set(sagan_config* cfg, const char* assignment);
/* Resolved config as JSON; the string lives until the next call on cfg. */
SAGAN_API int sagan_config_json(sagan_config* cfg, const char** out);
/* Value of one dotted key; strings are returned bare, other values as JSON.
   The string lives until the next call on cfg. */
SAGAN_API int sagan_config_get(sagan_config* cfg, const char* key, const char** out);
SAGAN_API int sagan_config_fingerprint(const sagan_config* cfg, char* out);
SAGAN_API void sagan_config_free(sagan_config* cfg);
/* Every config key with its default, one per line. */
SAGAN_API const char* sagan_config_keys(void);

/* ---- data ------------------------------------------------------------- */

typedef struct {
  size_t normal_train;
  size_t unlabeled;
  size_t test_normal;
  size_t test_abnormal;
} sagan_split_sizes;

typedef struct {
  size_t normal_train;
  size_t unlabeled;
  size_t unlabeled_abnormal; /* hidden labels */
  size_t test_normal;
  size_t test_abnormal;
  double anomaly_ratio;
  uint64_t seed;
} sagan_repartition_summary;

SAGAN_API int sagan_prepare(const char* manifest_path, double anomaly_ratio, const sagan_split_sizes* sizes,
                            uint64_t seed, const char* out_path, sagan_repartition_summary* summary);

typedef struct {
  size_t n_normal;
  size_t n_abnormal;
  int size;
  uint64_t seed;
  /* Negative values select the defaults (20% of each class for test, half of
     the remaining normals for normal_train). */
  int64_t test_normal;
  int64_t test_abnormal;
  int64_t normal_train;
} sagan_synthetic_options;

typedef struct {
  size_t normal_train;
  size_t unlabeled_normal;
  size_t unlabeled_abnormal;
  size_t test_normal;
  size_t test_abnormal;
} sagan_synthetic_summary;

SAGAN_API void sagan_synthetic_defaults(sagan_synthetic_options* opts);
SAGAN_API int sagan_make_synthetic(const sagan_synthetic_options* opts, const char* out_dir,
                                   sagan_synthetic_summary* summary);

/* Writes source | pseudo-anomaly | mask strips for the first `count`
   normal_train images, using cfg's synthesis section and train.seed. */
SAGAN_API int sagan_synth_preview(const sagan_config* cfg, const char* repartition_path, size_t count,
                                  const char* out_dir);

/* ---- training --------------------------------------------------------- */

typedef struct {
  int64_t iteration;
  double id, rec, g_adv, g_total;
  double d_adv, gp, d_total;
} sagan_loss;

typedef void (*sagan_progress_fn)(const sagan_loss* loss, void* user);

/* Builds a trainer from cfg (data.repartition must be set). `resume_dir` may
   be NULL or a ckpt_<n> directory written by the same config. */
SAGAN_API int sagan_trainer_new(const sagan_config* cfg, const char* resume_dir, sagan_trainer** out);
/* Runs `steps` generator iterations (each preceded by the configured critic
   steps). `last` may be NULL. */
SAGAN_API int sagan_trainer_step(sagan_trainer* t, int64_t steps, sagan_loss* last);
SAGAN_API int sagan_trainer_counters(const sagan_trainer* t, int64_t* g_steps, int64_t* d_steps, double* lr);
SAGAN_API int sagan_trainer_save(sagan_trainer* t, const char* dir);
SAGAN_API void sagan_trainer_free(sagan_trainer* t);

/* Full run into cfg.output_dir: loss_log.jsonl, ckpt_<n>/ directories and
   config.resolved.json. stop_at <= 0 means train.max_iterations. */
SAGAN_API int sagan_train(const sagan_config* cfg, const char* resume_dir, int64_t stop_at, sagan_progress_fn fn,
                          void* user, int64_t* checkpoints_written);

/* ---- inference and evaluation ----------------------------------------- */

SAGAN_API int sagan_model_load(const char* checkpoint_dir, sagan_model** out);
SAGAN_API int sagan_model_info(const sagan_model* m, int* image_size, int* channels, int64_t* iteration);
/* images: count x channels x size x size floats in [-1, 1]; out has the same
   layout and receives the restorations. */
SAGAN_API int sagan_model_restore(sagan_model* m, const float* images, size_t count, float* out);

typedef struct {
  size_t entries;
  double auc;
  double ap;
} sagan_eval_summary;

/* Scores the test split of a repartition. cfg may be NULL (default eval
   settings); when given, its model sections must match the checkpoint. */
SAGAN_API int sagan_model_evaluate(sagan_model* m, const sagan_config* cfg, const char* repartition_path,
                                   const char* report_path, sagan_eval_summary* summary);
/* For each image: <stem>_input.png, <stem>_restored.png, <stem>_heat.png and
   the raw <stem>_heat.json sidecar. */
SAGAN_API int sagan_model_heatmaps(sagan_model* m, const char* const* image_paths, size_t count,
                                   const char* out_dir);
SAGAN_API void sagan_model_free(sagan_model* m);

/* Heatmap of two channels x height x width arrays, exported as <id>_heat.*. */
SAGAN_API int sagan_heatmap_arrays(const float* image, const float* restored, int channels, int height, int width,
                                   const char* id, const char* out_dir);

/* AUC / AP of raw scores; labels are 1 = abnormal, 0 = normal. */
SAGAN_API int sagan_metrics(const double* scores, const int* labels, size_t n, double* auc, double* ap);

#ifdef __cplusplus
}
#endif

#endif /* SAGAN_SAGAN_H */
