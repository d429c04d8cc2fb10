/* advkit — adversarial-example toolkit: small-image classifiers, gradient-sign
 * attack families, transferability and robustness measurement.
 *
 * C API over an opaque-handle core. Every function returns ADVKIT_OK or an
 * error status; advkit_last_error() holds a thread-local message for the most
 * recent failing call on the calling thread. Out-params are written only on
 * success. Strings returned through char** are released with
 * advkit_string_free().
 */
#ifndef ADVKIT_H
#define ADVKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define ADVKIT_API __declspec(dllexport)
#else
#define ADVKIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum advkit_status {
    ADVKIT_OK = 0,
    ADVKIT_ERR_INVALID_ARGUMENT = 1,
    ADVKIT_ERR_IO = 2,
    ADVKIT_ERR_FORMAT = 3,
    ADVKIT_ERR_SHAPE = 4,
    ADVKIT_ERR_DIVERGED = 5,
    ADVKIT_ERR_INSUFFICIENT_DATA = 6,
    ADVKIT_ERR_RUNTIME = 7
} advkit_status;

typedef struct advkit_dataset advkit_dataset;   /* labeled image set */
typedef struct advkit_model advkit_model;       /* classifier */
typedef struct advkit_advbatch advkit_advbatch; /* clean/adversarial pairs */

ADVKIT_API const char* advkit_version(void);
ADVKIT_API const char* advkit_last_error(void);
ADVKIT_API void advkit_string_free(char* s);

/* ------------------------------------------------------------------ data */

ADVKIT_API advkit_status advkit_dataset_load_idx(const char* images_path,
                                                 const char* labels_path,
                                                 advkit_dataset** out);
ADVKIT_API advkit_status advkit_dataset_save_idx(const advkit_dataset* data,
                                                 const char* images_path,
                                                 const char* labels_path);
ADVKIT_API advkit_status advkit_dataset_synth(int64_t n_per_class, int classes, int64_t d,
                                              uint64_t seed, advkit_dataset** out);
ADVKIT_API advkit_status advkit_dataset_split(const advkit_dataset* data, double test_fraction,
                                              uint64_t seed, advkit_dataset** train_out,
                                              advkit_dataset** test_out);
ADVKIT_API advkit_status advkit_dataset_select_correct(const advkit_model* const* models,
                                                       size_t n_models,
                                                       const advkit_dataset* data, int64_t n,
                                                       uint64_t seed, advkit_dataset** out);
ADVKIT_API advkit_status advkit_dataset_count(const advkit_dataset* data, int64_t* out);
ADVKIT_API void advkit_dataset_free(advkit_dataset* data);

/* ---------------------------------------------------------------- models */

ADVKIT_API advkit_status advkit_model_build_fnn(int depth, int64_t width, uint64_t seed,
                                                double mean_pixel, advkit_model** out);
ADVKIT_API advkit_status advkit_model_build_lenet(uint64_t seed, double mean_pixel,
                                                  advkit_model** out);

/* train_config_json: {"epochs":10,"batch_size":64,"learning_rate":0.1,
 * "momentum":0.9,"seed":1}; omitted keys keep their defaults. log_csv_out
 * (optional) receives the per-epoch log as CSV. */
ADVKIT_API advkit_status advkit_model_train(advkit_model* model, const advkit_dataset* train,
                                            const advkit_dataset* test_or_null,
                                            const char* train_config_json, char** log_csv_out);

ADVKIT_API advkit_status advkit_model_save(const advkit_model* model, const char* path);
ADVKIT_API advkit_status advkit_model_load(const char* path, advkit_model** out);
ADVKIT_API advkit_status advkit_model_id(const advkit_model* model, char** out);
ADVKIT_API advkit_status advkit_model_num_classes(const advkit_model* model, int* out);
ADVKIT_API advkit_status advkit_model_accuracy(const advkit_model* model,
                                               const advkit_dataset* data, double* out);

/* logits_out must hold num_classes doubles; pixels are row-major [h*w]. */
ADVKIT_API advkit_status advkit_model_forward(const advkit_model* model, const double* pixels,
                                              int64_t h, int64_t w, double* logits_out);
ADVKIT_API void advkit_model_free(advkit_model* model);

/* --------------------------------------------------------------- attacks */

/* attack_config_json: {"method":"fgsm|igsm|m-igsm|vr-fgsm|vr-igsm|m-vr-igsm",
 * "epsilon":..,"alpha":..,"T":..,"mu":..,"m":..,"sigma":..,"targeted":..,
 * "seed":..} or {"preset":"paper-igsm", ...overrides}. weights_or_null: one
 * convex weight per source (null = equal weights). y_target_or_null: one
 * target label per image for targeted attacks. */
ADVKIT_API advkit_status advkit_attack_run(const advkit_model* const* sources,
                                           const double* weights_or_null, size_t n_sources,
                                           const advkit_dataset* data,
                                           const char* attack_config_json,
                                           const int* y_target_or_null, int workers,
                                           advkit_advbatch** out);

ADVKIT_API advkit_status advkit_advbatch_save(const advkit_advbatch* batch, const char* dir);
ADVKIT_API advkit_status advkit_advbatch_load(const char* dir, advkit_advbatch** out);
ADVKIT_API advkit_status advkit_advbatch_count(const advkit_advbatch* batch, int64_t* out);
/* largest per-image L-inf distortion over the batch */
ADVKIT_API advkit_status advkit_advbatch_max_linf(const advkit_advbatch* batch, double* out);
ADVKIT_API void advkit_advbatch_free(advkit_advbatch* batch);

/* ------------------------------------------------------------ evaluation */

/* targeted=0: top-k non-targeted success rate (%); targeted=1: top-k
 * targeted success rate (%). */
ADVKIT_API advkit_status advkit_eval_success_rate(const advkit_model* target,
                                                  const advkit_advbatch* batch, int topk,
                                                  int targeted, double* out);

/* transform_kind: rotation | gaussian_noise | gaussian_blur | jpeg_like */
ADVKIT_API advkit_status advkit_eval_destruction_rate(const advkit_model* target,
                                                      const advkit_advbatch* batch,
                                                      const char* transform_kind, double value,
                                                      uint64_t seed, double* out);

/* -------------------------------------------------------------- analysis */

ADVKIT_API advkit_status advkit_similarity_curve_csv(const advkit_model* source,
                                                     const advkit_model* target,
                                                     const advkit_dataset* data,
                                                     const int* m_values, size_t n_m,
                                                     double sigma, uint64_t seed, int workers,
                                                     char** csv_out);

/* ----------------------------------------------------------- experiments */

/* Declarative experiment runner (kinds: train, attack, transfer,
 * sweep-sigma-m, sweep-step-size, robustness, similarity, boundary).
 * Writes artifacts under out_dir; result_json_out (optional) receives the
 * headline result document. */
ADVKIT_API advkit_status advkit_experiment_run(const char* config_json, const char* out_dir,
                                               int workers, char** result_json_out);

/* Merge evaluation CSVs under dir into report.csv/report.json/report.md.
 * warnings_json_out (optional) receives a JSON array of warnings. */
ADVKIT_API advkit_status advkit_report_render(const char* dir, char** warnings_json_out);

#ifdef __cplusplus
}
#endif

#endif /* ADVKIT_H */
