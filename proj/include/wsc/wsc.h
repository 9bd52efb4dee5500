/* C interface to the weakly supervised stacked integrative IBP library.
 *
 * Every object is an opaque handle released with its *_free function.
 * Functions return a wsc_status; on failure wsc_last_error() describes the
 * problem for the calling thread until the next failing call on that thread.
 */
#ifndef WSC_WSC_H
#define WSC_WSC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(WSC_BUILDING_LIBRARY)
#    define WSC_API __declspec(dllexport)
#  else
#    define WSC_API __declspec(dllimport)
#  endif
#else
#  define WSC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum wsc_status {
  WSC_OK = 0,
  WSC_ERR_INTERNAL = 1,
  WSC_ERR_VALIDATION = 2,
  WSC_ERR_NUMERICAL = 3,
  WSC_ERR_IO = 4,
  WSC_ERR_ARGUMENT = 5
} wsc_status;

typedef enum wsc_variant {
  WSC_VARIANT_WSC_SIIBP = 0,
  WSC_VARIANT_WS_SIIBP = 1,
  WSC_VARIANT_WSC_SIBP = 2,
  WSC_VARIANT_WS_SIBP = 3,
  WSC_VARIANT_WS_S = 4,
  WSC_VARIANT_WS_A = 5
} wsc_variant;

typedef enum wsc_predict_mode {
  WSC_PREDICT_WITH_LABELS = 0,
  WSC_PREDICT_FREE_ANNOTATION = 1
} wsc_predict_mode;

typedef enum wsc_concept { WSC_SUBJECT = 0, WSC_ACTION = 1 } wsc_concept;

typedef struct wsc_gen_config wsc_gen_config;
typedef struct wsc_dataset wsc_dataset;
typedef struct wsc_model wsc_model;
typedef struct wsc_fit_report wsc_fit_report;
typedef struct wsc_predictions wsc_predictions;
typedef struct wsc_metrics wsc_metrics;
typedef struct wsc_sweep_result wsc_sweep_result;

/* Hyperparameters and solver controls. Index 0 of the variance arrays is the
 * subject concept, index 1 the action concept. */
typedef struct wsc_fit_params {
  double alpha;
  double penalty_c;
  size_t k_max;
  double sigma_n2[2];
  double sigma_a2[2];
  int estimate_variances;
  size_t inner_max_iters;
  size_t outer_max_iters;
  double inner_rel_tol;
  double outer_rel_tol;
  uint64_t seed;
  size_t threads;
  wsc_variant variant;
} wsc_fit_params;

WSC_API const char* wsc_version(void);
WSC_API const char* wsc_last_error(void);
WSC_API const char* wsc_variant_name(wsc_variant v);
WSC_API wsc_status wsc_parse_variant(const char* name, wsc_variant* out);

/* alpha 100, C 0.5, K_max 30, unit variances, variance estimation on,
 * 200 inner / 20 outer iterations, tolerances 1e-3 / 1e-4, seed 0, 1 thread,
 * WSC-SIIBP. */
WSC_API void wsc_fit_params_default(wsc_fit_params* p);

/* Generator configuration. */
WSC_API wsc_status wsc_gen_config_default(wsc_gen_config** out);
WSC_API wsc_status wsc_gen_config_load(const char* path, wsc_gen_config** out);
WSC_API wsc_status wsc_gen_config_set_seed(wsc_gen_config* cfg, uint64_t seed);
WSC_API wsc_status wsc_gen_config_set_num_videos(wsc_gen_config* cfg, size_t n);
WSC_API size_t wsc_gen_config_num_videos(const wsc_gen_config* cfg);
WSC_API uint64_t wsc_gen_config_seed(const wsc_gen_config* cfg);
WSC_API void wsc_gen_config_free(wsc_gen_config* cfg);

/* Datasets. */
WSC_API wsc_status wsc_generate(const wsc_gen_config* cfg, wsc_dataset** out);
WSC_API wsc_status wsc_dataset_load(const char* path, wsc_dataset** out);
WSC_API wsc_status wsc_dataset_save(const wsc_dataset* ds, const char* path);
WSC_API size_t wsc_dataset_num_videos(const wsc_dataset* ds);
WSC_API size_t wsc_dataset_num_tracks(const wsc_dataset* ds);
/* Copies the first `n_head` videos into `head` and the rest into `tail`. */
WSC_API wsc_status wsc_dataset_split(const wsc_dataset* ds, size_t n_head, wsc_dataset** head,
                                     wsc_dataset** tail);
WSC_API void wsc_dataset_free(wsc_dataset* ds);

/* Learning. `report` may be NULL. */
WSC_API wsc_status wsc_fit(const wsc_dataset* train, const wsc_fit_params* params,
                           wsc_model** model, wsc_fit_report** report);
WSC_API wsc_status wsc_model_load(const char* path, wsc_model** out);
WSC_API wsc_status wsc_model_save(const wsc_model* model, const char* path);
WSC_API void wsc_model_free(wsc_model* model);

/* Report JSON to `path`; `trace_tsv_path` receives iteration/objective rows.
 * Either path may be NULL. */
WSC_API wsc_status wsc_fit_report_save(const wsc_fit_report* report, const char* path,
                                       const char* trace_tsv_path);
WSC_API double wsc_fit_report_final_objective(const wsc_fit_report* report);
WSC_API size_t wsc_fit_report_sweeps(const wsc_fit_report* report);
WSC_API size_t wsc_fit_report_bags_with_violation(const wsc_fit_report* report);
WSC_API size_t wsc_fit_report_num_warnings(const wsc_fit_report* report);
WSC_API const char* wsc_fit_report_warning(const wsc_fit_report* report, size_t i);
WSC_API void wsc_fit_report_free(wsc_fit_report* report);

/* Test inference with the model's variances and appearance frozen. Only the
 * solver controls, seed and threads of `params` are used. */
WSC_API wsc_status wsc_predict(const wsc_model* model, const wsc_dataset* test,
                               wsc_predict_mode mode, const wsc_fit_params* params,
                               wsc_predictions** out);
/* Learns from `train` while inferring `test` against the evolving model; test
 * videos never feed the shared parameters. `report` may be NULL. */
WSC_API wsc_status wsc_fit_with_test(const wsc_dataset* train, const wsc_dataset* test,
                                     wsc_predict_mode mode, const wsc_fit_params* params,
                                     wsc_model** model, wsc_fit_report** report,
                                     wsc_predictions** out);
WSC_API wsc_status wsc_predictions_load(const char* path, wsc_predictions** out);
WSC_API wsc_status wsc_predictions_save(const wsc_predictions* p, const char* path);
WSC_API void wsc_predictions_free(wsc_predictions* p);

/* Decoding and scoring against the dataset's ground truth. */
WSC_API wsc_status wsc_evaluate(const wsc_predictions* p, const wsc_dataset* ds,
                                double background_threshold, wsc_metrics** out);
WSC_API wsc_status wsc_metrics_save(const wsc_metrics* m, const char* path);
WSC_API wsc_status wsc_metrics_save_recall_table(const wsc_metrics* m, wsc_concept c,
                                                 const char* path);
WSC_API double wsc_metrics_pairwise_accuracy(const wsc_metrics* m);
WSC_API double wsc_metrics_subject_accuracy(const wsc_metrics* m);
WSC_API double wsc_metrics_action_accuracy(const wsc_metrics* m);
WSC_API void wsc_metrics_free(wsc_metrics* m);

/* Grid search, e.g. "kmax=8:10:28;alpha=3k:10:4k;c=0:0.5:5". */
WSC_API wsc_status wsc_sweep(const wsc_dataset* ds, const char* grid,
                             const wsc_fit_params* base, double validation_fraction,
                             wsc_sweep_result** out);
WSC_API size_t wsc_sweep_num_rows(const wsc_sweep_result* s);
WSC_API wsc_status wsc_sweep_save_table(const wsc_sweep_result* s, const char* path);
WSC_API void wsc_sweep_free(wsc_sweep_result* s);

#ifdef __cplusplus
}
#endif

#endif /* WSC_WSC_H */
