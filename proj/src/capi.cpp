#include "wsc/wsc.h"

#include <cstddef>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "wsc/decode.hpp"
#include "wsc/errors.hpp"
#include "wsc/inference.hpp"
#include "wsc/io.hpp"
#include "wsc/sampler.hpp"
#include "wsc/sweep.hpp"

struct wsc_gen_config {
  wsc::GenConfig cfg;
};
struct wsc_dataset {
  wsc::Dataset data;
};
struct wsc_model {
  wsc::TrainedModel model;
};
struct wsc_fit_report {
  wsc::FitReport report;
  wsc::Variant variant;
  std::uint64_t seed;
};
struct wsc_predictions {
  wsc::io::Predictions p;
};
struct wsc_metrics {
  wsc::MetricsReport report;
  double theta;
  std::uint64_t seed;
  std::vector<wsc::RecallPoint> recall[wsc::kNumConcepts];
};
struct wsc_sweep_result {
  std::vector<wsc::SweepRow> rows;
  std::uint64_t seed;
};

namespace {

thread_local std::string g_last_error;

wsc_status fail(wsc_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
wsc_status guarded(Fn&& fn) {
  try {
    fn();
    return WSC_OK;
  } catch (const wsc::ValidationError& e) {
    return fail(WSC_ERR_VALIDATION, e.what());
  } catch (const wsc::NumericalError& e) {
    return fail(WSC_ERR_NUMERICAL, e.what());
  } catch (const wsc::IoError& e) {
    return fail(WSC_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(WSC_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(WSC_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(WSC_ERR_INTERNAL, "unknown error");
  }
}

#define WSC_REQUIRE(cond, msg) \
  if (!(cond)) return fail(WSC_ERR_ARGUMENT, msg)

wsc::Variant to_variant(wsc_variant v) {
  switch (v) {
    case WSC_VARIANT_WSC_SIIBP: return wsc::Variant::wsc_siibp;
    case WSC_VARIANT_WS_SIIBP: return wsc::Variant::ws_siibp;
    case WSC_VARIANT_WSC_SIBP: return wsc::Variant::wsc_sibp;
    case WSC_VARIANT_WS_SIBP: return wsc::Variant::ws_sibp;
    case WSC_VARIANT_WS_S: return wsc::Variant::ws_s;
    case WSC_VARIANT_WS_A: return wsc::Variant::ws_a;
  }
  throw wsc::ValidationError("unknown variant code " + std::to_string(static_cast<int>(v)));
}

wsc_variant from_variant(wsc::Variant v) { return static_cast<wsc_variant>(static_cast<int>(v)); }

wsc::HyperParams hyperparams(const wsc_fit_params& p) {
  wsc::HyperParams hp;
  hp.alpha = p.alpha;
  hp.penalty_c = p.penalty_c;
  hp.k_max = p.k_max;
  hp.sigma_n2 = {p.sigma_n2[0], p.sigma_n2[1]};
  hp.sigma_a2 = {p.sigma_a2[0], p.sigma_a2[1]};
  hp.estimate_variances = p.estimate_variances != 0;
  return hp;
}

wsc::FitOptions fit_options(const wsc_fit_params& p) {
  wsc::FitOptions o;
  o.inner_max_iters = p.inner_max_iters;
  o.outer_max_iters = p.outer_max_iters;
  o.inner_rel_tol = p.inner_rel_tol;
  o.outer_rel_tol = p.outer_rel_tol;
  o.seed = p.seed;
  o.threads = p.threads;
  o.variant = to_variant(p.variant);
  return o;
}

}  // namespace

extern "C" {

const char* wsc_version(void) { return "1.0.0"; }

const char* wsc_last_error(void) { return g_last_error.c_str(); }

const char* wsc_variant_name(wsc_variant v) {
  switch (v) {
    case WSC_VARIANT_WSC_SIIBP: return "wsc-siibp";
    case WSC_VARIANT_WS_SIIBP: return "ws-siibp";
    case WSC_VARIANT_WSC_SIBP: return "wsc-sibp";
    case WSC_VARIANT_WS_SIBP: return "ws-sibp";
    case WSC_VARIANT_WS_S: return "ws-s";
    case WSC_VARIANT_WS_A: return "ws-a";
  }
  return "unknown";
}

wsc_status wsc_parse_variant(const char* name, wsc_variant* out) {
  WSC_REQUIRE(name && out, "null argument");
  const auto v = wsc::parse_variant(name);
  if (!v) return fail(WSC_ERR_VALIDATION, std::string("unknown variant '") + name + "'");
  *out = from_variant(*v);
  return WSC_OK;
}

void wsc_fit_params_default(wsc_fit_params* p) {
  if (!p) return;
  const wsc::HyperParams hp;
  const wsc::FitOptions o;
  p->alpha = hp.alpha;
  p->penalty_c = hp.penalty_c;
  p->k_max = hp.k_max;
  p->sigma_n2[0] = hp.sigma_n2[0];
  p->sigma_n2[1] = hp.sigma_n2[1];
  p->sigma_a2[0] = hp.sigma_a2[0];
  p->sigma_a2[1] = hp.sigma_a2[1];
  p->estimate_variances = hp.estimate_variances ? 1 : 0;
  p->inner_max_iters = o.inner_max_iters;
  p->outer_max_iters = o.outer_max_iters;
  p->inner_rel_tol = o.inner_rel_tol;
  p->outer_rel_tol = o.outer_rel_tol;
  p->seed = o.seed;
  p->threads = o.threads;
  p->variant = from_variant(o.variant);
}

// --- generator ------------------------------------------------------------

wsc_status wsc_gen_config_default(wsc_gen_config** out) {
  WSC_REQUIRE(out, "null output pointer");
  return guarded([&] { *out = new wsc_gen_config{}; });
}

wsc_status wsc_gen_config_load(const char* path, wsc_gen_config** out) {
  WSC_REQUIRE(path && out, "null argument");
  return guarded([&] { *out = new wsc_gen_config{wsc::io::load_gen_config(path)}; });
}

wsc_status wsc_gen_config_set_seed(wsc_gen_config* cfg, uint64_t seed) {
  WSC_REQUIRE(cfg, "null config");
  cfg->cfg.seed = seed;
  return WSC_OK;
}

uint64_t wsc_gen_config_seed(const wsc_gen_config* cfg) { return cfg ? cfg->cfg.seed : 0; }

wsc_status wsc_gen_config_set_num_videos(wsc_gen_config* cfg, size_t n) {
  WSC_REQUIRE(cfg, "null config");
  cfg->cfg.num_videos = n;
  return WSC_OK;
}

size_t wsc_gen_config_num_videos(const wsc_gen_config* cfg) {
  return cfg ? cfg->cfg.num_videos : 0;
}

void wsc_gen_config_free(wsc_gen_config* cfg) { delete cfg; }

// --- datasets -------------------------------------------------------------

wsc_status wsc_generate(const wsc_gen_config* cfg, wsc_dataset** out) {
  WSC_REQUIRE(cfg && out, "null argument");
  return guarded([&] { *out = new wsc_dataset{wsc::sample_dataset(cfg->cfg).dataset}; });
}

wsc_status wsc_dataset_load(const char* path, wsc_dataset** out) {
  WSC_REQUIRE(path && out, "null argument");
  return guarded([&] { *out = new wsc_dataset{wsc::io::load_dataset(path)}; });
}

wsc_status wsc_dataset_save(const wsc_dataset* ds, const char* path) {
  WSC_REQUIRE(ds && path, "null argument");
  return guarded([&] { wsc::io::save_dataset(ds->data, path); });
}

size_t wsc_dataset_num_videos(const wsc_dataset* ds) { return ds ? ds->data.videos.size() : 0; }

size_t wsc_dataset_num_tracks(const wsc_dataset* ds) { return ds ? ds->data.total_tracks() : 0; }

wsc_status wsc_dataset_split(const wsc_dataset* ds, size_t n_head, wsc_dataset** head,
                             wsc_dataset** tail) {
  WSC_REQUIRE(ds && head && tail, "null argument");
  WSC_REQUIRE(n_head <= ds->data.videos.size(), "split point past the last video");
  return guarded([&] {
    auto a = std::make_unique<wsc_dataset>();
    auto b = std::make_unique<wsc_dataset>();
    a->data.space = b->data.space = ds->data.space;
    a->data.generator_seed = b->data.generator_seed = ds->data.generator_seed;
    const auto mid = ds->data.videos.begin() + static_cast<std::ptrdiff_t>(n_head);
    a->data.videos.assign(ds->data.videos.begin(), mid);
    b->data.videos.assign(mid, ds->data.videos.end());
    *head = a.release();
    *tail = b.release();
  });
}

void wsc_dataset_free(wsc_dataset* ds) { delete ds; }

// --- learning -------------------------------------------------------------

wsc_status wsc_fit(const wsc_dataset* train, const wsc_fit_params* params, wsc_model** model,
                   wsc_fit_report** report) {
  WSC_REQUIRE(train && params && model, "null argument");
  return guarded([&] {
    const auto opts = fit_options(*params);
    auto result = wsc::fit(train->data, hyperparams(*params), opts);
    auto* m = new wsc_model{std::move(result.model)};
    if (report) {
      try {
        *report = new wsc_fit_report{std::move(result.report), opts.variant, opts.seed};
      } catch (...) {
        delete m;
        throw;
      }
    }
    *model = m;
  });
}

wsc_status wsc_model_load(const char* path, wsc_model** out) {
  WSC_REQUIRE(path && out, "null argument");
  return guarded([&] { *out = new wsc_model{wsc::io::load_model(path)}; });
}

wsc_status wsc_model_save(const wsc_model* model, const char* path) {
  WSC_REQUIRE(model && path, "null argument");
  return guarded([&] { wsc::io::save_model(model->model, path); });
}

void wsc_model_free(wsc_model* model) { delete model; }

wsc_status wsc_fit_report_save(const wsc_fit_report* report, const char* path,
                               const char* trace_tsv_path) {
  WSC_REQUIRE(report, "null argument");
  return guarded([&] {
    if (path) {
      wsc::io::write_json(path, wsc::io::to_json(report->report, report->variant, report->seed));
    }
    if (trace_tsv_path) wsc::io::write_text(trace_tsv_path, wsc::io::trace_table(report->report));
  });
}

double wsc_fit_report_final_objective(const wsc_fit_report* report) {
  return report ? report->report.final_objective : 0.0;
}

size_t wsc_fit_report_sweeps(const wsc_fit_report* report) {
  return report ? report->report.sweeps : 0;
}

size_t wsc_fit_report_bags_with_violation(const wsc_fit_report* report) {
  return report ? report->report.bags_with_violation : 0;
}

size_t wsc_fit_report_num_warnings(const wsc_fit_report* report) {
  return report ? report->report.warnings.size() : 0;
}

const char* wsc_fit_report_warning(const wsc_fit_report* report, size_t i) {
  if (!report || i >= report->report.warnings.size()) return nullptr;
  return report->report.warnings[i].c_str();
}

void wsc_fit_report_free(wsc_fit_report* report) { delete report; }

// --- inference ------------------------------------------------------------

wsc_status wsc_predict(const wsc_model* model, const wsc_dataset* test, wsc_predict_mode mode,
                       const wsc_fit_params* params, wsc_predictions** out) {
  WSC_REQUIRE(model && test && params && out, "null argument");
  WSC_REQUIRE(mode == WSC_PREDICT_WITH_LABELS || mode == WSC_PREDICT_FREE_ANNOTATION,
              "unknown predict mode");
  return guarded([&] {
    auto opts = fit_options(*params);
    opts.variant = model->model.variant;
    const auto m = mode == WSC_PREDICT_WITH_LABELS ? wsc::PredictMode::with_labels
                                                   : wsc::PredictMode::free_annotation;
    auto state = wsc::predict(model->model, test->data, m, opts);
    wsc::io::Predictions p;
    p.mode = m;
    p.variant = model->model.variant;
    p.seed = opts.seed;
    for (const auto& v : test->data.videos) p.ids.push_back(v.id);
    p.bags = std::move(state.bags);
    *out = new wsc_predictions{std::move(p)};
  });
}

wsc_status wsc_fit_with_test(const wsc_dataset* train, const wsc_dataset* test,
                             wsc_predict_mode mode, const wsc_fit_params* params,
                             wsc_model** model, wsc_fit_report** report, wsc_predictions** out) {
  WSC_REQUIRE(train && test && params && model && out, "null argument");
  WSC_REQUIRE(mode == WSC_PREDICT_WITH_LABELS || mode == WSC_PREDICT_FREE_ANNOTATION,
              "unknown predict mode");
  return guarded([&] {
    const auto opts = fit_options(*params);
    const auto m = mode == WSC_PREDICT_WITH_LABELS ? wsc::PredictMode::with_labels
                                                   : wsc::PredictMode::free_annotation;
    auto result = wsc::fit_with_test(train->data, test->data, m, hyperparams(*params), opts);
    wsc::io::Predictions p;
    p.mode = m;
    p.variant = opts.variant;
    p.seed = opts.seed;
    for (const auto& v : test->data.videos) p.ids.push_back(v.id);
    p.bags = std::move(result.test.bags);
    auto pm = std::make_unique<wsc_model>(wsc_model{std::move(result.fit.model)});
    auto pp = std::make_unique<wsc_predictions>(wsc_predictions{std::move(p)});
    if (report) *report = new wsc_fit_report{std::move(result.fit.report), opts.variant, opts.seed};
    *model = pm.release();
    *out = pp.release();
  });
}

wsc_status wsc_predictions_load(const char* path, wsc_predictions** out) {
  WSC_REQUIRE(path && out, "null argument");
  return guarded([&] { *out = new wsc_predictions{wsc::io::load_predictions(path)}; });
}

wsc_status wsc_predictions_save(const wsc_predictions* p, const char* path) {
  WSC_REQUIRE(p && path, "null argument");
  return guarded([&] { wsc::io::save_predictions(p->p, path); });
}

void wsc_predictions_free(wsc_predictions* p) { delete p; }

// --- evaluation -----------------------------------------------------------

wsc_status wsc_evaluate(const wsc_predictions* p, const wsc_dataset* ds,
                        double background_threshold, wsc_metrics** out) {
  WSC_REQUIRE(p && ds && out, "null argument");
  WSC_REQUIRE(background_threshold >= 0.0 && background_threshold <= 1.0,
              "background threshold must lie in [0, 1]");
  return guarded([&] {
    const auto& videos = ds->data.videos;
    if (p->p.bags.size() != videos.size()) {
      throw wsc::ValidationError("predictions cover " + std::to_string(p->p.bags.size()) +
                                 " videos but the dataset has " +
                                 std::to_string(videos.size()));
    }
    std::vector<Eigen::MatrixXd> nu;
    for (std::size_t i = 0; i < videos.size(); ++i) {
      if (p->p.ids[i] != videos[i].id) {
        throw wsc::ValidationError("prediction " + std::to_string(i) + " is for video " +
                                   p->p.ids[i] + " but the dataset has " + videos[i].id);
      }
      const auto& b = p->p.bags[i];
      if (static_cast<std::size_t>(b.nu.rows()) != videos[i].tracks.size() ||
          static_cast<std::size_t>(b.nu.cols()) < ds->data.space.num_labeled()) {
        throw wsc::ValidationError("prediction shape does not match video " + videos[i].id);
      }
      nu.push_back(b.nu);
    }
    auto* m = new wsc_metrics{};
    try {
      m->report = wsc::evaluate(nu, ds->data, background_threshold);
      m->theta = background_threshold;
      m->seed = p->p.seed;
      m->recall[0] = wsc::recall_sweep(nu, ds->data, wsc::Concept::subject);
      m->recall[1] = wsc::recall_sweep(nu, ds->data, wsc::Concept::action);
    } catch (...) {
      delete m;
      throw;
    }
    *out = m;
  });
}

wsc_status wsc_metrics_save(const wsc_metrics* m, const char* path) {
  WSC_REQUIRE(m && path, "null argument");
  return guarded([&] {
    auto j = wsc::io::to_json(m->report, m->theta);
    j["seed"] = m->seed;
    j["recall_sweep"] = {{"subject", wsc::io::to_json(m->recall[0])},
                         {"action", wsc::io::to_json(m->recall[1])}};
    wsc::io::write_json(path, j);
  });
}

wsc_status wsc_metrics_save_recall_table(const wsc_metrics* m, wsc_concept c, const char* path) {
  WSC_REQUIRE(m && path, "null argument");
  WSC_REQUIRE(c == WSC_SUBJECT || c == WSC_ACTION, "unknown concept");
  return guarded([&] { wsc::io::write_text(path, wsc::io::recall_table(m->recall[c])); });
}

double wsc_metrics_pairwise_accuracy(const wsc_metrics* m) {
  return m ? m->report.pairwise_accuracy : 0.0;
}

double wsc_metrics_subject_accuracy(const wsc_metrics* m) {
  return m ? m->report.subject_accuracy : 0.0;
}

double wsc_metrics_action_accuracy(const wsc_metrics* m) {
  return m ? m->report.action_accuracy : 0.0;
}

void wsc_metrics_free(wsc_metrics* m) { delete m; }

// --- sweep ----------------------------------------------------------------

wsc_status wsc_sweep(const wsc_dataset* ds, const char* grid, const wsc_fit_params* base,
                     double validation_fraction, wsc_sweep_result** out) {
  WSC_REQUIRE(ds && grid && base && out, "null argument");
  return guarded([&] {
    wsc::SweepOptions opts;
    opts.base = hyperparams(*base);
    opts.fit = fit_options(*base);
    opts.validation_fraction = validation_fraction;
    auto rows = wsc::run_sweep(ds->data, wsc::parse_grid(grid), opts);
    *out = new wsc_sweep_result{std::move(rows), opts.fit.seed};
  });
}

size_t wsc_sweep_num_rows(const wsc_sweep_result* s) { return s ? s->rows.size() : 0; }

wsc_status wsc_sweep_save_table(const wsc_sweep_result* s, const char* path) {
  WSC_REQUIRE(s && path, "null argument");
  return guarded([&] { wsc::io::write_text(path, wsc::sweep_table(s->rows, s->seed)); });
}

void wsc_sweep_free(wsc_sweep_result* s) { delete s; }

}  // extern "C"
