// Command-line driver: generate / fit / predict / eval / sweep.
// Data goes to files only; progress and errors go to stderr.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wsc/wsc.h"

namespace {

// Exit codes: 0 success, 2 validation or I/O error, 3 numerical abort.
int exit_code(wsc_status s) {
  switch (s) {
    case WSC_OK: return 0;
    case WSC_ERR_VALIDATION:
    case WSC_ERR_IO:
    case WSC_ERR_ARGUMENT: return 2;
    case WSC_ERR_NUMERICAL: return 3;
    case WSC_ERR_INTERNAL: return 1;
  }
  return 1;
}

struct Failure {
  int code;
};

void check(wsc_status s, const char* what) {
  if (s == WSC_OK) return;
  std::fprintf(stderr, "wsc: %s: %s\n", what, wsc_last_error());
  throw Failure{exit_code(s)};
}

// RAII holder for library handles.
template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(p); }
};

using Dataset = Handle<wsc_dataset, wsc_dataset_free>;
using GenConfig = Handle<wsc_gen_config, wsc_gen_config_free>;
using Model = Handle<wsc_model, wsc_model_free>;
using Report = Handle<wsc_fit_report, wsc_fit_report_free>;
using Predictions = Handle<wsc_predictions, wsc_predictions_free>;
using Metrics = Handle<wsc_metrics, wsc_metrics_free>;
using Sweep = Handle<wsc_sweep_result, wsc_sweep_free>;

struct FitFlags {
  wsc_fit_params p{};
  std::string variant = "wsc-siibp";
  std::vector<double> sigma_n2, sigma_a2;
  bool fixed_variances = false;

  FitFlags() { wsc_fit_params_default(&p); }

  void add_solver(CLI::App* cmd) {
    cmd->add_option("--seed", p.seed, "Seed recorded in every output")->capture_default_str();
    cmd->add_option("--threads", p.threads, "Worker threads for per-video updates")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--inner-iters", p.inner_max_iters, "Maximum sweeps per inner loop")
        ->capture_default_str();
    cmd->add_option("--inner-tol", p.inner_rel_tol, "Relative objective change to stop a loop")
        ->capture_default_str();
  }

  void add_model(CLI::App* cmd) {
    cmd->add_option("--alpha", p.alpha, "Stick-breaking concentration")->capture_default_str();
    cmd->add_option("--kmax", p.k_max, "Truncation level K_max")->capture_default_str();
    cmd->add_option("--c", p.penalty_c, "Constraint penalty C")->capture_default_str();
    cmd->add_option("--variant", variant,
                    "wsc-siibp, ws-siibp, wsc-sibp, ws-sibp, ws-s or ws-a")
        ->capture_default_str();
    cmd->add_option("--sigma-n2", sigma_n2, "Initial noise variance (subject action)")
        ->expected(2);
    cmd->add_option("--sigma-a2", sigma_a2, "Initial appearance variance (subject action)")
        ->expected(2);
    cmd->add_flag("--fixed-variances", fixed_variances, "Skip the outer variance updates");
    cmd->add_option("--outer-iters", p.outer_max_iters, "Maximum outer iterations")
        ->capture_default_str();
    cmd->add_option("--outer-tol", p.outer_rel_tol, "Relative change to stop the outer loop")
        ->capture_default_str();
    add_solver(cmd);
  }

  const wsc_fit_params& resolve() {
    check(wsc_parse_variant(variant.c_str(), &p.variant), "--variant");
    p.estimate_variances = fixed_variances ? 0 : 1;
    if (sigma_n2.size() == 2) std::copy(sigma_n2.begin(), sigma_n2.end(), p.sigma_n2);
    if (sigma_a2.size() == 2) std::copy(sigma_a2.begin(), sigma_a2.end(), p.sigma_a2);
    return p;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised concept learning with a constrained stacked IBP"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(wsc_version()));

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a synthetic dataset");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  gen->add_option("--config", gen_config, "Generator config JSON (defaults when omitted)");
  std::string gen_test_out;
  std::size_t gen_test_videos = 0;
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Overrides the config seed");
  gen->add_option("--out", gen_out, "Dataset JSON to write")->required();
  auto* gen_test_opt =
      gen->add_option("--test-out", gen_test_out, "Held-out dataset JSON sharing the same concepts");
  gen->add_option("--test-videos", gen_test_videos, "Videos in the held-out dataset")
      ->needs(gen_test_opt)
      ->check(CLI::PositiveNumber);

  // fit
  auto* fit = app.add_subcommand("fit", "Learn the appearance model from weakly labeled videos");
  FitFlags fit_flags;
  std::string fit_data, fit_model, fit_report, fit_trace;
  fit->add_option("--data", fit_data, "Training dataset JSON")->required();
  fit->add_option("--model", fit_model, "Model JSON to write")->required();
  fit->add_option("--report", fit_report, "Fit report JSON to write");
  fit->add_option("--trace", fit_trace, "Objective trace TSV to write");
  std::string fit_test_data, fit_test_out;
  bool fit_free_annotation = false;
  auto* fit_test_opt = fit->add_option("--test-data", fit_test_data,
                                       "Test dataset JSON inferred alongside training");
  fit->add_option("--test-out", fit_test_out, "Predictions JSON for --test-data")
      ->needs(fit_test_opt);
  fit_test_opt->needs(fit->get_option("--test-out"));
  fit->add_flag("--free-annotation", fit_free_annotation, "Ignore the test labels")
      ->needs(fit_test_opt);
  fit_flags.add_model(fit);

  // predict
  auto* pred = app.add_subcommand("predict", "Infer track posteriors on test videos");
  FitFlags pred_flags;
  std::string pred_model, pred_data, pred_out;
  bool free_annotation = false;
  pred->add_option("--model", pred_model, "Model JSON")->required();
  pred->add_option("--data", pred_data, "Test dataset JSON")->required();
  pred->add_option("--out", pred_out, "Predictions JSON to write")->required();
  pred->add_flag("--free-annotation", free_annotation, "Ignore the test labels");
  pred_flags.add_solver(pred);

  // eval
  auto* ev = app.add_subcommand("eval", "Decode predictions and score them");
  std::string ev_pred, ev_data, ev_out, ev_recall_s, ev_recall_a;
  double ev_theta = 0.5;
  ev->add_option("--predictions", ev_pred, "Predictions JSON")->required();
  ev->add_option("--data", ev_data, "Dataset JSON with ground truth")->required();
  ev->add_option("--out", ev_out, "Metrics JSON to write")->required();
  ev->add_option("--threshold", ev_theta, "Background threshold on nu")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  ev->add_option("--recall-subject", ev_recall_s, "Subject recall table TSV to write");
  ev->add_option("--recall-action", ev_recall_a, "Action recall table TSV to write");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Grid search on a validation split");
  FitFlags sw_flags;
  std::string sw_data, sw_grid, sw_out;
  double sw_fraction = 0.2;
  sw->add_option("--data", sw_data, "Dataset JSON")->required();
  sw->add_option("--grid", sw_grid, "e.g. 'kmax=8:10:28;alpha=3k:10:4k;c=0:0.5:5'")->required();
  sw->add_option("--out", sw_out, "Ranked TSV to write")->required();
  sw->add_option("--validation-fraction", sw_fraction, "Share of videos held out")
      ->capture_default_str();
  sw_flags.add_model(sw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      GenConfig cfg;
      if (gen_config.empty()) {
        check(wsc_gen_config_default(&cfg.p), "generate");
      } else {
        check(wsc_gen_config_load(gen_config.c_str(), &cfg.p), "generate");
      }
      if (*gen_seed_opt) check(wsc_gen_config_set_seed(cfg.p, gen_seed), "generate");
      if (*gen_test_opt && gen_test_videos == 0) {
        std::fprintf(stderr, "wsc: generate: --test-out needs --test-videos\n");
        return 2;
      }
      // Train and held-out videos come from one draw so they share concept appearances.
      const std::size_t n_train = wsc_gen_config_num_videos(cfg.p);
      check(wsc_gen_config_set_num_videos(cfg.p, n_train + gen_test_videos), "generate");
      Dataset all;
      check(wsc_generate(cfg.p, &all.p), "generate");
      Dataset train, test;
      check(wsc_dataset_split(all.p, n_train, &train.p, &test.p), "generate");
      check(wsc_dataset_save(train.p, gen_out.c_str()), "generate");
      std::fprintf(stderr, "wsc: wrote %zu videos, %zu tracks (seed %llu) to %s\n",
                   wsc_dataset_num_videos(train.p), wsc_dataset_num_tracks(train.p),
                   static_cast<unsigned long long>(wsc_gen_config_seed(cfg.p)), gen_out.c_str());
      if (gen_test_videos > 0) {
        check(wsc_dataset_save(test.p, gen_test_out.c_str()), "generate");
        std::fprintf(stderr, "wsc: wrote %zu held-out videos to %s\n",
                     wsc_dataset_num_videos(test.p), gen_test_out.c_str());
      }
    } else if (*fit) {
      const auto& params = fit_flags.resolve();
      Dataset ds;
      check(wsc_dataset_load(fit_data.c_str(), &ds.p), "fit");
      Model model;
      Report report;
      if (*fit_test_opt) {
        Dataset test;
        check(wsc_dataset_load(fit_test_data.c_str(), &test.p), "fit");
        Predictions p;
        check(wsc_fit_with_test(ds.p, test.p,
                                fit_free_annotation ? WSC_PREDICT_FREE_ANNOTATION
                                                    : WSC_PREDICT_WITH_LABELS,
                                &params, &model.p, &report.p, &p.p),
              "fit");
        check(wsc_predictions_save(p.p, fit_test_out.c_str()), "fit");
      } else {
        check(wsc_fit(ds.p, &params, &model.p, &report.p), "fit");
      }
      check(wsc_model_save(model.p, fit_model.c_str()), "fit");
      if (!fit_report.empty() || !fit_trace.empty()) {
        check(wsc_fit_report_save(report.p, fit_report.empty() ? nullptr : fit_report.c_str(),
                                  fit_trace.empty() ? nullptr : fit_trace.c_str()),
              "fit");
      }
      for (std::size_t i = 0; i < wsc_fit_report_num_warnings(report.p); ++i) {
        std::fprintf(stderr, "wsc: warning: %s\n", wsc_fit_report_warning(report.p, i));
      }
      std::fprintf(stderr, "wsc: %zu sweeps, objective %.6g, %zu videos with violated constraints\n",
                   wsc_fit_report_sweeps(report.p), wsc_fit_report_final_objective(report.p),
                   wsc_fit_report_bags_with_violation(report.p));
    } else if (*pred) {
      const auto& params = pred_flags.resolve();
      Model model;
      check(wsc_model_load(pred_model.c_str(), &model.p), "predict");
      Dataset ds;
      check(wsc_dataset_load(pred_data.c_str(), &ds.p), "predict");
      Predictions p;
      check(wsc_predict(model.p, ds.p,
                        free_annotation ? WSC_PREDICT_FREE_ANNOTATION : WSC_PREDICT_WITH_LABELS,
                        &params, &p.p),
            "predict");
      check(wsc_predictions_save(p.p, pred_out.c_str()), "predict");
    } else if (*ev) {
      Predictions p;
      check(wsc_predictions_load(ev_pred.c_str(), &p.p), "eval");
      Dataset ds;
      check(wsc_dataset_load(ev_data.c_str(), &ds.p), "eval");
      Metrics m;
      check(wsc_evaluate(p.p, ds.p, ev_theta, &m.p), "eval");
      check(wsc_metrics_save(m.p, ev_out.c_str()), "eval");
      if (!ev_recall_s.empty()) {
        check(wsc_metrics_save_recall_table(m.p, WSC_SUBJECT, ev_recall_s.c_str()), "eval");
      }
      if (!ev_recall_a.empty()) {
        check(wsc_metrics_save_recall_table(m.p, WSC_ACTION, ev_recall_a.c_str()), "eval");
      }
      std::fprintf(stderr, "wsc: pairwise %.4f subject %.4f action %.4f\n",
                   wsc_metrics_pairwise_accuracy(m.p), wsc_metrics_subject_accuracy(m.p),
                   wsc_metrics_action_accuracy(m.p));
    } else if (*sw) {
      const auto& params = sw_flags.resolve();
      Dataset ds;
      check(wsc_dataset_load(sw_data.c_str(), &ds.p), "sweep");
      Sweep s;
      check(wsc_sweep(ds.p, sw_grid.c_str(), &params, sw_fraction, &s.p), "sweep");
      check(wsc_sweep_save_table(s.p, sw_out.c_str()), "sweep");
      std::fprintf(stderr, "wsc: %zu grid points ranked in %s\n", wsc_sweep_num_rows(s.p),
                   sw_out.c_str());
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
