#include "wsc/io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "wsc/errors.hpp"

namespace wsc::io {

namespace {

using Index = Eigen::Index;

[[noreturn]] void schema_error(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}

std::string at(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

std::string at(const std::string& where, std::size_t i) {
  return where + "[" + std::to_string(i) + "]";
}

const json& member(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object()) schema_error(where.empty() ? "<root>" : where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) schema_error(at(where, key), "missing");
  return *it;
}

const json* optional_member(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

double real(const json& j, const std::string& where) {
  if (!j.is_number()) schema_error(where, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) schema_error(where, "non-finite number");
  return v;
}

std::uint64_t unsigned_int(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(j.get<std::int64_t>());
  }
  schema_error(where, "expected a non-negative integer");
}

std::size_t count(const json& j, const std::string& where) {
  return static_cast<std::size_t>(unsigned_int(j, where));
}

bool boolean(const json& j, const std::string& where) {
  if (!j.is_boolean()) schema_error(where, "expected true or false");
  return j.get<bool>();
}

std::string string(const json& j, const std::string& where) {
  if (!j.is_string()) schema_error(where, "expected a string");
  return j.get<std::string>();
}

const json& array(const json& j, const std::string& where) {
  if (!j.is_array()) schema_error(where, "expected an array");
  return j;
}

std::optional<std::size_t> index_or_null(const json& j, const std::string& where) {
  if (j.is_null()) return std::nullopt;
  return count(j, where);
}

json index_json(const std::optional<std::size_t>& v) {
  return v ? json(*v) : json(nullptr);
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from(const json& j, const std::string& where) {
  array(j, where);
  Eigen::VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = real(j[i], at(where, i));
  return v;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) out.push_back(vector_json(m.row(r).transpose()));
  return out;
}

Eigen::MatrixXd matrix_from(const json& j, const std::string& where, Index cols) {
  array(j, where);
  Eigen::MatrixXd m(static_cast<Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row_at = at(where, r);
    const auto row = vector_from(j[r], row_at);
    if (row.size() != cols) {
      schema_error(row_at, "row length " + std::to_string(row.size()) + " ≠ " +
                               std::to_string(cols));
    }
    m.row(static_cast<Index>(r)) = row.transpose();
  }
  return m;
}

json per_concept(const std::array<double, kNumConcepts>& v) {
  return {{"subject", v[0]}, {"action", v[1]}};
}

std::array<double, kNumConcepts> per_concept_from(const json& j, const std::string& where) {
  return {real(member(j, "subject", where), at(where, "subject")),
          real(member(j, "action", where), at(where, "action"))};
}

void check_version(const json& j) {
  const auto v = unsigned_int(member(j, "format_version", ""), "format_version");
  if (v != static_cast<std::uint64_t>(kFormatVersion)) {
    schema_error("format_version", "unknown version " + std::to_string(v));
  }
}

Concept concept_from(const json& j, const std::string& where) {
  const auto s = string(j, where);
  if (s == "subject") return Concept::subject;
  if (s == "action") return Concept::action;
  schema_error(where, "unknown concept '" + s + "'");
}

Variant variant_from(const json& j, const std::string& where) {
  const auto s = string(j, where);
  const auto v = parse_variant(s);
  if (!v) schema_error(where, "unknown variant '" + s + "'");
  return *v;
}

const char* mode_name(PredictMode m) {
  return m == PredictMode::with_labels ? "with_labels" : "free_annotation";
}

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const ConceptSpace& space) {
  return {{"num_subjects", space.num_subjects},
          {"num_actions", space.num_actions},
          {"num_background", space.num_background},
          {"feature_dims",
           {{"subject", space.dim(Concept::subject)}, {"action", space.dim(Concept::action)}}}};
}

ConceptSpace space_from_json(const json& j, const std::string& where) {
  ConceptSpace sp;
  sp.num_subjects = count(member(j, "num_subjects", where), at(where, "num_subjects"));
  sp.num_actions = count(member(j, "num_actions", where), at(where, "num_actions"));
  sp.num_background = count(member(j, "num_background", where), at(where, "num_background"));
  const auto dw = at(where, "feature_dims");
  const auto& d = member(j, "feature_dims", where);
  sp.feature_dims = {count(member(d, "subject", dw), at(dw, "subject")),
                     count(member(d, "action", dw), at(dw, "action"))};
  try {
    sp.validate();
  } catch (const ValidationError& e) {
    schema_error(where, e.what());
  }
  return sp;
}

json to_json(const Dataset& dataset) {
  json videos = json::array();
  for (const auto& v : dataset.videos) {
    json labels = json::array();
    for (const auto& l : v.labels) labels.push_back({index_json(l.subject), index_json(l.action)});
    json tracks = json::array();
    for (const auto& t : v.tracks) {
      json tr = {{"feat_subject", vector_json(t.feat_subject)},
                 {"feat_action", vector_json(t.feat_action)}};
      if (t.ground_truth) {
        tr["ground_truth"] = {index_json(t.ground_truth->subject),
                              index_json(t.ground_truth->action)};
      }
      tracks.push_back(std::move(tr));
    }
    videos.push_back({{"id", v.id}, {"labels", std::move(labels)}, {"tracks", std::move(tracks)}});
  }
  json out = {{"format_version", kFormatVersion},
              {"concept_space", to_json(dataset.space)},
              {"videos", std::move(videos)}};
  if (dataset.generator_seed) out["generator_seed"] = *dataset.generator_seed;
  return out;
}

Dataset dataset_from_json(const json& j) {
  check_version(j);
  Dataset ds;
  ds.space = space_from_json(member(j, "concept_space", ""), "concept_space");
  if (const auto* s = optional_member(j, "generator_seed")) {
    ds.generator_seed = unsigned_int(*s, "generator_seed");
  }
  const auto& videos = array(member(j, "videos", ""), "videos");
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto vw = at("videos", i);
    const auto& vj = videos[i];
    VideoBag bag;
    bag.id = string(member(vj, "id", vw), at(vw, "id"));

    const auto lw = at(vw, "labels");
    const auto& labels = array(member(vj, "labels", vw), lw);
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const auto ew = at(lw, l);
      if (!labels[l].is_array() || labels[l].size() != 2) {
        schema_error(ew, "expected [subject or null, action or null]");
      }
      bag.labels.push_back({index_or_null(labels[l][0], at(ew, 0)),
                            index_or_null(labels[l][1], at(ew, 1))});
    }

    const auto tw = at(vw, "tracks");
    const auto& tracks = array(member(vj, "tracks", vw), tw);
    for (std::size_t t = 0; t < tracks.size(); ++t) {
      const auto ew = at(tw, t);
      Track tr;
      tr.feat_subject = vector_from(member(tracks[t], "feat_subject", ew), at(ew, "feat_subject"));
      tr.feat_action = vector_from(member(tracks[t], "feat_action", ew), at(ew, "feat_action"));
      if (const auto* g = optional_member(tracks[t], "ground_truth"); g && !g->is_null()) {
        const auto gw = at(ew, "ground_truth");
        if (!g->is_array() || g->size() != 2) {
          schema_error(gw, "expected [subject or null, action or null]");
        }
        tr.ground_truth = GroundTruth{index_or_null((*g)[0], at(gw, 0)),
                                      index_or_null((*g)[1], at(gw, 1))};
      }
      bag.tracks.push_back(std::move(tr));
    }
    ds.videos.push_back(std::move(bag));
  }
  validate_dataset(ds);
  return ds;
}

json to_json(const GenConfig& cfg) {
  return {{"concept_space", to_json(cfg.space)},
          {"num_videos", cfg.num_videos},
          {"tracks_per_video", {cfg.tracks_min, cfg.tracks_max}},
          {"alpha", cfg.alpha},
          {"sigma_n2", per_concept(cfg.sigma_n2)},
          {"sigma_a2", per_concept(cfg.sigma_a2)},
          {"label_noise", cfg.label_noise},
          {"seed", cfg.seed},
          {"k_max", cfg.k_max},
          {"max_rejections", cfg.max_rejections}};
}

GenConfig gen_config_from_json(const json& j) {
  if (!j.is_object()) schema_error("<root>", "expected an object");
  static const std::set<std::string> known = {
      "concept_space", "num_videos", "tracks_per_video", "alpha",  "sigma_n2",
      "sigma_a2",      "label_noise", "seed",            "k_max",  "max_rejections"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) schema_error(key, "unknown key");
  }
  GenConfig cfg;
  if (const auto* v = optional_member(j, "concept_space")) {
    cfg.space = space_from_json(*v, "concept_space");
  }
  if (const auto* v = optional_member(j, "num_videos")) cfg.num_videos = count(*v, "num_videos");
  if (const auto* v = optional_member(j, "tracks_per_video")) {
    if (v->is_array()) {
      if (v->size() != 2) schema_error("tracks_per_video", "expected n or [min, max]");
      cfg.tracks_min = count((*v)[0], "tracks_per_video[0]");
      cfg.tracks_max = count((*v)[1], "tracks_per_video[1]");
    } else {
      cfg.tracks_min = cfg.tracks_max = count(*v, "tracks_per_video");
    }
  }
  if (const auto* v = optional_member(j, "alpha")) cfg.alpha = real(*v, "alpha");
  if (const auto* v = optional_member(j, "sigma_n2")) cfg.sigma_n2 = per_concept_from(*v, "sigma_n2");
  if (const auto* v = optional_member(j, "sigma_a2")) cfg.sigma_a2 = per_concept_from(*v, "sigma_a2");
  if (const auto* v = optional_member(j, "label_noise")) cfg.label_noise = real(*v, "label_noise");
  if (const auto* v = optional_member(j, "seed")) cfg.seed = unsigned_int(*v, "seed");
  if (const auto* v = optional_member(j, "k_max")) cfg.k_max = count(*v, "k_max");
  if (const auto* v = optional_member(j, "max_rejections")) {
    cfg.max_rejections = count(*v, "max_rejections");
  }
  cfg.validate();
  return cfg;
}

json to_json(const HyperParams& hp) {
  return {{"alpha", hp.alpha},
          {"penalty_c", hp.penalty_c},
          {"k_max", hp.k_max},
          {"sigma_n2", per_concept(hp.sigma_n2)},
          {"sigma_a2", per_concept(hp.sigma_a2)},
          {"estimate_variances", hp.estimate_variances}};
}

HyperParams hyperparams_from_json(const json& j, const std::string& where) {
  HyperParams hp;
  hp.alpha = real(member(j, "alpha", where), at(where, "alpha"));
  hp.penalty_c = real(member(j, "penalty_c", where), at(where, "penalty_c"));
  hp.k_max = count(member(j, "k_max", where), at(where, "k_max"));
  hp.sigma_n2 = per_concept_from(member(j, "sigma_n2", where), at(where, "sigma_n2"));
  hp.sigma_a2 = per_concept_from(member(j, "sigma_a2", where), at(where, "sigma_a2"));
  hp.estimate_variances =
      boolean(member(j, "estimate_variances", where), at(where, "estimate_variances"));
  return hp;
}

json to_json(const TrainedModel& model) {
  json channels = json::array();
  for (const auto& ch : model.channels) {
    json parts = json::array();
    for (auto c : ch.parts) parts.push_back(concept_name(c));
    channels.push_back({{"parts", std::move(parts)},
                        {"dim", ch.dim},
                        {"sigma_n2", ch.sigma_n2},
                        {"sigma_a2", ch.sigma_a2},
                        {"sigma_k2", vector_json(ch.sigma_k2)},
                        {"phi", matrix_json(ch.phi)}});
  }
  const auto& f = model.fit;
  return {{"format_version", kFormatVersion},
          {"concept_space", to_json(model.space)},
          {"variant", std::string(variant_name(model.variant))},
          {"hyperparams", to_json(model.hp)},
          {"channels", std::move(channels)},
          {"fit",
           {{"sweeps", f.sweeps},
            {"outer_iterations", f.outer_iterations},
            {"final_objective", f.final_objective},
            {"seed", f.seed},
            {"inner_max_iters", f.inner_max_iters},
            {"outer_max_iters", f.outer_max_iters},
            {"inner_rel_tol", f.inner_rel_tol},
            {"outer_rel_tol", f.outer_rel_tol}}}};
}

TrainedModel model_from_json(const json& j) {
  check_version(j);
  TrainedModel m;
  m.space = space_from_json(member(j, "concept_space", ""), "concept_space");
  m.variant = variant_from(member(j, "variant", ""), "variant");
  m.hp = hyperparams_from_json(member(j, "hyperparams", ""), "hyperparams");
  try {
    m.hp.validate(m.space);
  } catch (const ValidationError& e) {
    schema_error("hyperparams", e.what());
  }

  const auto layout = channel_layout(m.variant);
  const auto& channels = array(member(j, "channels", ""), "channels");
  if (channels.size() != layout.size()) {
    schema_error("channels", "variant " + std::string(variant_name(m.variant)) + " needs " +
                                 std::to_string(layout.size()) + " channel(s)");
  }
  const auto kk = static_cast<Index>(m.hp.k_max);
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto cw = at("channels", c);
    const auto& cj = channels[c];
    ChannelParams ch;
    const auto pw = at(cw, "parts");
    const auto& parts = array(member(cj, "parts", cw), pw);
    for (std::size_t p = 0; p < parts.size(); ++p) ch.parts.push_back(concept_from(parts[p], at(pw, p)));
    if (ch.parts != layout[c]) schema_error(pw, "does not match the variant's channel layout");
    std::size_t expected_dim = 0;
    for (auto e : ch.parts) expected_dim += m.space.dim(e);
    ch.dim = count(member(cj, "dim", cw), at(cw, "dim"));
    if (ch.dim != expected_dim) {
      schema_error(at(cw, "dim"), std::to_string(ch.dim) + " ≠ " + std::to_string(expected_dim));
    }
    ch.sigma_n2 = real(member(cj, "sigma_n2", cw), at(cw, "sigma_n2"));
    ch.sigma_a2 = real(member(cj, "sigma_a2", cw), at(cw, "sigma_a2"));
    if (!(ch.sigma_n2 > 0.0) || !(ch.sigma_a2 > 0.0)) schema_error(cw, "variances must be > 0");
    ch.sigma_k2 = vector_from(member(cj, "sigma_k2", cw), at(cw, "sigma_k2"));
    if (ch.sigma_k2.size() != kk) {
      schema_error(at(cw, "sigma_k2"), "length " + std::to_string(ch.sigma_k2.size()) + " ≠ k_max " +
                                           std::to_string(kk));
    }
    if ((ch.sigma_k2.array() <= 0.0).any()) schema_error(at(cw, "sigma_k2"), "entries must be > 0");
    ch.phi = matrix_from(member(cj, "phi", cw), at(cw, "phi"), static_cast<Index>(ch.dim));
    if (ch.phi.rows() != kk) {
      schema_error(at(cw, "phi"), std::to_string(ch.phi.rows()) + " rows ≠ k_max " +
                                      std::to_string(kk));
    }
    m.channels.push_back(std::move(ch));
  }

  const auto& f = member(j, "fit", "");
  m.fit.sweeps = count(member(f, "sweeps", "fit"), "fit.sweeps");
  m.fit.outer_iterations = count(member(f, "outer_iterations", "fit"), "fit.outer_iterations");
  m.fit.final_objective = real(member(f, "final_objective", "fit"), "fit.final_objective");
  m.fit.seed = unsigned_int(member(f, "seed", "fit"), "fit.seed");
  m.fit.inner_max_iters = count(member(f, "inner_max_iters", "fit"), "fit.inner_max_iters");
  m.fit.outer_max_iters = count(member(f, "outer_max_iters", "fit"), "fit.outer_max_iters");
  m.fit.inner_rel_tol = real(member(f, "inner_rel_tol", "fit"), "fit.inner_rel_tol");
  m.fit.outer_rel_tol = real(member(f, "outer_rel_tol", "fit"), "fit.outer_rel_tol");
  return m;
}

json to_json(const FitReport& report, Variant variant, std::uint64_t seed) {
  json trace = json::array();
  for (const auto& [it, obj] : report.trace) trace.push_back({it, obj});
  return {{"format_version", kFormatVersion},
          {"variant", std::string(variant_name(variant))},
          {"seed", seed},
          {"objective_trace", std::move(trace)},
          {"inner_converged", report.inner_converged},
          {"outer_converged", report.outer_converged},
          {"sweeps", report.sweeps},
          {"outer_iterations", report.outer_iterations},
          {"final_objective", report.final_objective},
          {"bags_with_violation", report.bags_with_violation},
          {"violated_constraints", report.violated_constraints},
          {"warnings", report.warnings}};
}

json to_json(const Predictions& p) {
  json videos = json::array();
  for (std::size_t i = 0; i < p.bags.size(); ++i) {
    videos.push_back(
        {{"id", p.ids[i]}, {"tau", matrix_json(p.bags[i].tau)}, {"nu", matrix_json(p.bags[i].nu)}});
  }
  const auto k_max = p.bags.empty() ? 0 : static_cast<std::size_t>(p.bags.front().tau.rows());
  return {{"format_version", kFormatVersion},
          {"mode", mode_name(p.mode)},
          {"variant", std::string(variant_name(p.variant))},
          {"seed", p.seed},
          {"k_max", k_max},
          {"videos", std::move(videos)}};
}

Predictions predictions_from_json(const json& j) {
  check_version(j);
  Predictions p;
  const auto mode = string(member(j, "mode", ""), "mode");
  if (mode == "with_labels") {
    p.mode = PredictMode::with_labels;
  } else if (mode == "free_annotation") {
    p.mode = PredictMode::free_annotation;
  } else {
    schema_error("mode", "unknown mode '" + mode + "'");
  }
  p.variant = variant_from(member(j, "variant", ""), "variant");
  p.seed = unsigned_int(member(j, "seed", ""), "seed");
  const auto kk = static_cast<Index>(count(member(j, "k_max", ""), "k_max"));
  const auto& videos = array(member(j, "videos", ""), "videos");
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto vw = at("videos", i);
    p.ids.push_back(string(member(videos[i], "id", vw), at(vw, "id")));
    BagState b;
    b.tau = matrix_from(member(videos[i], "tau", vw), at(vw, "tau"), 2);
    b.nu = matrix_from(member(videos[i], "nu", vw), at(vw, "nu"), kk);
    if (b.tau.rows() != kk) schema_error(at(vw, "tau"), "row count ≠ k_max");
    if ((b.tau.array() <= 0.0).any()) schema_error(at(vw, "tau"), "entries must be > 0");
    if ((b.nu.array() < 0.0).any() || (b.nu.array() > 1.0).any()) {
      schema_error(at(vw, "nu"), "entries must lie in [0, 1]");
    }
    p.bags.push_back(std::move(b));
  }
  return p;
}

json to_json(const MetricsReport& m, double theta_bg) {
  auto classes = [](const std::vector<ClassMetrics>& cs) {
    json out = json::array();
    for (std::size_t c = 0; c < cs.size(); ++c) {
      out.push_back({{"class", c},
                     {"support", cs[c].support},
                     {"recall", cs[c].recall},
                     {"average_precision", cs[c].average_precision
                                               ? json(*cs[c].average_precision)
                                               : json(nullptr)}});
    }
    return out;
  };
  return {{"format_version", kFormatVersion},
          {"background_threshold", theta_bg},
          {"num_tracks", m.num_tracks},
          {"subject_accuracy", m.subject_accuracy},
          {"action_accuracy", m.action_accuracy},
          {"num_pair_tracks", m.num_pair_tracks},
          {"pairwise_accuracy", m.pairwise_accuracy},
          {"pair_subject_accuracy", m.pair_subject_accuracy},
          {"pair_action_accuracy", m.pair_action_accuracy},
          {"map_subject", m.map_subject},
          {"map_action", m.map_action},
          {"localization_queries", m.localization_queries},
          {"localization_hit_rate", m.localization_hit_rate},
          {"subject_classes", classes(m.subject_classes)},
          {"action_classes", classes(m.action_classes)}};
}

json to_json(const std::vector<RecallPoint>& sweep) {
  json out = json::array();
  for (const auto& p : sweep) {
    out.push_back({{"theta", p.theta},
                   {"background_recall", p.background_recall},
                   {"nonbackground_recall", p.nonbackground_recall}});
  }
  return out;
}

// ---------------------------------------------------------------------------

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("write to " + path.string() + " failed");
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(1) + "\n");
}

namespace {

template <typename Fn>
auto with_path(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn(read_json(path));
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    const std::string prefix = path.string() + ": ";
    if (msg.rfind(prefix, 0) == 0) throw;
    throw ValidationError(prefix + msg);
  }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  return with_path(path, [](const json& j) { return dataset_from_json(j); });
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  write_json(path, to_json(dataset));
}

GenConfig load_gen_config(const std::filesystem::path& path) {
  return with_path(path, [](const json& j) { return gen_config_from_json(j); });
}

TrainedModel load_model(const std::filesystem::path& path) {
  return with_path(path, [](const json& j) { return model_from_json(j); });
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_json(path, to_json(model));
}

Predictions load_predictions(const std::filesystem::path& path) {
  return with_path(path, [](const json& j) { return predictions_from_json(j); });
}

void save_predictions(const Predictions& p, const std::filesystem::path& path) {
  write_json(path, to_json(p));
}

namespace {

std::string fmt(double v) { return json(v).dump(); }

}  // namespace

std::string recall_table(const std::vector<RecallPoint>& sweep) {
  std::ostringstream os;
  os << "theta\tbackground_recall\tnonbackground_recall\n";
  for (const auto& p : sweep) {
    os << fmt(p.theta) << '\t' << fmt(p.background_recall) << '\t'
       << fmt(p.nonbackground_recall) << '\n';
  }
  return os.str();
}

std::string trace_table(const FitReport& report) {
  std::ostringstream os;
  os << "iteration\tobjective\n";
  for (const auto& [it, obj] : report.trace) os << it << '\t' << fmt(obj) << '\n';
  return os.str();
}

}  // namespace wsc::io
