#include "wsc/decode.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "wsc/errors.hpp"

namespace wsc {

namespace {

using Index = Eigen::Index;

std::size_t class_count(const ConceptSpace& sp, Concept c) {
  return c == Concept::subject ? sp.num_subjects : sp.num_actions;
}

std::size_t factor_of(const ConceptSpace& sp, Concept c, std::size_t cls) {
  return c == Concept::subject ? sp.subject_factor(cls) : sp.action_factor(cls);
}

const std::optional<std::size_t>& truth_of(const GroundTruth& g, Concept c) {
  return c == Concept::subject ? g.subject : g.action;
}

double fraction(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::optional<std::size_t> decode_track(const Eigen::MatrixXd& nu, std::size_t track,
                                        const ConceptSpace& space, Concept which,
                                        double theta_bg) {
  const std::size_t n = class_count(space, which);
  std::optional<std::size_t> best;
  double best_v = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double v = nu(static_cast<Index>(track), static_cast<Index>(factor_of(space, which, c)));
    if (!best || v > best_v) {
      best = c;
      best_v = v;
    }
  }
  if (!best || best_v <= 0.0 || best_v < theta_bg) return std::nullopt;
  return best;
}

std::size_t localize(const Eigen::MatrixXd& nu, const ConceptSpace& space,
                     const std::vector<LabelTuple>& labels, const LabelTuple& tuple) {
  if (std::find(labels.begin(), labels.end(), tuple) == labels.end()) {
    throw ValidationError("label tuple is not in the bag's label set");
  }
  std::size_t best = 0;
  double best_v = -1.0;
  for (Index j = 0; j < nu.rows(); ++j) {
    double v = 1.0;
    if (tuple.subject) v *= nu(j, static_cast<Index>(space.subject_factor(*tuple.subject)));
    if (tuple.action) v *= nu(j, static_cast<Index>(space.action_factor(*tuple.action)));
    if (v > best_v) {
      best_v = v;
      best = static_cast<std::size_t>(j);
    }
  }
  return best;
}

DecodedBag decode_bag(const Eigen::MatrixXd& nu, const ConceptSpace& space,
                      const std::vector<LabelTuple>& labels, double theta_bg) {
  DecodedBag out;
  for (Index j = 0; j < nu.rows(); ++j) {
    const auto t = static_cast<std::size_t>(j);
    out.subject.push_back(decode_track(nu, t, space, Concept::subject, theta_bg));
    out.action.push_back(decode_track(nu, t, space, Concept::action, theta_bg));
  }
  for (const auto& l : dedup_labels(labels)) {
    out.localization.emplace_back(l, localize(nu, space, labels, l));
  }
  return out;
}

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[order[r]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

MetricsReport score(const std::vector<DecodedBag>& decoded,
                    const std::vector<Eigen::MatrixXd>& nu, const Dataset& dataset) {
  const auto& sp = dataset.space;
  if (decoded.size() != dataset.videos.size() || nu.size() != dataset.videos.size()) {
    throw ValidationError("decoded bags do not match the dataset");
  }
  MetricsReport r;
  std::size_t subj_ok = 0, act_ok = 0, pair_ok = 0, pair_s_ok = 0, pair_a_ok = 0;
  std::size_t hits = 0;

  std::array<std::vector<std::vector<double>>, kNumConcepts> scores;
  std::array<std::vector<std::vector<bool>>, kNumConcepts> positives;
  std::array<std::vector<std::size_t>, kNumConcepts> support, correct;
  for (auto c : {Concept::subject, Concept::action}) {
    const auto e = index_of(c);
    scores[e].resize(class_count(sp, c));
    positives[e].resize(class_count(sp, c));
    support[e].assign(class_count(sp, c), 0);
    correct[e].assign(class_count(sp, c), 0);
  }

  for (std::size_t i = 0; i < dataset.videos.size(); ++i) {
    const auto& bag = dataset.videos[i];
    const auto& d = decoded[i];
    if (d.subject.size() != bag.tracks.size() || nu[i].rows() != static_cast<Index>(bag.tracks.size())) {
      throw ValidationError("decoded track count mismatch in video " + bag.id);
    }
    for (std::size_t j = 0; j < bag.tracks.size(); ++j) {
      const auto& gt_opt = bag.tracks[j].ground_truth;
      if (!gt_opt) {
        std::ostringstream os;
        os << "missing ground truth at video " << bag.id << " track " << j;
        throw ValidationError(os.str());
      }
      const auto& gt = *gt_opt;
      ++r.num_tracks;
      const bool s_ok = d.subject[j] == gt.subject;
      const bool a_ok = d.action[j] == gt.action;
      subj_ok += s_ok;
      act_ok += a_ok;
      if (gt.subject && gt.action) {
        ++r.num_pair_tracks;
        pair_ok += s_ok && a_ok;
        pair_s_ok += s_ok;
        pair_a_ok += a_ok;
      }
      for (auto c : {Concept::subject, Concept::action}) {
        const auto e = index_of(c);
        const auto& truth = truth_of(gt, c);
        const auto& pred = c == Concept::subject ? d.subject[j] : d.action[j];
        if (truth) {
          ++support[e][*truth];
          if (pred == truth) ++correct[e][*truth];
        }
        for (std::size_t cls = 0; cls < class_count(sp, c); ++cls) {
          scores[e][cls].push_back(nu[i](static_cast<Index>(j),
                                         static_cast<Index>(factor_of(sp, c, cls))));
          positives[e][cls].push_back(truth == cls);
        }
      }
    }
    for (const auto& [tuple, track] : d.localization) {
      ++r.localization_queries;
      const auto& gt = *bag.tracks.at(track).ground_truth;
      bool hit = true;
      if (tuple.subject) hit = hit && gt.subject == tuple.subject;
      if (tuple.action) hit = hit && gt.action == tuple.action;
      hits += hit;
    }
  }

  r.subject_accuracy = fraction(subj_ok, r.num_tracks);
  r.action_accuracy = fraction(act_ok, r.num_tracks);
  r.pairwise_accuracy = fraction(pair_ok, r.num_pair_tracks);
  r.pair_subject_accuracy = fraction(pair_s_ok, r.num_pair_tracks);
  r.pair_action_accuracy = fraction(pair_a_ok, r.num_pair_tracks);
  r.localization_hit_rate = fraction(hits, r.localization_queries);

  for (auto c : {Concept::subject, Concept::action}) {
    const auto e = index_of(c);
    auto& classes = c == Concept::subject ? r.subject_classes : r.action_classes;
    double ap_sum = 0.0;
    std::size_t ap_n = 0;
    for (std::size_t cls = 0; cls < class_count(sp, c); ++cls) {
      ClassMetrics m;
      m.support = support[e][cls];
      m.recall = fraction(correct[e][cls], support[e][cls]);
      m.average_precision = average_precision(scores[e][cls], positives[e][cls]);
      if (m.average_precision) {
        ap_sum += *m.average_precision;
        ++ap_n;
      }
      classes.push_back(m);
    }
    (c == Concept::subject ? r.map_subject : r.map_action) =
        ap_n ? ap_sum / static_cast<double>(ap_n) : 0.0;
  }
  return r;
}

MetricsReport evaluate(const std::vector<Eigen::MatrixXd>& nu, const Dataset& dataset,
                       double theta_bg) {
  std::vector<DecodedBag> decoded;
  decoded.reserve(nu.size());
  for (std::size_t i = 0; i < nu.size() && i < dataset.videos.size(); ++i) {
    decoded.push_back(decode_bag(nu[i], dataset.space, dataset.videos[i].labels, theta_bg));
  }
  return score(decoded, nu, dataset);
}

std::vector<RecallPoint> recall_sweep(const std::vector<Eigen::MatrixXd>& nu,
                                      const Dataset& dataset, Concept which) {
  std::vector<RecallPoint> out;
  for (int step = 0; step <= 20; ++step) {
    const double theta = 0.05 * step;
    std::size_t bg = 0, bg_ok = 0, fg = 0, fg_ok = 0;
    for (std::size_t i = 0; i < dataset.videos.size(); ++i) {
      const auto& bag = dataset.videos[i];
      for (std::size_t j = 0; j < bag.tracks.size(); ++j) {
        if (!bag.tracks[j].ground_truth) {
          throw ValidationError("missing ground truth at video " + bag.id);
        }
        const auto& truth = truth_of(*bag.tracks[j].ground_truth, which);
        const auto pred = decode_track(nu[i], j, dataset.space, which, theta);
        if (truth) {
          ++fg;
          fg_ok += pred == truth;
        } else {
          ++bg;
          bg_ok += !pred.has_value();
        }
      }
    }
    out.push_back({theta, fraction(bg_ok, bg), fraction(fg_ok, fg)});
  }
  return out;
}

}  // namespace wsc
