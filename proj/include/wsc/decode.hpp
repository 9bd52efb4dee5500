#pragma once

// Track labelling, localization and scoring against planted ground truth.

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wsc/types.hpp"

namespace wsc {

inline constexpr double kDefaultBackgroundThreshold = 0.5;

struct DecodedBag {
  /// Per track; empty means background.
  std::vector<std::optional<std::size_t>> subject;
  std::vector<std::optional<std::size_t>> action;
  /// Selected track per label tuple of the bag.
  std::vector<std::pair<LabelTuple, std::size_t>> localization;
};

/// Argmax of nu over the concept's factor range. Background when the winner is
/// below `theta_bg` or every candidate is zero. Ties go to the lowest index.
std::optional<std::size_t> decode_track(const Eigen::MatrixXd& nu, std::size_t track,
                                        const ConceptSpace& space, Concept which,
                                        double theta_bg = kDefaultBackgroundThreshold);

/// Track maximizing nu_js * nu_ja (or the single nu for a singleton tuple).
/// Throws ValidationError when the tuple is not among `labels`.
std::size_t localize(const Eigen::MatrixXd& nu, const ConceptSpace& space,
                     const std::vector<LabelTuple>& labels, const LabelTuple& tuple);

DecodedBag decode_bag(const Eigen::MatrixXd& nu, const ConceptSpace& space,
                      const std::vector<LabelTuple>& labels,
                      double theta_bg = kDefaultBackgroundThreshold);

struct ClassMetrics {
  std::size_t support = 0;
  double recall = 0.0;
  /// Empty when the class has no positive track.
  std::optional<double> average_precision;
};

struct MetricsReport {
  std::size_t num_tracks = 0;
  double subject_accuracy = 0.0;
  double action_accuracy = 0.0;
  /// Over tracks whose planted subject and action are both non-background.
  std::size_t num_pair_tracks = 0;
  double pairwise_accuracy = 0.0;
  double pair_subject_accuracy = 0.0;
  double pair_action_accuracy = 0.0;
  double map_subject = 0.0;
  double map_action = 0.0;
  std::size_t localization_queries = 0;
  double localization_hit_rate = 0.0;
  std::vector<ClassMetrics> subject_classes;
  std::vector<ClassMetrics> action_classes;
};

/// Average precision of one ranked list: scores sorted descending, ties by index.
std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<bool>& positive);

/// Requires ground truth on every track.
MetricsReport score(const std::vector<DecodedBag>& decoded,
                    const std::vector<Eigen::MatrixXd>& nu, const Dataset& dataset);

/// Decodes every bag and scores the result.
MetricsReport evaluate(const std::vector<Eigen::MatrixXd>& nu, const Dataset& dataset,
                       double theta_bg = kDefaultBackgroundThreshold);

struct RecallPoint {
  double theta = 0.0;
  double background_recall = 0.0;
  double nonbackground_recall = 0.0;
};

/// Background vs non-background recall for theta in {0, 0.05, ..., 1}.
std::vector<RecallPoint> recall_sweep(const std::vector<Eigen::MatrixXd>& nu,
                                      const Dataset& dataset, Concept which);

}  // namespace wsc
