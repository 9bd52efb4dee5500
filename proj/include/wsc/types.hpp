#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <compare>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wsc {

/// The two heterogeneous concept types. Used to index per-concept arrays.
enum class Concept : std::size_t { subject = 0, action = 1 };

inline constexpr std::size_t kNumConcepts = 2;

inline constexpr std::size_t index_of(Concept c) { return static_cast<std::size_t>(c); }
const char* concept_name(Concept c);

/// Class inventory and feature dimensions.
///
/// Factor layout is fixed: factors [0, K_s) are subject classes, [K_s, K_s + K_a)
/// are action classes and every factor after that is background.
struct ConceptSpace {
  std::size_t num_subjects = 0;
  std::size_t num_actions = 0;
  std::size_t num_background = 0;
  std::array<std::size_t, kNumConcepts> feature_dims{1, 1};

  std::size_t num_labeled() const { return num_subjects + num_actions; }
  std::size_t dim(Concept c) const { return feature_dims[index_of(c)]; }
  std::size_t subject_factor(std::size_t s) const { return s; }
  std::size_t action_factor(std::size_t a) const { return num_subjects + a; }

  /// Throws ValidationError when a dimension is zero.
  void validate() const;

  bool operator==(const ConceptSpace&) const = default;
};

/// One element of a bag's weak label set. Class indices are 0-based.
struct LabelTuple {
  std::optional<std::size_t> subject;
  std::optional<std::size_t> action;

  bool is_pair() const { return subject && action; }

  auto operator<=>(const LabelTuple&) const = default;
  bool operator==(const LabelTuple&) const = default;
};

/// Planted per-track labels. An empty optional means background.
struct GroundTruth {
  std::optional<std::size_t> subject;
  std::optional<std::size_t> action;

  bool operator==(const GroundTruth&) const = default;
};

struct Track {
  Eigen::VectorXd feat_subject;
  Eigen::VectorXd feat_action;
  std::optional<GroundTruth> ground_truth;

  const Eigen::VectorXd& features(Concept c) const {
    return c == Concept::subject ? feat_subject : feat_action;
  }

  bool operator==(const Track& o) const {
    return feat_subject == o.feat_subject && feat_action == o.feat_action &&
           ground_truth == o.ground_truth;
  }
};

struct VideoBag {
  std::string id;
  std::vector<Track> tracks;
  std::vector<LabelTuple> labels;

  bool operator==(const VideoBag&) const = default;
};

struct Dataset {
  ConceptSpace space;
  std::vector<VideoBag> videos;
  /// Seed of the generator that produced this dataset, if any.
  std::optional<std::uint64_t> generator_seed;

  std::size_t total_tracks() const;
  bool operator==(const Dataset&) const = default;
};

/// Removes duplicate tuples, keeping first occurrences in order.
std::vector<LabelTuple> dedup_labels(const std::vector<LabelTuple>& labels);

/// Checks label ranges, track counts, feature dimensions and finiteness.
/// Error messages name the bag id and track index.
void validate_bag(const VideoBag& bag, const ConceptSpace& space);
void validate_dataset(const Dataset& dataset);

/// Model hyperparameters. Variances are indexed by Concept.
struct HyperParams {
  double alpha = 100.0;
  double penalty_c = 0.5;
  std::size_t k_max = 30;
  std::array<double, kNumConcepts> sigma_n2{1.0, 1.0};
  std::array<double, kNumConcepts> sigma_a2{1.0, 1.0};
  bool estimate_variances = true;

  void validate(const ConceptSpace& space) const;
};

/// Location constraints of one bag.
///
/// Slack variables never appear explicitly: violated expectation constraints
/// are charged through hinge penalties in the objective.
struct BagConstraints {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (subject, action)
  std::vector<std::size_t> singleton_subject;
  std::vector<std::size_t> singleton_action;
  /// mask[k] == 1 when factor k may be active in this bag.
  std::vector<std::uint8_t> mask;

  bool empty() const {
    return pairs.empty() && singleton_subject.empty() && singleton_action.empty();
  }
  bool operator==(const BagConstraints&) const = default;
};

using ConstraintSet = std::vector<BagConstraints>;

BagConstraints build_constraints(const VideoBag& bag, const ConceptSpace& space,
                                 std::size_t k_max);

/// All factors admissible and no tuples: the free-annotation setting.
BagConstraints free_annotation_constraints(std::size_t k_max);

}  // namespace wsc
