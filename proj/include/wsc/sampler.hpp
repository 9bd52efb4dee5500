#pragma once

// Synthetic data drawn from the stacked integrative IBP generative process,
// truncated at k_max factors, with planted ground truth.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "wsc/types.hpp"

namespace wsc {

struct GenConfig {
  ConceptSpace space{3, 3, 2, {16, 16}};
  std::size_t num_videos = 50;
  std::size_t tracks_min = 10;
  std::size_t tracks_max = 10;
  double alpha = 1.0;
  std::array<double, kNumConcepts> sigma_n2{0.5, 0.5};
  std::array<double, kNumConcepts> sigma_a2{1.0, 1.0};
  /// Probability that a tuple is deleted from a bag's label set.
  double label_noise = 0.0;
  std::uint64_t seed = 42;
  /// Truncation level; 0 means K_s + K_a + K_bg.
  std::size_t k_max = 0;
  /// Upper bound on whole-dataset redraws used to make every class appear.
  std::size_t max_rejections = 1000;

  std::size_t truncation() const {
    return k_max == 0 ? space.num_labeled() + space.num_background : k_max;
  }
  void validate() const;
};

/// Planted latent variables behind a sampled dataset.
struct PlantedTruth {
  /// Appearance rows per concept: k_max x D^e.
  std::array<Eigen::MatrixXd, kNumConcepts> appearance;
  /// Per bag: stick-breaking prior (length k_max) and binary z (N_i x k_max).
  std::vector<Eigen::VectorXd> pi;
  std::vector<Eigen::MatrixXi> z;
};

struct SyntheticData {
  Dataset dataset;
  PlantedTruth planted;
};

/// pi_k = prod_{t<=k} v_t with each v_t supplied by `draw_stick`.
template <typename StickFn>
Eigen::VectorXd stick_breaking(std::size_t k_max, StickFn&& draw_stick) {
  Eigen::VectorXd pi(static_cast<Eigen::Index>(k_max));
  double prod = 1.0;
  for (std::size_t k = 0; k < k_max; ++k) {
    prod *= draw_stick();
    pi[static_cast<Eigen::Index>(k)] = prod;
  }
  return pi;
}

/// Draws pi with v_t ~ Beta(alpha, 1), sampled as U^(1/alpha).
Eigen::VectorXd sample_stick_breaking(double alpha, std::size_t k_max, std::mt19937_64& rng);

/// Deterministic in cfg (including cfg.seed). Each bag draws from its own
/// substream derived from (seed, redraw attempt, bag index).
SyntheticData sample_dataset(const GenConfig& cfg);

}  // namespace wsc
