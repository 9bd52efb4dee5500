#pragma once

// Small random problems and conversions between engine state and the naive
// oracle representation.

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "oracle/oracle.hpp"
#include "wsc/inference.hpp"
#include "wsc/sampler.hpp"

namespace testing_support {

inline oracle::Mat to_mat(const Eigen::MatrixXd& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), oracle::Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
    }
  }
  return out;
}

inline oracle::Vec to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

/// Snapshot of an engine's problem and state in oracle form.
inline oracle::Instance to_instance(const wsc::Engine& e) {
  const auto& p = e.problem();
  const auto& s = e.state();
  oracle::Instance in;
  in.K = p.k_max;
  in.num_labeled = p.space.num_labeled();
  in.alpha = p.alpha;
  in.C = p.penalty_c;
  for (const auto& ch : s.channels) {
    oracle::Channel c;
    c.dim = ch.dim;
    c.sigma_n2 = ch.sigma_n2;
    c.sigma_a2 = ch.sigma_a2;
    c.phi = to_mat(ch.phi);
    c.sigma_k2 = to_vec(ch.sigma_k2);
    in.channels.push_back(c);
  }
  for (std::size_t i = 0; i < p.bags.size(); ++i) {
    const auto& bi = p.bags[i];
    oracle::Bag b;
    for (const auto& x : bi.x) b.x.push_back(to_mat(x));
    b.tau = to_mat(s.bags[i].tau);
    b.nu = to_mat(s.bags[i].nu);
    b.mask.assign(bi.constraints.mask.begin(), bi.constraints.mask.end());
    for (const auto& [sj, aj] : bi.constraints.pairs) {
      b.pairs.emplace_back(p.space.subject_factor(sj), p.space.action_factor(aj));
    }
    for (auto sj : bi.constraints.singleton_subject) b.singles.push_back(p.space.subject_factor(sj));
    for (auto aj : bi.constraints.singleton_action) b.singles.push_back(p.space.action_factor(aj));
    b.penalized = bi.penalized;
    in.bags.push_back(b);
  }
  return in;
}

/// Writes an oracle point back into the engine's mutable state (tau and nu only).
inline void set_bag(wsc::Engine& e, std::size_t i, const oracle::Mat& tau, const oracle::Mat& nu) {
  auto& b = e.mutable_state().bags[i];
  for (std::size_t r = 0; r < tau.size(); ++r) {
    b.tau(static_cast<Eigen::Index>(r), 0) = tau[r][0];
    b.tau(static_cast<Eigen::Index>(r), 1) = tau[r][1];
  }
  for (std::size_t r = 0; r < nu.size(); ++r) {
    for (std::size_t c = 0; c < nu[r].size(); ++c) {
      b.nu(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = nu[r][c];
    }
  }
}

struct SmallProblemOptions {
  std::size_t max_tracks = 5;
  std::size_t k_max = 6;
  std::size_t max_dim = 4;
  std::size_t num_videos = 3;
  double penalty_c = 0.0;
  wsc::Variant variant = wsc::Variant::wsc_siibp;
  /// Randomise Phi, sigma_k^2, variances, tau and nu instead of the
  /// deterministic initial state.
  bool random_state = true;
};

/// Random instance with N_i <= max_tracks, K_max = k_max and D^e <= max_dim.
inline std::unique_ptr<wsc::Engine> small_engine(std::uint64_t seed, const SmallProblemOptions& o) {
  std::mt19937_64 rng(seed * 7919 + 17);
  std::uniform_int_distribution<std::size_t> dim(2, o.max_dim);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  wsc::GenConfig g;
  g.space = {2, 2, 1, {dim(rng), dim(rng)}};
  g.num_videos = o.num_videos;
  g.tracks_min = 1;
  g.tracks_max = o.max_tracks;
  g.alpha = 1.5;
  g.seed = seed;
  g.k_max = g.space.num_labeled() + g.space.num_background;
  const auto data = wsc::sample_dataset(g);

  wsc::HyperParams hp;
  hp.k_max = o.k_max;
  hp.alpha = 0.5 + 4.5 * u(rng);
  hp.penalty_c = o.penalty_c;
  auto problem = wsc::make_problem(data.dataset, hp, o.variant);
  auto channels = wsc::initial_channels(data.dataset.space, hp, o.variant);
  if (o.random_state) {
    std::normal_distribution<double> n01(0.0, 1.0);
    for (auto& ch : channels) {
      ch.sigma_n2 = 0.3 + 1.7 * u(rng);
      ch.sigma_a2 = 0.5 + 1.5 * u(rng);
      for (Eigen::Index k = 0; k < ch.phi.rows(); ++k) {
        ch.sigma_k2[k] = 0.2 + 1.3 * u(rng);
        for (Eigen::Index d = 0; d < ch.phi.cols(); ++d) ch.phi(k, d) = n01(rng);
      }
    }
  }
  auto engine = std::make_unique<wsc::Engine>(std::move(problem), std::move(channels));
  if (o.random_state) {
    for (auto& b : engine->mutable_state().bags) {
      for (Eigen::Index k = 0; k < b.tau.rows(); ++k) {
        b.tau(k, 0) = 0.5 + 4.5 * u(rng);
        b.tau(k, 1) = 0.5 + 4.5 * u(rng);
      }
    }
    const auto& pr = engine->problem();
    for (std::size_t i = 0; i < pr.bags.size(); ++i) {
      auto& nu = engine->mutable_state().bags[i].nu;
      for (Eigen::Index j = 0; j < nu.rows(); ++j) {
        for (Eigen::Index k = 0; k < nu.cols(); ++k) {
          nu(j, k) = pr.bags[i].constraints.mask[static_cast<std::size_t>(k)]
                         ? 0.05 + 0.9 * u(rng)
                         : 0.0;
        }
      }
      engine->refresh_bounds(i);
    }
  }
  return engine;
}

/// |a - b| <= tol * max(1, |a|, |b|).
inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace testing_support
