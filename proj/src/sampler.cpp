#include "wsc/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "wsc/errors.hpp"

namespace wsc {

void GenConfig::validate() const {
  space.validate();
  if (num_videos == 0) throw ValidationError("num_videos must be >= 1");
  if (tracks_min == 0 || tracks_max < tracks_min) {
    throw ValidationError("tracks per video must satisfy 1 <= min <= max");
  }
  if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) {
    throw ValidationError("label_noise must lie in [0, 1)");
  }
  for (std::size_t e = 0; e < kNumConcepts; ++e) {
    if (!(sigma_n2[e] >= 0.0) || !(sigma_a2[e] > 0.0)) {
      throw ValidationError("generator variances must be positive (noise may be 0)");
    }
  }
  if (truncation() < space.num_labeled() || truncation() == 0) {
    throw ValidationError("k_max must cover all labeled factors");
  }
}

Eigen::VectorXd sample_stick_breaking(double alpha, std::size_t k_max, std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ValidationError("alpha must be > 0");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return stick_breaking(k_max, [&] { return std::pow(unif(rng), 1.0 / alpha); });
}

namespace {

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t attempt, std::uint64_t bag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(attempt), static_cast<std::uint32_t>(bag),
                    0x5eedu};
  return std::mt19937_64(seq);
}

struct BagDraw {
  Eigen::VectorXd pi;
  Eigen::MatrixXi z;
};

BagDraw draw_latents(const GenConfig& cfg, std::mt19937_64& rng) {
  const std::size_t k_max = cfg.truncation();
  std::uniform_int_distribution<std::size_t> ntracks(cfg.tracks_min, cfg.tracks_max);
  const auto n = static_cast<Eigen::Index>(ntracks(rng));
  BagDraw d;
  d.pi = sample_stick_breaking(cfg.alpha, k_max, rng);
  d.z.resize(n, static_cast<Eigen::Index>(k_max));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < d.z.cols(); ++k) d.z(j, k) = unif(rng) < d.pi[k] ? 1 : 0;
  }
  return d;
}

}  // namespace

SyntheticData sample_dataset(const GenConfig& cfg) {
  cfg.validate();
  const ConceptSpace& sp = cfg.space;
  const std::size_t k_max = cfg.truncation();
  const auto kk = static_cast<Eigen::Index>(k_max);

  SyntheticData out;
  out.dataset.space = sp;
  out.dataset.generator_seed = cfg.seed;

  // Appearance rows come from the root stream, drawn once.
  std::mt19937_64 root = substream(cfg.seed, 0, ~std::uint64_t{0});
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  for (std::size_t e = 0; e < kNumConcepts; ++e) {
    const auto d = static_cast<Eigen::Index>(sp.feature_dims[e]);
    const double sd = std::sqrt(cfg.sigma_a2[e]);
    Eigen::MatrixXd a(kk, d);
    for (Eigen::Index k = 0; k < kk; ++k) {
      for (Eigen::Index c = 0; c < d; ++c) a(k, c) = sd * stdnorm(root);
    }
    out.planted.appearance[e] = std::move(a);
  }

  // Redraw the latent structure until every labeled class is active somewhere.
  std::vector<BagDraw> draws;
  std::size_t attempt = 0;
  for (;; ++attempt) {
    if (attempt >= cfg.max_rejections) {
      throw ValidationError("generator could not activate every labeled class; raise alpha");
    }
    draws.clear();
    std::vector<bool> seen(sp.num_labeled(), false);
    for (std::size_t i = 0; i < cfg.num_videos; ++i) {
      auto rng = substream(cfg.seed, attempt + 1, i);
      draws.push_back(draw_latents(cfg, rng));
      const auto& z = draws.back().z;
      for (std::size_t k = 0; k < sp.num_labeled(); ++k) {
        if (z.col(static_cast<Eigen::Index>(k)).any()) seen[k] = true;
      }
    }
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) break;
  }

  for (std::size_t i = 0; i < cfg.num_videos; ++i) {
    // Separate stream for observation noise and label corruption.
    auto rng = substream(cfg.seed, attempt + 1, cfg.num_videos + i);
    const auto& z = draws[i].z;
    VideoBag bag;
    bag.id = "v" + std::to_string(i);

    std::set<std::pair<std::size_t, std::size_t>> pairs;
    std::set<std::size_t> subjects_seen, actions_seen;
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      Track tr;
      Eigen::VectorXd zrow = z.row(j).cast<double>().transpose();
      for (std::size_t e = 0; e < kNumConcepts; ++e) {
        Eigen::VectorXd x = out.planted.appearance[e].transpose() * zrow;
        const double sd = std::sqrt(cfg.sigma_n2[e]);
        for (Eigen::Index c = 0; c < x.size(); ++c) x[c] += sd * stdnorm(rng);
        (e == 0 ? tr.feat_subject : tr.feat_action) = std::move(x);
      }
      GroundTruth gt;
      std::vector<std::size_t> subj, act;
      for (std::size_t s = 0; s < sp.num_subjects; ++s) {
        if (z(j, static_cast<Eigen::Index>(sp.subject_factor(s)))) subj.push_back(s);
      }
      for (std::size_t a = 0; a < sp.num_actions; ++a) {
        if (z(j, static_cast<Eigen::Index>(sp.action_factor(a)))) act.push_back(a);
      }
      if (!subj.empty()) gt.subject = subj.front();
      if (!act.empty()) gt.action = act.front();
      for (auto s : subj) {
        subjects_seen.insert(s);
        for (auto a : act) pairs.emplace(s, a);
      }
      for (auto a : act) actions_seen.insert(a);
      tr.ground_truth = gt;
      bag.tracks.push_back(std::move(tr));
    }

    std::vector<LabelTuple> labels;
    std::set<std::size_t> paired_s, paired_a;
    for (const auto& [s, a] : pairs) {
      labels.push_back({s, a});
      paired_s.insert(s);
      paired_a.insert(a);
    }
    for (auto s : subjects_seen) {
      if (!paired_s.count(s)) labels.push_back({s, std::nullopt});
    }
    for (auto a : actions_seen) {
      if (!paired_a.count(a)) labels.push_back({std::nullopt, a});
    }
    if (cfg.label_noise > 0.0) {
      std::bernoulli_distribution drop(cfg.label_noise);
      std::vector<LabelTuple> kept;
      for (const auto& l : labels) {
        if (!drop(rng)) kept.push_back(l);
      }
      labels = std::move(kept);
    }
    bag.labels = std::move(labels);

    out.planted.pi.push_back(draws[i].pi);
    out.planted.z.push_back(z);
    out.dataset.videos.push_back(std::move(bag));
  }
  return out;
}

}  // namespace wsc
