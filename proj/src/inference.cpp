#include "wsc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

#include "wsc/errors.hpp"
#include "wsc/special.hpp"

namespace wsc {

namespace {

constexpr double kNuFloor = 1e-12;
constexpr double kVarianceFloor = 1e-12;

using Index = Eigen::Index;

Index idx(std::size_t i) { return static_cast<Index>(i); }

double entropy_term(double nu) {
  const double a = nu > 0.0 ? nu * std::log(std::max(nu, kNuFloor)) : 0.0;
  const double b = nu < 1.0 ? (1.0 - nu) * std::log(std::max(1.0 - nu, kNuFloor)) : 0.0;
  return a + b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Variants

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::wsc_siibp: return "wsc-siibp";
    case Variant::ws_siibp: return "ws-siibp";
    case Variant::wsc_sibp: return "wsc-sibp";
    case Variant::ws_sibp: return "ws-sibp";
    case Variant::ws_s: return "ws-s";
    case Variant::ws_a: return "ws-a";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : {Variant::wsc_siibp, Variant::ws_siibp, Variant::wsc_sibp, Variant::ws_sibp,
                 Variant::ws_s, Variant::ws_a}) {
    if (variant_name(v) == name) return v;
  }
  return std::nullopt;
}

bool variant_penalized(Variant v) { return v == Variant::wsc_siibp || v == Variant::wsc_sibp; }

std::vector<std::vector<Concept>> channel_layout(Variant v) {
  switch (v) {
    case Variant::wsc_siibp:
    case Variant::ws_siibp: return {{Concept::subject}, {Concept::action}};
    case Variant::wsc_sibp:
    case Variant::ws_sibp: return {{Concept::subject, Concept::action}};
    case Variant::ws_s: return {{Concept::subject}};
    case Variant::ws_a: return {{Concept::action}};
  }
  return {};
}

void FitOptions::validate() const {
  if (inner_max_iters == 0 || outer_max_iters == 0) {
    throw ValidationError("iteration limits must be >= 1");
  }
  if (!(inner_rel_tol > 0.0) || !(outer_rel_tol > 0.0)) {
    throw ValidationError("tolerances must be > 0");
  }
}

std::string ChannelParams::name() const {
  std::string out;
  for (auto c : parts) {
    if (!out.empty()) out += "+";
    out += concept_name(c);
  }
  return out;
}

std::size_t VariationalState::k_max() const {
  if (!channels.empty()) return static_cast<std::size_t>(channels.front().phi.rows());
  if (!bags.empty()) return static_cast<std::size_t>(bags.front().tau.rows());
  return 0;
}

// ---------------------------------------------------------------------------
// Problem construction

Problem make_problem(const Dataset& dataset, const HyperParams& hp, Variant variant,
                     bool free_annotation) {
  validate_dataset(dataset);
  hp.validate(dataset.space);
  const auto layout = channel_layout(variant);
  const bool penalized = variant_penalized(variant) && !free_annotation;

  Problem p;
  p.space = dataset.space;
  p.k_max = hp.k_max;
  p.alpha = hp.alpha;
  p.penalty_c = variant_penalized(variant) ? hp.penalty_c : 0.0;
  p.bags.reserve(dataset.videos.size());
  for (const auto& video : dataset.videos) {
    BagInput in;
    in.id = video.id;
    in.penalized = penalized;
    in.constraints = free_annotation ? free_annotation_constraints(hp.k_max)
                                     : build_constraints(video, dataset.space, hp.k_max);
    const auto n = idx(video.tracks.size());
    for (const auto& parts : layout) {
      std::size_t d = 0;
      for (auto c : parts) d += dataset.space.dim(c);
      Eigen::MatrixXd x(n, idx(d));
      for (Index j = 0; j < n; ++j) {
        Index off = 0;
        for (auto c : parts) {
          const auto& f = video.tracks[static_cast<std::size_t>(j)].features(c);
          x.row(j).segment(off, f.size()) = f.transpose();
          off += f.size();
        }
      }
      in.x.push_back(std::move(x));
    }
    p.bags.push_back(std::move(in));
  }
  return p;
}

std::vector<ChannelParams> initial_channels(const ConceptSpace& space, const HyperParams& hp,
                                            Variant variant) {
  std::vector<ChannelParams> out;
  for (const auto& parts : channel_layout(variant)) {
    ChannelParams ch;
    ch.parts = parts;
    double sn = 0.0, sa = 0.0;
    for (auto c : parts) {
      ch.dim += space.dim(c);
      sn += hp.sigma_n2[index_of(c)];
      sa += hp.sigma_a2[index_of(c)];
    }
    ch.sigma_n2 = sn / static_cast<double>(parts.size());
    ch.sigma_a2 = sa / static_cast<double>(parts.size());
    ch.phi = Eigen::MatrixXd::Zero(idx(hp.k_max), idx(ch.dim));
    ch.sigma_k2 = Eigen::VectorXd::Ones(idx(hp.k_max));
    out.push_back(std::move(ch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stick-breaking bound

namespace stick {

Eigen::VectorXd optimal_q(const Eigen::MatrixXd& tau, std::size_t k) {
  const Index n = idx(k) + 1;
  Eigen::VectorXd logw(n);
  double sum_psi1 = 0.0;   // sum_{t<m} psi(tau_t1)
  double sum_psi12 = 0.0;  // sum_{t<=m} psi(tau_t1 + tau_t2)
  for (Index m = 0; m < n; ++m) {
    sum_psi12 += digamma(tau(m, 0) + tau(m, 1));
    logw[m] = digamma(tau(m, 1)) + sum_psi1 - sum_psi12;
    sum_psi1 += digamma(tau(m, 0));
  }
  const double mx = logw.maxCoeff();
  Eigen::VectorXd q = (logw.array() - mx).exp();
  return q / q.sum();
}

double lower_bound(const Eigen::MatrixXd& tau, std::size_t k, const Eigen::VectorXd& q) {
  const Index n = idx(k) + 1;
  double out = 0.0;
  double tail = 0.0;  // sum_{n' > m} q_n'
  for (Index m = n - 1; m >= 0; --m) {
    const double psi1 = digamma(tau(m, 0));
    const double psi2 = digamma(tau(m, 1));
    const double psi12 = digamma(tau(m, 0) + tau(m, 1));
    out += q[m] * psi2 + tail * psi1 - (tail + q[m]) * psi12;
    if (q[m] > 0.0) out -= q[m] * std::log(q[m]);
    tail += q[m];
  }
  return out;
}

double kl_beta(const Eigen::MatrixXd& tau, double alpha) {
  double out = 0.0;
  for (Index k = 0; k < tau.rows(); ++k) {
    const double a = tau(k, 0), b = tau(k, 1);
    const double psi_ab = digamma(a + b);
    out += (a - alpha) * (digamma(a) - psi_ab) + (b - 1.0) * (digamma(b) - psi_ab) -
           (log_gamma(a) + log_gamma(b) - log_gamma(a + b));
  }
  return out - static_cast<double>(tau.rows()) * std::log(alpha);
}

}  // namespace stick

BagBounds compute_bounds(const Eigen::MatrixXd& tau) {
  const Index kk = tau.rows();
  BagBounds b;
  b.q = Eigen::MatrixXd::Zero(kk, kk);
  b.lower_bound.resize(kk);
  b.expected_log_pi.resize(kk);
  double acc = 0.0;
  for (Index k = 0; k < kk; ++k) {
    acc += digamma(tau(k, 0)) - digamma(tau(k, 0) + tau(k, 1));
    b.expected_log_pi[k] = acc;
    Eigen::VectorXd q = stick::optimal_q(tau, static_cast<std::size_t>(k));
    b.lower_bound[k] = stick::lower_bound(tau, static_cast<std::size_t>(k), q);
    b.q.row(k).head(k + 1) = q.transpose();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Constraints

ConstraintStatus constraint_status(const BagConstraints& constraints, const ConceptSpace& space,
                                   const Eigen::MatrixXd& nu) {
  ConstraintStatus st;
  for (const auto& [s, a] : constraints.pairs) {
    const double v = nu.col(idx(space.subject_factor(s)))
                         .dot(nu.col(idx(space.action_factor(a))));
    st.pair_unsatisfied.push_back(v < 1.0);
  }
  st.factor_below_one.resize(static_cast<std::size_t>(nu.cols()));
  for (Index k = 0; k < nu.cols(); ++k) {
    st.factor_below_one[static_cast<std::size_t>(k)] = nu.col(k).sum() < 1.0;
  }
  return st;
}

std::size_t count_violations(const BagConstraints& constraints, const ConceptSpace& space,
                             const Eigen::MatrixXd& nu) {
  std::size_t n = 0;
  for (const auto& [s, a] : constraints.pairs) {
    if (nu.col(idx(space.subject_factor(s))).dot(nu.col(idx(space.action_factor(a)))) < 1.0) ++n;
  }
  for (auto s : constraints.singleton_subject) {
    if (nu.col(idx(space.subject_factor(s))).sum() < 1.0) ++n;
  }
  for (auto a : constraints.singleton_action) {
    if (nu.col(idx(space.action_factor(a))).sum() < 1.0) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(Problem problem, std::vector<ChannelParams> channels, std::size_t threads)
    : problem_(std::move(problem)), threads_(std::max<std::size_t>(threads, 1)) {
  if (!problem_.bags.empty() && problem_.bags.front().x.size() != channels.size()) {
    throw ValidationError("channel count does not match the problem layout");
  }
  for (const auto& ch : channels) {
    if (static_cast<std::size_t>(ch.phi.rows()) != problem_.k_max ||
        static_cast<std::size_t>(ch.phi.cols()) != ch.dim ||
        static_cast<std::size_t>(ch.sigma_k2.size()) != problem_.k_max) {
      throw ValidationError("channel parameters do not match k_max / dim");
    }
  }
  for (const auto& bag : problem_.bags) {
    for (std::size_t c = 0; c < channels.size(); ++c) {
      if (static_cast<std::size_t>(bag.x[c].cols()) != channels[c].dim) {
        throw ValidationError("feature dimension mismatch for channel " + channels[c].name() +
                              " in video " + bag.id);
      }
    }
  }
  state_.channels = std::move(channels);
  state_.bags.resize(problem_.bags.size());
  bounds_.resize(problem_.bags.size());
  refresh_gram();
  init_bags();
}

template <typename Fn>
void Engine::for_each_bag(Fn&& fn) const {
  const std::size_t m = problem_.bags.size();
  const std::size_t workers = std::min(threads_, m);
  if (workers <= 1) {
    for (std::size_t i = 0; i < m; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < m; i += workers) fn(i);
    });
  }
}

void Engine::init_bags() {
  const Index kk = idx(problem_.k_max);
  for (std::size_t i = 0; i < problem_.bags.size(); ++i) {
    const auto& in = problem_.bags[i];
    auto& b = state_.bags[i];
    b.tau.resize(kk, 2);
    b.tau.col(0).setConstant(problem_.alpha);
    b.tau.col(1).setConstant(1.0);
    b.nu = Eigen::MatrixXd::Constant(idx(in.num_tracks()), kk, 0.5);
    for (Index k = 0; k < kk; ++k) {
      if (!in.constraints.mask[static_cast<std::size_t>(k)]) b.nu.col(k).setZero();
    }
    bounds_[i] = compute_bounds(b.tau);
  }
}

void Engine::set_channels(std::vector<ChannelParams> channels) {
  if (channels.size() != state_.channels.size()) {
    throw ValidationError("channel count does not match the problem layout");
  }
  state_.channels = std::move(channels);
  refresh_gram();
}

void Engine::refresh_gram() {
  gram_.clear();
  for (const auto& ch : state_.channels) gram_.push_back(ch.phi * ch.phi.transpose());
}

double Engine::update_sigma_k2(std::size_t channel, std::size_t k) {
  auto& ch = state_.channels[channel];
  double activation = 0.0;
  for (const auto& b : state_.bags) activation += b.nu.col(idx(k)).sum();
  const double v = 1.0 / (1.0 / ch.sigma_a2 + activation / ch.sigma_n2);
  ch.sigma_k2[idx(k)] = v;
  return v;
}

namespace {

// Phi_k = sigma_k^2 / sigma_n^2 * (S_k - sum_{l != k} W_kl Phi_l), where
// S_k = sum nu_jk x_j and W_kl = sum nu_jk nu_jl.
void phi_kernel(ChannelParams& ch, std::size_t k, const Eigen::VectorXd& s_k,
                const Eigen::VectorXd& w_k) {
  Eigen::VectorXd acc = s_k;
  for (Index l = 0; l < ch.phi.rows(); ++l) {
    if (l == idx(k)) continue;
    acc -= w_k[l] * ch.phi.row(l).transpose();
  }
  ch.phi.row(idx(k)) = (ch.sigma_k2[idx(k)] / ch.sigma_n2) * acc.transpose();
}

}  // namespace

Eigen::VectorXd Engine::update_phi(std::size_t channel, std::size_t k) {
  auto& ch = state_.channels[channel];
  Eigen::VectorXd s_k = Eigen::VectorXd::Zero(idx(ch.dim));
  Eigen::VectorXd w_k = Eigen::VectorXd::Zero(idx(problem_.k_max));
  for (std::size_t i = 0; i < problem_.bags.size(); ++i) {
    const auto& nu = state_.bags[i].nu;
    s_k += problem_.bags[i].x[channel].transpose() * nu.col(idx(k));
    w_k += nu.transpose() * nu.col(idx(k));
  }
  phi_kernel(ch, k, s_k, w_k);
  refresh_gram();
  return ch.phi.row(idx(k)).transpose();
}

void Engine::update_globals() {
  const std::size_t m = problem_.bags.size();
  const std::size_t nc = state_.channels.size();
  const Index kk = idx(problem_.k_max);

  struct Partial {
    Eigen::VectorXd n;
    Eigen::MatrixXd w;
    std::vector<Eigen::MatrixXd> s;
  };
  std::vector<Partial> partial(m);
  for_each_bag([&](std::size_t i) {
    const auto& nu = state_.bags[i].nu;
    auto& p = partial[i];
    p.n = nu.colwise().sum().transpose();
    p.w = nu.transpose() * nu;
    for (std::size_t c = 0; c < nc; ++c) p.s.push_back(nu.transpose() * problem_.bags[i].x[c]);
  });

  // Ordered reduction: identical for any worker count.
  Eigen::VectorXd n = Eigen::VectorXd::Zero(kk);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(kk, kk);
  std::vector<Eigen::MatrixXd> s;
  for (std::size_t c = 0; c < nc; ++c) {
    s.push_back(Eigen::MatrixXd::Zero(kk, idx(state_.channels[c].dim)));
  }
  for (const auto& p : partial) {
    n += p.n;
    w += p.w;
    for (std::size_t c = 0; c < nc; ++c) s[c] += p.s[c];
  }

  for (Index k = 0; k < kk; ++k) {
    for (std::size_t c = 0; c < nc; ++c) {
      auto& ch = state_.channels[c];
      ch.sigma_k2[k] = 1.0 / (1.0 / ch.sigma_a2 + n[k] / ch.sigma_n2);
      phi_kernel(ch, static_cast<std::size_t>(k), s[c].row(k).transpose(), w.col(k));
    }
  }
  refresh_gram();
}

void Engine::refresh_bounds(std::size_t bag) { bounds_[bag] = compute_bounds(state_.bags[bag].tau); }

std::pair<double, double> Engine::update_tau(std::size_t bag, std::size_t k) {
  auto& b = state_.bags[bag];
  const auto& q = bounds_[bag].q;
  const Index kk = idx(problem_.k_max);
  const double n_tracks = static_cast<double>(b.nu.rows());
  const Index kx = idx(k);

  double t1 = problem_.alpha;
  double t2 = 1.0;
  for (Index m = kx; m < kk; ++m) {
    const double on = b.nu.col(m).sum();
    const double off = n_tracks - on;
    t1 += on;
    if (m > kx) t1 += off * q.row(m).segment(kx + 1, m - kx).sum();
    t2 += off * q(m, kx);
  }
  b.tau(kx, 0) = t1;
  b.tau(kx, 1) = t2;
  return {t1, t2};
}

double Engine::zeta(std::size_t bag, std::size_t track, std::size_t k,
                    const ConstraintStatus& status) const {
  const auto& in = problem_.bags[bag];
  const auto& b = state_.bags[bag];
  const auto& bb = bounds_[bag];
  const Index j = idx(track), kx = idx(k);

  double z = bb.expected_log_pi[kx] - bb.lower_bound[kx];
  for (std::size_t c = 0; c < state_.channels.size(); ++c) {
    const auto& ch = state_.channels[c];
    const auto& g = gram_[c];
    double cross = ch.phi.row(kx).dot(in.x[c].row(j));
    for (Index l = 0; l < g.cols(); ++l) {
      if (l != kx) cross -= b.nu(j, l) * g(kx, l);
    }
    z += (cross - 0.5 * (static_cast<double>(ch.dim) * ch.sigma_k2[kx] + g(kx, kx))) /
         ch.sigma_n2;
  }

  if (in.penalized) {
    const auto& sp = problem_.space;
    double pen = 0.0;
    const auto& pairs = in.constraints.pairs;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      if (!status.pair_unsatisfied[p]) continue;
      const std::size_t fs = sp.subject_factor(pairs[p].first);
      const std::size_t fa = sp.action_factor(pairs[p].second);
      if (fs == k) pen += b.nu(j, idx(fa));
      if (fa == k) pen += b.nu(j, idx(fs));
    }
    if (k < sp.num_labeled() && status.factor_below_one[k]) pen += 1.0;
    z += problem_.penalty_c * pen;
  }
  return z;
}

double Engine::update_nu(std::size_t bag, std::size_t track, std::size_t k,
                         const ConstraintStatus& status) {
  double v = 0.0;
  if (problem_.bags[bag].constraints.mask[k]) v = sigmoid(zeta(bag, track, k, status));
  state_.bags[bag].nu(idx(track), idx(k)) = v;
  return v;
}

double Engine::update_nu(std::size_t bag, std::size_t track, std::size_t k) {
  const auto status =
      constraint_status(problem_.bags[bag].constraints, problem_.space, state_.bags[bag].nu);
  return update_nu(bag, track, k, status);
}

void Engine::update_bag(std::size_t bag) {
  refresh_bounds(bag);
  for (std::size_t k = 0; k < problem_.k_max; ++k) update_tau(bag, k);
  refresh_bounds(bag);
  const auto status =
      constraint_status(problem_.bags[bag].constraints, problem_.space, state_.bags[bag].nu);
  const std::size_t n = problem_.bags[bag].num_tracks();
  for (std::size_t k = 0; k < problem_.k_max; ++k) {
    for (std::size_t j = 0; j < n; ++j) update_nu(bag, j, k, status);
  }
}

void Engine::update_bags() {
  for_each_bag([&](std::size_t i) { update_bag(i); });
}

void Engine::sweep() {
  update_globals();
  update_bags();
}

Engine::BagTerms Engine::bag_terms(std::size_t bag, const Eigen::MatrixXd* frozen_q) const {
  const auto& in = problem_.bags[bag];
  const auto& b = state_.bags[bag];
  const Index kk = idx(problem_.k_max);
  const Index n = b.nu.rows();
  BagTerms t;

  t.kl_v = stick::kl_beta(b.tau, problem_.alpha);

  Eigen::VectorXd lb(kk), elp(kk);
  double acc = 0.0;
  for (Index k = 0; k < kk; ++k) {
    acc += digamma(b.tau(k, 0)) - digamma(b.tau(k, 0) + b.tau(k, 1));
    elp[k] = acc;
    const auto kz = static_cast<std::size_t>(k);
    if (frozen_q) {
      Eigen::VectorXd q = frozen_q->row(k).head(k + 1).transpose();
      lb[k] = stick::lower_bound(b.tau, kz, q);
    } else {
      lb[k] = stick::lower_bound(b.tau, kz, stick::optimal_q(b.tau, kz));
    }
  }
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < kk; ++k) {
      const double v = b.nu(j, k);
      t.kl_z += -v * elp[k] - (1.0 - v) * lb[k] + entropy_term(v);
    }
  }

  for (std::size_t c = 0; c < state_.channels.size(); ++c) {
    const auto& ch = state_.channels[c];
    const auto& g = gram_[c];
    const double d = static_cast<double>(ch.dim);
    const Eigen::MatrixXd mean = b.nu * ch.phi;
    for (Index j = 0; j < n; ++j) {
      double e = (in.x[c].row(j) - mean.row(j)).squaredNorm();
      for (Index k = 0; k < kk; ++k) {
        const double v = b.nu(j, k);
        e += (v - v * v) * g(k, k) + v * d * ch.sigma_k2[k];
      }
      t.neg_loglik += e / (2.0 * ch.sigma_n2) +
                      0.5 * d * std::log(2.0 * std::numbers::pi * ch.sigma_n2);
    }
  }

  if (in.penalized) {
    const auto& sp = problem_.space;
    double h = 0.0;
    for (const auto& [s, a] : in.constraints.pairs) {
      h += std::max(0.0, 1.0 - b.nu.col(idx(sp.subject_factor(s)))
                                   .dot(b.nu.col(idx(sp.action_factor(a)))));
    }
    for (auto s : in.constraints.singleton_subject) {
      h += std::max(0.0, 1.0 - b.nu.col(idx(sp.subject_factor(s))).sum());
    }
    for (auto a : in.constraints.singleton_action) {
      h += std::max(0.0, 1.0 - b.nu.col(idx(sp.action_factor(a))).sum());
    }
    t.hinge = problem_.penalty_c * h;
  }
  return t;
}

double Engine::kl_appearance() const {
  double out = 0.0;
  for (const auto& ch : state_.channels) {
    const double d = static_cast<double>(ch.dim);
    for (Index k = 0; k < ch.phi.rows(); ++k) {
      const double s2 = ch.sigma_k2[k];
      out += (d * s2 + ch.phi.row(k).squaredNorm()) / (2.0 * ch.sigma_a2) -
             0.5 * d * (1.0 + std::log(s2 / ch.sigma_a2));
    }
  }
  return out;
}

void Engine::check_finite(const ObjectiveTerms& t) const {
  const std::pair<const char*, double> parts[] = {{"KL(v)", t.kl_v},
                                                  {"KL(Z)", t.kl_z},
                                                  {"KL(A)", t.kl_a},
                                                  {"expected log-likelihood", t.neg_loglik},
                                                  {"hinge penalty", t.hinge}};
  for (const auto& [name, v] : parts) {
    if (std::isfinite(v)) continue;
    std::ostringstream os;
    os << "non-finite objective: " << name << " = " << v;
    for (std::size_t c = 0; c < state_.channels.size(); ++c) {
      const auto& ch = state_.channels[c];
      if (!ch.phi.allFinite()) os << "; Phi of channel " << ch.name() << " is non-finite";
      if (!std::isfinite(ch.sigma_n2)) os << "; noise variance of " << ch.name() << " is non-finite";
    }
    for (std::size_t i = 0; i < state_.bags.size(); ++i) {
      if (!state_.bags[i].tau.allFinite()) {
        os << "; tau of video " << problem_.bags[i].id << " is non-finite";
        break;
      }
      if (!state_.bags[i].nu.allFinite()) {
        os << "; nu of video " << problem_.bags[i].id << " is non-finite";
        break;
      }
    }
    throw NumericalError(os.str());
  }
}

ObjectiveTerms Engine::objective_terms() const {
  std::vector<BagTerms> per_bag(problem_.bags.size());
  for_each_bag(
      [&](std::size_t i) { per_bag[i] = bag_terms(i, nullptr); });
  ObjectiveTerms t;
  for (const auto& b : per_bag) {
    t.kl_v += b.kl_v;
    t.kl_z += b.kl_z;
    t.neg_loglik += b.neg_loglik;
    t.hinge += b.hinge;
  }
  t.kl_a = kl_appearance();
  check_finite(t);
  return t;
}

double Engine::objective_with_q(const std::vector<Eigen::MatrixXd>& frozen_q) const {
  double total = kl_appearance();
  for (std::size_t i = 0; i < problem_.bags.size(); ++i) {
    const auto t = bag_terms(i, &frozen_q[i]);
    total += t.kl_v + t.kl_z + t.neg_loglik + t.hinge;
  }
  return total;
}

double Engine::bag_objective() const {
  const auto t = objective_terms();
  return t.total() - t.kl_a;
}

std::vector<std::pair<double, double>> Engine::update_hyperparams() {
  std::vector<std::pair<double, double>> out;
  for (std::size_t c = 0; c < state_.channels.size(); ++c) {
    auto& ch = state_.channels[c];
    const double d = static_cast<double>(ch.dim);
    const double kk = static_cast<double>(problem_.k_max);

    double appearance = 0.0;
    for (Index k = 0; k < ch.phi.rows(); ++k) {
      appearance += d * ch.sigma_k2[k] + ch.phi.row(k).squaredNorm();
    }
    appearance /= kk * d;

    const auto& g = gram_[c];
    double resid = 0.0;
    double tracks = 0.0;
    for (std::size_t i = 0; i < problem_.bags.size(); ++i) {
      const auto& nu = state_.bags[i].nu;
      const auto& x = problem_.bags[i].x[c];
      const Eigen::MatrixXd mean = nu * ch.phi;
      for (Index j = 0; j < nu.rows(); ++j) {
        resid += (x.row(j) - mean.row(j)).squaredNorm();
        for (Index k = 0; k < nu.cols(); ++k) {
          const double v = nu(j, k);
          resid += (v - v * v) * g(k, k) + v * d * ch.sigma_k2[k];
        }
      }
      tracks += static_cast<double>(nu.rows());
    }
    double noise = tracks > 0.0 ? resid / (tracks * d) : ch.sigma_n2;
    if (!(noise >= kVarianceFloor)) {
      warnings_.push_back("noise variance of channel " + ch.name() +
                          " fell below 1e-12 and was clamped");
      noise = kVarianceFloor;
    }
    if (!(appearance >= kVarianceFloor)) {
      warnings_.push_back("appearance variance of channel " + ch.name() +
                          " fell below 1e-12 and was clamped");
      appearance = kVarianceFloor;
    }
    ch.sigma_a2 = appearance;
    ch.sigma_n2 = noise;
    out.emplace_back(appearance, noise);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Drivers

double relative_change(double previous, double current) {
  const double diff = std::abs(previous - current);
  const double scale = std::abs(current);
  return scale > 0.0 ? diff / scale : diff;
}

namespace {

void check_compatible(const ConceptSpace& model, const ConceptSpace& test) {
  if (test.feature_dims != model.feature_dims || test.num_subjects != model.num_subjects ||
      test.num_actions != model.num_actions) {
    std::ostringstream os;
    os << "test data (K_s=" << test.num_subjects << ", K_a=" << test.num_actions
       << ", D=" << test.feature_dims[0] << "/" << test.feature_dims[1]
       << ") does not match the model (K_s=" << model.num_subjects
       << ", K_a=" << model.num_actions << ", D=" << model.feature_dims[0] << "/"
       << model.feature_dims[1] << ")";
    throw ValidationError(os.str());
  }
}

// `riders`, when given, gets its bags updated after every training sweep.
FitResult fit_impl(const Dataset& dataset, const HyperParams& hp, const FitOptions& opts,
                   Engine* riders) {
  opts.validate();
  if (dataset.videos.empty()) throw ValidationError("cannot fit an empty dataset");
  Problem problem = make_problem(dataset, hp, opts.variant);
  Engine engine(std::move(problem), initial_channels(dataset.space, hp, opts.variant),
                opts.threads);

  FitReport report;
  double current = engine.objective();
  report.trace.emplace_back(0, current);
  double outer_prev = current;

  for (std::size_t outer = 0; outer < opts.outer_max_iters; ++outer) {
    bool converged = false;
    for (std::size_t t = 0; t < opts.inner_max_iters; ++t) {
      engine.sweep();
      if (riders) {
        riders->set_channels(engine.state().channels);
        riders->update_bags();
      }
      const double next = engine.objective();
      ++report.sweeps;
      report.trace.emplace_back(report.sweeps, next);
      const double rel = relative_change(current, next);
      current = next;
      if (rel <= opts.inner_rel_tol) {
        converged = true;
        break;
      }
    }
    report.inner_converged.push_back(converged);
    ++report.outer_iterations;
    if (!hp.estimate_variances) {
      report.outer_converged = converged;
      break;
    }
    engine.update_hyperparams();
    current = engine.objective();
    if (relative_change(outer_prev, current) <= opts.outer_rel_tol) {
      report.outer_converged = true;
      break;
    }
    outer_prev = current;
  }
  report.final_objective = current;

  const auto& pr = engine.problem();
  for (std::size_t i = 0; i < pr.bags.size(); ++i) {
    const auto v = count_violations(pr.bags[i].constraints, pr.space, engine.state().bags[i].nu);
    report.violated_constraints += v;
    if (v > 0) ++report.bags_with_violation;
  }
  report.warnings = engine.warnings();

  FitResult out;
  out.model.space = dataset.space;
  out.model.hp = hp;
  out.model.variant = opts.variant;
  out.model.channels = engine.state().channels;
  out.model.fit = FitMetadata{report.sweeps,         report.outer_iterations,
                              report.final_objective, opts.seed,
                              opts.inner_max_iters,   opts.outer_max_iters,
                              opts.inner_rel_tol,     opts.outer_rel_tol};
  out.state = engine.state();
  out.report = std::move(report);
  if (riders) riders->set_channels(engine.state().channels);
  return out;
}

}  // namespace

FitResult fit(const Dataset& dataset, const HyperParams& hp, const FitOptions& opts) {
  return fit_impl(dataset, hp, opts, nullptr);
}

JointFitResult fit_with_test(const Dataset& train, const Dataset& test, PredictMode mode,
                             const HyperParams& hp, const FitOptions& opts) {
  opts.validate();
  hp.validate(train.space);
  check_compatible(train.space, test.space);
  JointFitResult out;
  if (test.videos.empty()) {
    out.fit = fit(train, hp, opts);
    out.test.channels = out.fit.model.channels;
    return out;
  }
  Engine riders(make_problem(test, hp, opts.variant, mode == PredictMode::free_annotation),
                initial_channels(train.space, hp, opts.variant), opts.threads);
  out.fit = fit_impl(train, hp, opts, &riders);
  out.test = riders.state();
  return out;
}

VariationalState predict(const TrainedModel& model, const Dataset& test, PredictMode mode,
                         const FitOptions& opts) {
  opts.validate();
  check_compatible(model.space, test.space);
  if (test.videos.empty()) {
    VariationalState empty;
    empty.channels = model.channels;
    return empty;
  }
  Problem problem =
      make_problem(test, model.hp, model.variant, mode == PredictMode::free_annotation);
  Engine engine(std::move(problem), model.channels, opts.threads);

  double current = engine.bag_objective();
  for (std::size_t t = 0; t < opts.inner_max_iters; ++t) {
    engine.update_bags();
    const double next = engine.bag_objective();
    const double rel = relative_change(current, next);
    current = next;
    if (rel <= opts.inner_rel_tol) break;
  }
  return engine.state();
}

}  // namespace wsc
