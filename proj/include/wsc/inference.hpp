#pragma once

// Truncated mean-field variational inference for the constrained stacked
// integrative IBP. The engine minimises the hinge-penalised surrogate
//
//   KL(v) + KL(Z) + sum_c KL(A^c) - sum_ij E[log p(x_ij)] + C * hinge
//
// by block-coordinate updates of (sigma_k^2, Phi_k), tau, nu, with an outer
// empirical-Bayes loop over the noise and appearance variances.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wsc/types.hpp"

namespace wsc {

/// Model variants. All variants zero out factors excluded by a bag's labels;
/// only the WSC variants charge location-constraint penalties.
enum class Variant {
  wsc_siibp,  // integrative concepts + location constraints
  ws_siibp,   // integrative concepts, C = 0
  wsc_sibp,   // concatenated features + location constraints
  ws_sibp,    // concatenated features, C = 0
  ws_s,       // subject features only, C = 0
  ws_a,       // action features only, C = 0
};

std::string_view variant_name(Variant v);
std::optional<Variant> parse_variant(std::string_view name);
bool variant_penalized(Variant v);
/// Concepts feeding each feature channel, in concatenation order.
std::vector<std::vector<Concept>> channel_layout(Variant v);

struct FitOptions {
  std::size_t inner_max_iters = 200;
  std::size_t outer_max_iters = 20;
  double inner_rel_tol = 1e-3;
  double outer_rel_tol = 1e-4;
  std::uint64_t seed = 0;
  Variant variant = Variant::wsc_siibp;
  /// Worker threads for the per-bag blocks. Results do not depend on it.
  std::size_t threads = 1;

  void validate() const;
};

/// Posterior over one channel's appearance model plus its variances.
struct ChannelParams {
  std::vector<Concept> parts;
  std::size_t dim = 0;
  double sigma_n2 = 1.0;  // noise variance
  double sigma_a2 = 1.0;  // appearance prior variance
  Eigen::MatrixXd phi;    // k_max x dim posterior means
  Eigen::VectorXd sigma_k2;  // k_max posterior variances

  std::string name() const;
};

struct BagState {
  Eigen::MatrixXd tau;  // k_max x 2 Beta parameters
  Eigen::MatrixXd nu;   // N_i x k_max Bernoulli means
};

struct VariationalState {
  std::vector<ChannelParams> channels;
  std::vector<BagState> bags;

  std::size_t k_max() const;
};

/// Inference inputs for one bag. Holds no ground truth.
struct BagInput {
  std::string id;
  std::vector<Eigen::MatrixXd> x;  // per channel, N_i x D
  BagConstraints constraints;
  /// Whether location penalties apply to this bag.
  bool penalized = true;

  std::size_t num_tracks() const { return x.empty() ? 0 : static_cast<std::size_t>(x[0].rows()); }
};

struct Problem {
  ConceptSpace space;
  std::size_t k_max = 0;
  double alpha = 1.0;
  double penalty_c = 0.0;
  std::vector<BagInput> bags;
};

/// Builds inference inputs for a variant. With `free_annotation` every factor
/// is admissible and no penalties apply.
Problem make_problem(const Dataset& dataset, const HyperParams& hp, Variant variant,
                     bool free_annotation = false);

/// Channel parameters at their initial values for a variant.
std::vector<ChannelParams> initial_channels(const ConceptSpace& space, const HyperParams& hp,
                                            Variant variant);

/// Per-bag stick-breaking quantities.
namespace stick {

/// q_k. for factor k (0-based): a (k+1)-point distribution, normalised in log space.
Eigen::VectorXd optimal_q(const Eigen::MatrixXd& tau, std::size_t k);

/// Lower bound on E[log(1 - prod_{t<=k} v_t)] for a given q (length k+1).
double lower_bound(const Eigen::MatrixXd& tau, std::size_t k, const Eigen::VectorXd& q);

/// KL(Beta(tau) || Beta(alpha, 1)) summed over factors.
double kl_beta(const Eigen::MatrixXd& tau, double alpha);

}  // namespace stick

/// Scratch values derived from a bag's tau.
struct BagBounds {
  Eigen::MatrixXd q;            // k_max x k_max, row k holds q_k. in columns 0..k
  Eigen::VectorXd lower_bound;  // L_k
  Eigen::VectorXd expected_log_pi;  // sum_{t<=k} (psi(tau_t1) - psi(tau_t1 + tau_t2))
};

BagBounds compute_bounds(const Eigen::MatrixXd& tau);

/// Constraint indicators evaluated on a snapshot of nu.
struct ConstraintStatus {
  std::vector<bool> pair_unsatisfied;       // parallel to constraints.pairs
  std::vector<bool> factor_below_one;       // per factor, sum_j nu_jk < 1
};

ConstraintStatus constraint_status(const BagConstraints& constraints, const ConceptSpace& space,
                                   const Eigen::MatrixXd& nu);

/// Number of unsatisfied expectation constraints of a bag.
std::size_t count_violations(const BagConstraints& constraints, const ConceptSpace& space,
                             const Eigen::MatrixXd& nu);

struct ObjectiveTerms {
  double kl_v = 0.0;
  double kl_z = 0.0;
  double kl_a = 0.0;
  double neg_loglik = 0.0;
  double hinge = 0.0;

  double total() const { return kl_v + kl_z + kl_a + neg_loglik + hinge; }
};

struct FitReport {
  /// (sweep index, objective); index 0 is the initial state.
  std::vector<std::pair<std::size_t, double>> trace;
  std::vector<bool> inner_converged;
  bool outer_converged = false;
  std::size_t sweeps = 0;
  std::size_t outer_iterations = 0;
  double final_objective = 0.0;
  std::size_t bags_with_violation = 0;
  std::size_t violated_constraints = 0;
  std::vector<std::string> warnings;
};

/// Owns a problem and its variational state and runs the updates.
class Engine {
 public:
  Engine(Problem problem, std::vector<ChannelParams> channels, std::size_t threads = 1);

  const Problem& problem() const { return problem_; }
  const VariationalState& state() const { return state_; }
  VariationalState& mutable_state() { return state_; }
  std::size_t k_max() const { return problem_.k_max; }
  /// Replaces the channel parameters (bag updates then use the new values).
  void set_channels(std::vector<ChannelParams> channels);

  /// tau = (alpha, 1), nu = 0.5 then masked. Channels are left untouched.
  void init_bags();

  // Global blocks.
  double update_sigma_k2(std::size_t channel, std::size_t k);
  Eigen::VectorXd update_phi(std::size_t channel, std::size_t k);
  /// sigma_k^2 then Phi_k for every k and channel, Gauss-Seidel in k.
  void update_globals();

  // Per-bag blocks.
  /// Refreshes q and L_k of bag i from its current tau.
  void refresh_bounds(std::size_t bag);
  const BagBounds& bounds(std::size_t bag) const { return bounds_[bag]; }
  /// Uses the cached q of the bag; call refresh_bounds first.
  std::pair<double, double> update_tau(std::size_t bag, std::size_t k);
  /// Logit for nu_jk given indicators evaluated on a nu snapshot.
  double zeta(std::size_t bag, std::size_t track, std::size_t k,
              const ConstraintStatus& status) const;
  double update_nu(std::size_t bag, std::size_t track, std::size_t k,
                   const ConstraintStatus& status);
  /// Convenience overload evaluating the indicators on the current nu.
  double update_nu(std::size_t bag, std::size_t track, std::size_t k);
  /// q/L refresh, tau for all k, q/L refresh, nu for all k then j.
  void update_bag(std::size_t bag);
  void update_bags();

  /// One full sweep of the inner loop.
  void sweep();

  /// Surrogate objective with optimal q for the current tau.
  ObjectiveTerms objective_terms() const;
  double objective() const { return objective_terms().total(); }
  /// Objective with q frozen per bag (used for stationarity checks in tau).
  double objective_with_q(const std::vector<Eigen::MatrixXd>& frozen_q) const;
  /// Objective restricted to the per-bag terms (no KL(A)).
  double bag_objective() const;

  /// Closed-form noise and appearance variances per channel; stores them.
  std::vector<std::pair<double, double>> update_hyperparams();

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct BagTerms {
    double kl_v = 0.0, kl_z = 0.0, neg_loglik = 0.0, hinge = 0.0;
  };
  BagTerms bag_terms(std::size_t bag, const Eigen::MatrixXd* frozen_q) const;
  double kl_appearance() const;
  void refresh_gram();
  void check_finite(const ObjectiveTerms& t) const;
  template <typename Fn>
  void for_each_bag(Fn&& fn) const;

  Problem problem_;
  VariationalState state_;
  std::vector<BagBounds> bounds_;
  std::vector<Eigen::MatrixXd> gram_;  // per channel Phi Phi^T
  std::size_t threads_;
  std::vector<std::string> warnings_;
};

struct FitMetadata {
  std::size_t sweeps = 0;
  std::size_t outer_iterations = 0;
  double final_objective = 0.0;
  std::uint64_t seed = 0;
  std::size_t inner_max_iters = 200;
  std::size_t outer_max_iters = 20;
  double inner_rel_tol = 1e-3;
  double outer_rel_tol = 1e-4;
};

/// Everything needed to run test inference later.
struct TrainedModel {
  ConceptSpace space;
  HyperParams hp;
  Variant variant = Variant::wsc_siibp;
  std::vector<ChannelParams> channels;
  FitMetadata fit;
};

struct FitResult {
  TrainedModel model;
  VariationalState state;
  FitReport report;
};

/// Runs the learning algorithm on a labelled dataset.
FitResult fit(const Dataset& dataset, const HyperParams& hp, const FitOptions& opts);

enum class PredictMode { with_labels, free_annotation };

/// Optimises tau and nu of the test bags with the appearance model and all
/// variances frozen at their trained values.
VariationalState predict(const TrainedModel& model, const Dataset& test, PredictMode mode,
                         const FitOptions& opts);

struct JointFitResult {
  FitResult fit;
  /// Posterior over the test bags at the end of training.
  VariationalState test;
};

/// Test inference alongside training: the test bags receive the same per-bag
/// updates after every training sweep but never feed the appearance model,
/// the variances or the convergence test. The training result is identical to
/// fit(train, hp, opts).
JointFitResult fit_with_test(const Dataset& train, const Dataset& test, PredictMode mode,
                             const HyperParams& hp, const FitOptions& opts);

/// Relative change used by the convergence tests.
double relative_change(double previous, double current);

}  // namespace wsc
