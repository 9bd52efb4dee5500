#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace oracle {

double digamma(double x) { return boost::math::digamma(x); }
double lgamma(double x) { return boost::math::lgamma(x); }

// ---------------------------------------------------------------------------
// Monte Carlo

namespace {

// Gamma(shape, 1) draw (Marsaglia-Tsang, boosted by U^(1/shape) for shape < 1).
double gamma_draw(double shape, std::mt19937_64& rng, std::normal_distribution<double>& normal,
                  std::uniform_real_distribution<double>& unif) {
  double scale = 1.0;
  if (shape < 1.0) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    scale = std::pow(u, 1.0 / shape);
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double z, v;
    do {
      z = normal(rng);
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = unif(rng);
    if (u < 1.0 - 0.0331 * z * z * z * z) return d * v * scale;
    if (u > 0.0 && std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v * scale;
  }
}

std::vector<McEstimate> mc_prefix(const std::vector<std::pair<double, double>>& tau,
                                  std::size_t k, std::size_t samples, std::uint64_t seed) {
  if (k == 0 || k > tau.size()) throw std::invalid_argument("k out of range");
  for (const auto& [a, b] : tau) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("tau must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // Welford accumulators per k.
  std::vector<double> mean(k, 0.0), m2(k, 0.0);
  for (std::size_t n = 1; n <= samples; ++n) {
    // prod = prod_t v_t and rest = 1 - prod, updated as
    // 1 - prod * v = rest + prod * (1 - v) so that no cancellation occurs.
    double prod = 1.0, rest = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double ga = gamma_draw(tau[t].first, rng, normal, unif);
      const double gb = gamma_draw(tau[t].second, rng, normal, unif);
      rest += prod * (gb / (ga + gb));
      prod *= ga / (ga + gb);
      const double y = std::log(rest);
      const double delta = y - mean[t];
      mean[t] += delta / static_cast<double>(n);
      m2[t] += delta * (y - mean[t]);
    }
  }
  std::vector<McEstimate> out(k);
  for (std::size_t t = 0; t < k; ++t) {
    const double var = samples > 1 ? m2[t] / static_cast<double>(samples - 1) : 0.0;
    out[t].mean = mean[t];
    out[t].stderr_ = std::sqrt(var / static_cast<double>(samples));
    out[t].samples = samples;
  }
  return out;
}

}  // namespace

McEstimate mc_expect_log_one_minus_prod(const std::vector<std::pair<double, double>>& tau,
                                        std::size_t k, std::size_t samples, std::uint64_t seed) {
  return mc_prefix(tau, k, samples, seed).back();
}

std::vector<McEstimate> mc_expect_log_one_minus_prod_all(
    const std::vector<std::pair<double, double>>& tau, std::size_t samples, std::uint64_t seed) {
  return mc_prefix(tau, tau.size(), samples, seed);
}

// ---------------------------------------------------------------------------
// Finite differences

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step) {
  Vec g(x.size());
  Vec y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] + step;
    const double up = f(y);
    y[i] = x[i] - step;
    const double down = f(y);
    y[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("non-finite objective in finite differences");
    }
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Stick-breaking bound

Vec q_row(const Mat& tau, std::size_t k) {
  Vec logw(k + 1);
  for (std::size_t m = 0; m <= k; ++m) {
    double w = digamma(tau[m][1]);
    for (std::size_t n = 0; n < m; ++n) w += digamma(tau[n][0]);
    for (std::size_t n = 0; n <= m; ++n) w -= digamma(tau[n][0] + tau[n][1]);
    logw[m] = w;
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  Vec q(k + 1);
  for (std::size_t m = 0; m <= k; ++m) {
    q[m] = std::exp(logw[m] - mx);
    z += q[m];
  }
  for (auto& v : q) v /= z;
  return q;
}

double lower_bound(const Mat& tau, std::size_t k, const Vec& q) {
  double out = 0.0;
  for (std::size_t m = 0; m <= k; ++m) {
    double after = 0.0;  // sum_{n > m} q_n
    for (std::size_t n = m + 1; n <= k; ++n) after += q[n];
    double from = 0.0;  // sum_{n >= m} q_n
    for (std::size_t n = m; n <= k; ++n) from += q[n];
    out += q[m] * digamma(tau[m][1]);
    out += after * digamma(tau[m][0]);
    out -= from * digamma(tau[m][0] + tau[m][1]);
    if (q[m] > 0.0) out -= q[m] * std::log(q[m]);
  }
  return out;
}

BagScratch scratch(const Mat& tau) {
  BagScratch s;
  for (std::size_t k = 0; k < tau.size(); ++k) {
    s.q.push_back(q_row(tau, k));
    s.L.push_back(lower_bound(tau, k, s.q.back()));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Closed-form updates

double sigma_k2_update(const Instance& in, std::size_t c, std::size_t k) {
  const auto& ch = in.channels[c];
  double total = 0.0;
  for (const auto& b : in.bags) {
    for (const auto& row : b.nu) total += row[k];
  }
  return 1.0 / (1.0 / ch.sigma_a2 + total / ch.sigma_n2);
}

Vec phi_update(const Instance& in, std::size_t c, std::size_t k) {
  const auto& ch = in.channels[c];
  Vec acc(ch.dim, 0.0);
  for (const auto& b : in.bags) {
    for (std::size_t j = 0; j < b.nu.size(); ++j) {
      for (std::size_t d = 0; d < ch.dim; ++d) {
        double r = b.x[c][j][d];
        for (std::size_t l = 0; l < in.K; ++l) {
          if (l != k) r -= b.nu[j][l] * ch.phi[l][d];
        }
        acc[d] += b.nu[j][k] * r;
      }
    }
  }
  for (auto& v : acc) v = v / ch.sigma_n2 * ch.sigma_k2[k];
  return acc;
}

std::pair<double, double> tau_update(const Instance& in, std::size_t bag, std::size_t k,
                                     const Mat& q) {
  const auto& b = in.bags[bag];
  const double n_tracks = static_cast<double>(b.nu.size());
  auto column_sum = [&](std::size_t m) {
    double s = 0.0;
    for (const auto& row : b.nu) s += row[m];
    return s;
  };
  double t1 = in.alpha;
  for (std::size_t m = k; m < in.K; ++m) t1 += column_sum(m);
  for (std::size_t m = k + 1; m < in.K; ++m) {
    double tail = 0.0;
    for (std::size_t s = k + 1; s <= m; ++s) tail += q[m][s];
    t1 += (n_tracks - column_sum(m)) * tail;
  }
  double t2 = 1.0;
  for (std::size_t m = k; m < in.K; ++m) t2 += (n_tracks - column_sum(m)) * q[m][k];
  return {t1, t2};
}

Indicators indicators(const Bag& b, std::size_t K) {
  Indicators ind;
  for (const auto& [fs, fa] : b.pairs) {
    double dot = 0.0;
    for (const auto& row : b.nu) dot += row[fs] * row[fa];
    ind.pair_unsatisfied.push_back(dot < 1.0 ? 1 : 0);
  }
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (const auto& row : b.nu) s += row[k];
    ind.column_below_one.push_back(s < 1.0 ? 1 : 0);
  }
  return ind;
}

double zeta(const Instance& in, std::size_t bag, std::size_t j, std::size_t k,
            const Indicators& ind, const Vec& L) {
  const auto& b = in.bags[bag];
  double z = 0.0;
  for (std::size_t t = 0; t <= k; ++t) {
    z += digamma(b.tau[t][0]) - digamma(b.tau[t][0] + b.tau[t][1]);
  }
  z -= L[k];
  for (std::size_t c = 0; c < in.channels.size(); ++c) {
    const auto& ch = in.channels[c];
    double cross = 0.0;
    for (std::size_t d = 0; d < ch.dim; ++d) {
      double r = b.x[c][j][d];
      for (std::size_t l = 0; l < in.K; ++l) {
        if (l != k) r -= b.nu[j][l] * ch.phi[l][d];
      }
      cross += ch.phi[k][d] * r;
    }
    double sq = 0.0;
    for (std::size_t d = 0; d < ch.dim; ++d) sq += ch.phi[k][d] * ch.phi[k][d];
    z += (cross - 0.5 * (static_cast<double>(ch.dim) * ch.sigma_k2[k] + sq)) / ch.sigma_n2;
  }
  if (b.penalized) {
    double term_i = 0.0, term_ii = 0.0, term_iii = 0.0;
    for (std::size_t p = 0; p < b.pairs.size(); ++p) {
      if (!ind.pair_unsatisfied[p]) continue;
      if (b.pairs[p].first == k) term_i += b.nu[j][b.pairs[p].second];
      if (b.pairs[p].second == k) term_ii += b.nu[j][b.pairs[p].first];
    }
    if (k < in.num_labeled && ind.column_below_one[k]) term_iii = 1.0;
    z += in.C * (term_i + term_ii + term_iii);
  }
  return z;
}

std::vector<BagScratch> sweep(Instance& in) {
  for (std::size_t k = 0; k < in.K; ++k) {
    for (std::size_t c = 0; c < in.channels.size(); ++c) {
      in.channels[c].sigma_k2[k] = sigma_k2_update(in, c, k);
      in.channels[c].phi[k] = phi_update(in, c, k);
    }
  }
  std::vector<BagScratch> used;
  for (std::size_t i = 0; i < in.bags.size(); ++i) {
    auto& b = in.bags[i];
    const BagScratch before = scratch(b.tau);
    Mat new_tau = b.tau;
    for (std::size_t k = 0; k < in.K; ++k) {
      const auto [t1, t2] = tau_update(in, i, k, before.q);
      new_tau[k][0] = t1;
      new_tau[k][1] = t2;
    }
    b.tau = new_tau;
    const BagScratch after = scratch(b.tau);
    const Indicators ind = indicators(b, in.K);
    for (std::size_t k = 0; k < in.K; ++k) {
      for (std::size_t j = 0; j < b.nu.size(); ++j) {
        if (!b.mask[k]) {
          b.nu[j][k] = 0.0;
          continue;
        }
        const double z = std::clamp(zeta(in, i, j, k, ind, after.L), -500.0, 500.0);
        b.nu[j][k] = 1.0 / (1.0 + std::exp(-z));
      }
    }
    used.push_back(after);
  }
  return used;
}

// ---------------------------------------------------------------------------
// Objective

namespace {

double xlogx(double v) {
  if (v <= 0.0) return 0.0;
  return v * std::log(std::max(v, 1e-12));
}

}  // namespace

double objective(const Instance& in, const std::vector<Mat>* frozen_q) {
  double kl_v = 0.0, kl_z = 0.0, kl_a = 0.0, nll = 0.0, hinge = 0.0;

  for (std::size_t i = 0; i < in.bags.size(); ++i) {
    const auto& b = in.bags[i];
    for (std::size_t k = 0; k < in.K; ++k) {
      const double a = b.tau[k][0], bb = b.tau[k][1];
      kl_v += lgamma(a + bb) - lgamma(a) - lgamma(bb) - std::log(in.alpha) +
              (a - in.alpha) * (digamma(a) - digamma(a + bb)) +
              (bb - 1.0) * (digamma(bb) - digamma(a + bb));
    }
    for (std::size_t k = 0; k < in.K; ++k) {
      double e_log_pi = 0.0;
      for (std::size_t t = 0; t <= k; ++t) {
        e_log_pi += digamma(b.tau[t][0]) - digamma(b.tau[t][0] + b.tau[t][1]);
      }
      const Vec q = frozen_q ? (*frozen_q)[i][k] : q_row(b.tau, k);
      const double L = lower_bound(b.tau, k, q);
      for (std::size_t j = 0; j < b.nu.size(); ++j) {
        const double v = b.nu[j][k];
        kl_z += xlogx(v) + xlogx(1.0 - v) - v * e_log_pi - (1.0 - v) * L;
      }
    }
    for (std::size_t c = 0; c < in.channels.size(); ++c) {
      const auto& ch = in.channels[c];
      const double D = static_cast<double>(ch.dim);
      for (std::size_t j = 0; j < b.nu.size(); ++j) {
        const auto& x = b.x[c][j];
        double xx = 0.0;
        for (std::size_t d = 0; d < ch.dim; ++d) xx += x[d] * x[d];
        double zax = 0.0;  // E[z] E[A] x^T
        for (std::size_t k = 0; k < in.K; ++k) {
          for (std::size_t d = 0; d < ch.dim; ++d) zax += b.nu[j][k] * ch.phi[k][d] * x[d];
        }
        double zuz = 0.0;  // E[z U z^T]
        for (std::size_t k = 0; k < in.K; ++k) {
          for (std::size_t l = 0; l < in.K; ++l) {
            double u = 0.0;
            for (std::size_t d = 0; d < ch.dim; ++d) u += ch.phi[k][d] * ch.phi[l][d];
            if (k == l) {
              zuz += b.nu[j][k] * (u + D * ch.sigma_k2[k]);
            } else {
              zuz += b.nu[j][k] * b.nu[j][l] * u;
            }
          }
        }
        nll += 0.5 * D * std::log(2.0 * std::numbers::pi * ch.sigma_n2) +
               (xx - 2.0 * zax + zuz) / (2.0 * ch.sigma_n2);
      }
    }
    if (b.penalized) {
      for (const auto& [fs, fa] : b.pairs) {
        double dot = 0.0;
        for (const auto& row : b.nu) dot += row[fs] * row[fa];
        hinge += std::max(0.0, 1.0 - dot);
      }
      for (auto f : b.singles) {
        double s = 0.0;
        for (const auto& row : b.nu) s += row[f];
        hinge += std::max(0.0, 1.0 - s);
      }
    }
  }

  for (const auto& ch : in.channels) {
    const double D = static_cast<double>(ch.dim);
    for (std::size_t k = 0; k < in.K; ++k) {
      double sq = 0.0;
      for (std::size_t d = 0; d < ch.dim; ++d) sq += ch.phi[k][d] * ch.phi[k][d];
      kl_a += (D * ch.sigma_k2[k] + sq) / (2.0 * ch.sigma_a2) - 0.5 * D -
              0.5 * D * std::log(ch.sigma_k2[k] / ch.sigma_a2);
    }
  }
  return kl_v + kl_z + kl_a + nll + in.C * hinge;
}

std::vector<std::pair<double, double>> variance_updates(const Instance& in) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t c = 0; c < in.channels.size(); ++c) {
    const auto& ch = in.channels[c];
    const double D = static_cast<double>(ch.dim);
    double a = 0.0;
    for (std::size_t k = 0; k < in.K; ++k) {
      double sq = 0.0;
      for (std::size_t d = 0; d < ch.dim; ++d) sq += ch.phi[k][d] * ch.phi[k][d];
      a += D * ch.sigma_k2[k] + sq;
    }
    a /= static_cast<double>(in.K) * D;

    double resid = 0.0, tracks = 0.0;
    for (const auto& b : in.bags) {
      for (std::size_t j = 0; j < b.nu.size(); ++j) {
        const auto& x = b.x[c][j];
        double xx = 0.0, zax = 0.0, zuz = 0.0;
        for (std::size_t d = 0; d < ch.dim; ++d) xx += x[d] * x[d];
        for (std::size_t k = 0; k < in.K; ++k) {
          for (std::size_t d = 0; d < ch.dim; ++d) zax += b.nu[j][k] * ch.phi[k][d] * x[d];
        }
        for (std::size_t k = 0; k < in.K; ++k) {
          for (std::size_t l = 0; l < in.K; ++l) {
            double u = 0.0;
            for (std::size_t d = 0; d < ch.dim; ++d) u += ch.phi[k][d] * ch.phi[l][d];
            zuz += k == l ? b.nu[j][k] * (u + D * ch.sigma_k2[k]) : b.nu[j][k] * b.nu[j][l] * u;
          }
        }
        resid += xx - 2.0 * zax + zuz;
        tracks += 1.0;
      }
    }
    out.emplace_back(a, resid / (tracks * D));
  }
  return out;
}

}  // namespace oracle
