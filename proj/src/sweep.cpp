#include "wsc/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "wsc/decode.hpp"
#include "wsc/errors.hpp"

namespace wsc {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? next : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

GridValue parse_value(std::string_view text, bool allow_kmax, std::string_view axis) {
  auto s = trim(text);
  GridValue v;
  if (!s.empty() && (s.back() == 'k' || s.back() == 'K')) {
    if (!allow_kmax) {
      throw ValidationError("grid axis " + std::string(axis) + " does not accept the k suffix");
    }
    v.per_kmax = true;
    s.remove_suffix(1);
  }
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, v.value);
  if (s.empty() || ec != std::errc() || ptr != last || !std::isfinite(v.value)) {
    throw ValidationError("bad grid value '" + std::string(trim(text)) + "' for " +
                          std::string(axis));
  }
  return v;
}

GridRange parse_range(std::string_view text, bool allow_kmax, std::string_view axis) {
  const auto parts = split(text, ':');
  GridRange r;
  if (parts.size() == 1) {
    r.start = r.end = parse_value(parts[0], allow_kmax, axis);
    return r;
  }
  if (parts.size() != 3) {
    throw ValidationError("grid range for " + std::string(axis) + " must be start:step:end");
  }
  r.start = parse_value(parts[0], allow_kmax, axis);
  r.step = parse_value(parts[1], allow_kmax, axis);
  r.end = parse_value(parts[2], allow_kmax, axis);
  if (!(r.step.value > 0.0)) {
    throw ValidationError("grid step for " + std::string(axis) + " must be > 0");
  }
  return r;
}

std::size_t to_count(double v) {
  if (!(v >= 1.0) || std::floor(v) != v) {
    throw ValidationError("grid kmax values must be positive integers");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<double> GridRange::expand(std::size_t k_max) const {
  const double a = start.resolve(k_max);
  const double b = end.resolve(k_max);
  const double s = step.resolve(k_max);
  if (s <= 0.0) return {a};
  std::vector<double> out;
  // Inclusive end, with slack for accumulated rounding in the step count.
  const auto n = static_cast<long>(std::floor((b - a) / s + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * s);
  return out;
}

GridSpec parse_grid(std::string_view text) {
  GridSpec g;
  for (auto item : split(text, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("grid entry '" + std::string(item) + "' must be name=range");
    }
    const auto name = trim(item.substr(0, eq));
    const auto body = item.substr(eq + 1);
    std::vector<GridRange>* axis = nullptr;
    bool allow_kmax = false;
    if (name == "kmax") {
      axis = &g.kmax;
    } else if (name == "alpha") {
      axis = &g.alpha;
      allow_kmax = true;
    } else if (name == "c" || name == "C") {
      axis = &g.c;
    } else {
      throw ValidationError("unknown grid axis '" + std::string(name) + "'");
    }
    for (auto r : split(body, ',')) {
      axis->push_back(parse_range(r, allow_kmax, name));
      if (axis == &g.kmax) {
        to_count(axis->back().start.value);
        to_count(axis->back().end.value);
        if (axis->back().step.value != 0.0) to_count(axis->back().step.value);
      }
    }
  }
  if (g.kmax.empty() && g.alpha.empty() && g.c.empty()) {
    throw ValidationError("empty hyperparameter grid");
  }
  return g;
}

std::vector<SweepPoint> expand_grid(const GridSpec& grid, const HyperParams& base) {
  std::vector<std::size_t> kmaxes;
  for (const auto& r : grid.kmax) {
    for (double v : r.expand(0)) kmaxes.push_back(to_count(v));
  }
  if (grid.kmax.empty()) kmaxes.push_back(base.k_max);

  std::vector<SweepPoint> out;
  for (auto k : kmaxes) {
    std::vector<double> alphas;
    for (const auto& r : grid.alpha) {
      const auto vals = r.expand(k);
      alphas.insert(alphas.end(), vals.begin(), vals.end());
    }
    if (grid.alpha.empty()) alphas.push_back(base.alpha);
    std::vector<double> cs;
    for (const auto& r : grid.c) {
      const auto vals = r.expand(k);
      cs.insert(cs.end(), vals.begin(), vals.end());
    }
    if (grid.c.empty()) cs.push_back(base.penalty_c);
    for (double a : alphas) {
      for (double c : cs) out.push_back({k, a, c});
    }
  }
  if (out.empty()) throw ValidationError("hyperparameter grid expands to no point");
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_bags(std::size_t num_bags,
                                                                          double fraction,
                                                                          std::uint64_t seed) {
  if (num_bags < 2) throw ValidationError("a validation split needs at least two videos");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(num_bags);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates on raw engine output so the split does not depend on the
  // standard library's distribution implementations.
  for (std::size_t i = num_bags - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(num_bags)));
  n_val = std::clamp<std::size_t>(n_val, 1, num_bags - 1);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

std::vector<SweepRow> run_sweep(const Dataset& dataset, const GridSpec& grid,
                                const SweepOptions& opts) {
  validate_dataset(dataset);
  const auto points = expand_grid(grid, opts.base);
  const auto [train_idx, val_idx] =
      split_bags(dataset.videos.size(), opts.validation_fraction, opts.fit.seed);

  Dataset train, val;
  train.space = val.space = dataset.space;
  for (auto i : train_idx) train.videos.push_back(dataset.videos[i]);
  for (auto i : val_idx) val.videos.push_back(dataset.videos[i]);

  std::vector<SweepRow> rows;
  for (const auto& p : points) {
    HyperParams hp = opts.base;
    hp.k_max = p.k_max;
    hp.alpha = p.alpha;
    hp.penalty_c = p.c;
    const auto fitted = fit(train, hp, opts.fit);
    const auto state = predict(fitted.model, val, PredictMode::with_labels, opts.fit);
    std::vector<Eigen::MatrixXd> nu;
    for (const auto& b : state.bags) nu.push_back(b.nu);
    const auto m = evaluate(nu, val, opts.theta_bg);
    rows.push_back({p, m.pairwise_accuracy, m.subject_accuracy, m.action_accuracy,
                    fitted.report.final_objective});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.pairwise_accuracy > b.pairwise_accuracy;
  });
  return rows;
}

std::string sweep_table(const std::vector<SweepRow>& rows, std::uint64_t seed) {
  auto num = [](double v) { return nlohmann::json(v).dump(); };
  std::ostringstream os;
  os << "rank\tkmax\talpha\tc\tpairwise_accuracy\tsubject_accuracy\taction_accuracy\tobjective\tseed\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    os << r + 1 << '\t' << row.point.k_max << '\t' << num(row.point.alpha) << '\t'
       << num(row.point.c) << '\t' << num(row.pairwise_accuracy) << '\t'
       << num(row.subject_accuracy) << '\t' << num(row.action_accuracy) << '\t'
       << num(row.final_objective) << '\t' << seed << '\n';
  }
  return os.str();
}

}  // namespace wsc
