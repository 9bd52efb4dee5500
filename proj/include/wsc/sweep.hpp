#pragma once

// Hyperparameter grid search on a held-out validation split.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "wsc/inference.hpp"
#include "wsc/types.hpp"

namespace wsc {

/// One bound of a range. `per_kmax` multiplies the row's K_max ("3k").
struct GridValue {
  double value = 0.0;
  bool per_kmax = false;

  double resolve(std::size_t k_max) const { return per_kmax ? value * static_cast<double>(k_max) : value; }
};

/// Inclusive range start:step:end, or a single value when step is 0.
struct GridRange {
  GridValue start, step, end;

  std::vector<double> expand(std::size_t k_max) const;
};

/// Axes of the grid. Empty axes fall back to the base hyperparameters.
struct GridSpec {
  std::vector<GridRange> kmax, alpha, c;
};

/// Parses e.g. "kmax=30:10:50;alpha=3k:10:4k;c=0:0.5:5". Values may also be
/// comma-separated lists of ranges. Throws ValidationError on bad syntax or
/// when the grid expands to no point.
GridSpec parse_grid(std::string_view text);

struct SweepPoint {
  std::size_t k_max = 0;
  double alpha = 0.0;
  double c = 0.0;
};

/// Cartesian product in kmax, alpha, c order. Alpha is resolved per K_max.
std::vector<SweepPoint> expand_grid(const GridSpec& grid, const HyperParams& base);

struct SweepOptions {
  HyperParams base;
  FitOptions fit;
  /// Fraction of bags held out for validation; at least one bag on each side.
  double validation_fraction = 0.2;
  double theta_bg = 0.5;
};

struct SweepRow {
  SweepPoint point;
  double pairwise_accuracy = 0.0;
  double subject_accuracy = 0.0;
  double action_accuracy = 0.0;
  double final_objective = 0.0;
};

/// Seeded split of bag indices into (train, validation).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_bags(std::size_t num_bags,
                                                                          double fraction,
                                                                          std::uint64_t seed);

/// Fits every grid point on the training split, predicts the validation split
/// with its labels and ranks rows by validation pairwise accuracy (stable).
std::vector<SweepRow> run_sweep(const Dataset& dataset, const GridSpec& grid,
                                const SweepOptions& opts);

/// Tab-separated table with a header, one row per grid point, rank first.
/// The seed of the split and fits is repeated on every row.
std::string sweep_table(const std::vector<SweepRow>& rows, std::uint64_t seed);

}  // namespace wsc
