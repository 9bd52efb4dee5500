#pragma once

namespace wsc {

/// Digamma for x > 0: upward recurrence to x >= 6, then the asymptotic series.
/// Absolute error is below 1e-12 for x >= 1e-3.
double digamma(double x);

/// log Gamma(x) for x > 0. Reentrant.
double log_gamma(double x);

/// Logistic function with the argument clamped to [-500, 500].
double sigmoid(double z);

}  // namespace wsc
