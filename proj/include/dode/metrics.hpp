#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dode/error.hpp"

namespace dode {

struct FitMetrics {
  std::optional<double> r2;  // empty when the reference has zero variance
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

// R^2 = 1 - SS_res / SS_tot against `reference`, plus MAE and RMSE.
inline FitMetrics compute_metrics(const std::vector<double>& estimate, const std::vector<double>& reference) {
  if (estimate.size() != reference.size()) throw DimensionError("compute_metrics: size mismatch");
  FitMetrics m;
  m.n = estimate.size();
  if (m.n == 0) return m;
  double mean = 0.0;
  for (double r : reference) mean += r;
  mean /= static_cast<double>(m.n);
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    double e = estimate[i] - reference[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (reference[i] - mean) * (reference[i] - mean);
  }
  m.mae = abs_sum / static_cast<double>(m.n);
  m.rmse = std::sqrt(ss_res / static_cast<double>(m.n));
  if (ss_tot > 1e-12 * std::max(1.0, mean * mean) * static_cast<double>(m.n)) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

}  // namespace dode
