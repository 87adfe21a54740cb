#pragma once

#include <algorithm>
#include <cmath>

#include "dode/error.hpp"
#include "dode/paths.hpp"
#include "dode/tensor.hpp"

namespace dode {

// Path costs at free-flow speed, constant over departure intervals.
inline ClassTensor free_flow_path_costs(const PathSet& paths, int intervals) {
  ClassTensor costs(PerClass<int>{paths.by_class[0].num_paths(), paths.by_class[1].num_paths()}, intervals);
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    for (int k = 0; k < cp.num_paths(); ++k) costs[c].row(k).setConstant(cp.paths[k].free_flow_time[index_of(c)]);
  }
  return costs;
}

// Multinomial logit over -logit_scale * cost within each (OD, class, interval).
inline RouteProportions route_choice(const PathSet& paths, const ClassTensor& path_costs, double logit_scale) {
  RouteProportions p = path_costs;
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    const auto& cost = path_costs[c];
    if (cost.rows() != cp.num_paths()) throw DimensionError("route_choice: cost rows != number of paths");
    if (!cost.allFinite() || (cost.size() && cost.minCoeff() <= 0)) throw InvariantError("route_choice: costs must be finite and positive");
    for (int r = 0; r < paths.num_ods(); ++r) {
      int b = cp.od_begin[r], e = cp.od_begin[r + 1];
      if (b == e) {
        if (paths.is_dropped(r)) continue;
        throw TopologyError("route_choice: OD pair " + std::to_string(r) + " has no paths");
      }
      for (int t = 0; t < cost.cols(); ++t) {
        double best = cost.col(t).segment(b, e - b).minCoeff();
        double z = 0.0;
        for (int k = b; k < e; ++k) z += std::exp(-logit_scale * (cost(k, t) - best));
        for (int k = b; k < e; ++k) p[c](k, t) = std::exp(-logit_scale * (cost(k, t) - best)) / z;
      }
    }
  }
  return p;
}

// f[k][t] = p[k][t] * q[od(k)][t].
inline PathFlowTensor assign_path_flows(const PathSet& paths, const DemandTensor& q, const RouteProportions& p) {
  if (q.min_coeff() < 0) throw InvariantError("assign_path_flows: negative demand");
  PathFlowTensor f = p;
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    if (q[c].rows() != paths.num_ods() || q[c].cols() != p[c].cols() || p[c].rows() != cp.num_paths())
      throw DimensionError("assign_path_flows: shape mismatch");
    for (int k = 0; k < cp.num_paths(); ++k) f[c].row(k) = p[c].row(k).cwiseProduct(q[c].row(cp.paths[k].od));
  }
  return f;
}

// Inverse aggregation: q[od][t] = sum of f over the OD's paths.
inline DemandTensor demand_of(const PathSet& paths, const PathFlowTensor& f) {
  DemandTensor q(paths.num_ods(), static_cast<int>(f.data[0].cols()));
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    for (int k = 0; k < cp.num_paths(); ++k) q[c].row(cp.paths[k].od) += f[c].row(k);
  }
  return q;
}

}  // namespace dode
