#pragma once

#include <Eigen/Sparse>

#include <array>
#include <fstream>
#include <vector>

#include "dode/dnl.hpp"
#include "dode/error.hpp"
#include "dode/network.hpp"
#include "dode/tensor.hpp"

namespace dode {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

// Dynamic assignment ratios. For class c and curve kind k, rho[c][k] maps path flow
// coordinates (path * demand_intervals + t1) to link-interval rows (link * horizon_intervals + t2).
struct DarMatrixSet {
  int num_links = 0;
  int horizon_intervals = 0;
  int demand_intervals = 0;
  PerClass<int> num_paths{};
  PerClass<std::array<SparseMatrix, 4>> rho;
  PerClass<SparseMatrix> arrival;  // rho_arr^m + rho_arr^p
  PerClass<SparseMatrix> change;   // arrivals minus departures

  int rows() const { return num_links * horizon_intervals; }
  int cols(VehicleClass c) const { return num_paths[index_of(c)] * demand_intervals; }

  const SparseMatrix& of(VehicleClass c, CurveKind k) const { return rho[index_of(c)][static_cast<int>(k)]; }

  void compile_sums() {
    for (int c = 0; c < kNumClasses; ++c) {
      arrival[c] = rho[c][0] + rho[c][1];
      change[c] = arrival[c] - rho[c][2] - rho[c][3];
    }
  }

  void require_compatible(const ClassTensor& f, const char* what) const {
    for (auto c : kAllClasses) {
      if (f[c].rows() != num_paths[index_of(c)] || f[c].cols() != demand_intervals)
        throw DimensionError(std::string(what) + ": path flow shape does not match DAR columns");
    }
  }
};

// rho[(a,t2),(k,t1)] accumulates increment size / f[k][t1] over every tagged curve increment.
inline DarMatrixSet extract_dar(const CumulativeCurveSet& cs, const PathFlowTensor& f) {
  DarMatrixSet dar;
  dar.num_links = cs.num_links();
  dar.horizon_intervals = cs.horizon_intervals;
  dar.demand_intervals = static_cast<int>(f.data[0].cols());
  const int T2 = dar.horizon_intervals, T1 = dar.demand_intervals;
  for (auto c : kAllClasses) {
    int ci = index_of(c);
    dar.num_paths[ci] = static_cast<int>(f[c].rows());
    for (auto k : kAllCurves) {
      std::vector<Triplet> trips;
      for (int a = 0; a < dar.num_links; ++a) {
        for (const auto& e : cs.curve(a, c, k).events()) {
          double flow = f[c](e.path, e.depart_interval);
          if (!(flow > 0)) {
            throw InvariantError("extract_dar: increment tagged with zero-flow column (path " + std::to_string(e.path) +
                                 ", interval " + std::to_string(e.depart_interval) + ")");
          }
          int t2 = e.step / cs.steps_per_interval;
          trips.emplace_back(a * T2 + t2, e.path * T1 + e.depart_interval, e.size / flow);
        }
      }
      auto& m = dar.rho[ci][static_cast<int>(k)];
      m.resize(dar.rows(), dar.cols(c));
      m.setFromTriplets(trips.begin(), trips.end());
      m.makeCompressed();
    }
  }
  dar.compile_sums();
  return dar;
}

// Zero-flow columns have no entries in a fresh extraction. Borrow them from `previous`
// (the last DAR in which those columns carried flow) so the gradient still sees them.
inline DarMatrixSet fill_missing_columns(const DarMatrixSet& current, const DarMatrixSet& previous, const PathFlowTensor& f) {
  DarMatrixSet out = current;
  if (previous.rows() != current.rows() || previous.num_paths != current.num_paths ||
      previous.demand_intervals != current.demand_intervals)
    return out;
  for (auto c : kAllClasses) {
    int ci = index_of(c);
    auto flat = f.flat(c);
    std::vector<char> empty(static_cast<std::size_t>(current.cols(c)), 0);
    bool any = false;
    for (int j = 0; j < current.cols(c); ++j) {
      if (!(flat[j] > 0)) empty[j] = 1, any = true;
    }
    if (!any) continue;
    for (int k = 0; k < 4; ++k) {
      std::vector<Triplet> trips;
      const auto& cur = current.rho[ci][k];
      const auto& prev = previous.rho[ci][k];
      for (int r = 0; r < cur.outerSize(); ++r) {
        for (SparseMatrix::InnerIterator it(cur, r); it; ++it)
          if (!empty[it.col()]) trips.emplace_back(r, it.col(), it.value());
        for (SparseMatrix::InnerIterator it(prev, r); it; ++it)
          if (empty[it.col()]) trips.emplace_back(r, it.col(), it.value());
      }
      auto& m = out.rho[ci][k];
      m.setZero();
      m.setFromTriplets(trips.begin(), trips.end());
      m.makeCompressed();
    }
  }
  out.compile_sums();
  return out;
}

// H: per link block, lower-triangular ones mapping interval flows to cumulative-to-t sums.
class CumulationOperator {
 public:
  CumulationOperator(int num_links, int intervals) : links_(num_links), intervals_(intervals) {}

  int size() const { return links_ * intervals_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    check(v);
    Eigen::VectorXd out = v;
    for (int a = 0; a < links_; ++a)
      for (int t = 1; t < intervals_; ++t) out[a * intervals_ + t] += out[a * intervals_ + t - 1];
    return out;
  }

  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& v) const {
    check(v);
    Eigen::VectorXd out = v;
    for (int a = 0; a < links_; ++a)
      for (int t = intervals_ - 2; t >= 0; --t) out[a * intervals_ + t] += out[a * intervals_ + t + 1];
    return out;
  }

  SparseMatrix to_sparse() const {
    std::vector<Triplet> trips;
    for (int a = 0; a < links_; ++a)
      for (int t = 0; t < intervals_; ++t)
        for (int s = 0; s <= t; ++s) trips.emplace_back(a * intervals_ + t, a * intervals_ + s, 1.0);
    SparseMatrix m(size(), size());
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
  }

 private:
  void check(const Eigen::VectorXd& v) const {
    if (v.size() != size()) throw DimensionError("CumulationOperator: vector length mismatch");
  }

  int links_;
  int intervals_;
};

// S: averages each link's values over intervals [t - delta, t + delta] clipped to the horizon.
inline SparseMatrix smoothing_operator(int num_links, int intervals, int delta) {
  std::vector<Triplet> trips;
  for (int a = 0; a < num_links; ++a) {
    for (int t = 0; t < intervals; ++t) {
      int lo = std::max(0, t - delta), hi = std::min(intervals - 1, t + delta);
      for (int s = lo; s <= hi; ++s) trips.emplace_back(a * intervals + t, a * intervals + s, 1.0 / (hi - lo + 1));
    }
  }
  SparseMatrix m(num_links * intervals, num_links * intervals);
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

// x = (rho_arr^m + rho_arr^p) f, per class, as a (link x horizon interval) tensor.
inline ClassTensor reconstruct_flow(const DarMatrixSet& dar, const PathFlowTensor& f) {
  dar.require_compatible(f, "reconstruct_flow");
  ClassTensor x(dar.num_links, dar.horizon_intervals);
  for (auto c : kAllClasses) x.flat(c) = dar.arrival[index_of(c)] * f.flat(c);
  return x;
}

// k*l = H (rho_arr - rho_dep) f, optionally followed by interval smoothing.
inline ClassTensor reconstruct_density(const DarMatrixSet& dar, const CumulationOperator& H, const PathFlowTensor& f,
                                       int delta = 0) {
  dar.require_compatible(f, "reconstruct_density");
  if (H.size() != dar.rows()) throw DimensionError("reconstruct_density: H does not match DAR rows");
  ClassTensor kl(dar.num_links, dar.horizon_intervals);
  SparseMatrix S;
  if (delta > 0) S = smoothing_operator(dar.num_links, dar.horizon_intervals, delta);
  for (auto c : kAllClasses) {
    Eigen::VectorXd r = H.apply(dar.change[index_of(c)] * f.flat(c));
    kl.flat(c) = delta > 0 ? Eigen::VectorXd(S * r) : r;
  }
  return kl;
}

// CSV dump `class,kind,link,t2,path,t1,value`.
inline void dump_dar(const Network& net, const DarMatrixSet& dar, std::ostream& out) {
  out << "class,kind,link,t2,path,t1,value\n";
  for (auto c : kAllClasses) {
    for (auto k : kAllCurves) {
      const auto& m = dar.of(c, k);
      for (int r = 0; r < m.outerSize(); ++r) {
        for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
          int a = r / dar.horizon_intervals, t2 = r % dar.horizon_intervals;
          int col = static_cast<int>(it.col());
          out << class_name(c) << ',' << curve_name(k) << ',' << net.links()[a].id << ',' << t2 << ','
              << col / dar.demand_intervals << ',' << col % dar.demand_intervals << ',' << csv::fmt(it.value()) << '\n';
        }
      }
    }
  }
}

}  // namespace dode
