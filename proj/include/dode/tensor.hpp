#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <string>

#include "dode/error.hpp"
#include "dode/network.hpp"

namespace dode {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One row-major matrix per vehicle class. Rows index ODs, paths, or links depending on
// use; columns index intervals. Row-major flattening gives the (row, interval) order
// used by every sparse operator in the library.
struct ClassTensor {
  PerClass<RowMatrix> data;

  ClassTensor() = default;
  ClassTensor(const PerClass<int>& rows, int cols) {
    for (int c = 0; c < kNumClasses; ++c) data[c] = RowMatrix::Zero(rows[c], cols);
  }
  ClassTensor(int rows, int cols) : ClassTensor(PerClass<int>{rows, rows}, cols) {}

  RowMatrix& operator[](VehicleClass c) { return data[index_of(c)]; }
  const RowMatrix& operator[](VehicleClass c) const { return data[index_of(c)]; }

  Eigen::Map<Eigen::VectorXd> flat(VehicleClass c) { return {(*this)[c].data(), (*this)[c].size()}; }
  Eigen::Map<const Eigen::VectorXd> flat(VehicleClass c) const { return {(*this)[c].data(), (*this)[c].size()}; }

  bool same_shape(const ClassTensor& o) const {
    for (int c = 0; c < kNumClasses; ++c)
      if (data[c].rows() != o.data[c].rows() || data[c].cols() != o.data[c].cols()) return false;
    return true;
  }

  double min_coeff() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& d : data)
      if (d.size()) m = std::min(m, d.minCoeff());
    return m;
  }

  bool all_finite() const {
    for (const auto& d : data)
      if (!d.allFinite()) return false;
    return true;
  }

  std::size_t total_size() const { return static_cast<std::size_t>(data[0].size() + data[1].size()); }
};

// q[class](od, interval), veh.
using DemandTensor = ClassTensor;
// f[class](path, depart interval), veh.
using PathFlowTensor = ClassTensor;
// p[class](path, depart interval); sums to one over the paths of each OD.
using RouteProportions = ClassTensor;

inline void require_same_shape(const ClassTensor& a, const ClassTensor& b, const std::string& what) {
  if (!a.same_shape(b)) throw DimensionError(what + ": shape mismatch");
}

}  // namespace dode
