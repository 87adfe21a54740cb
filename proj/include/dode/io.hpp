#pragma once

#include <fstream>
#include <map>
#include <string>
#include <utility>

#include "dode/csv.hpp"
#include "dode/estimator.hpp"

namespace dode {

inline void write_trace(const ConvergenceTrace& trace, std::ostream& out) {
  out << "epoch,loss,loss_count,loss_time,loss_density,grad_norm,dnl_evaluations\n";
  for (const auto& r : trace.rows)
    out << r.epoch << ',' << csv::fmt(r.loss.total) << ',' << csv::fmt(r.loss.count) << ',' << csv::fmt(r.loss.time) << ','
        << csv::fmt(r.loss.density) << ',' << csv::fmt(r.grad_norm) << ',' << r.dnl_evaluations << '\n';
}

inline void write_trace(const ConvergenceTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_trace(trace, out);
}

inline void write_demand(const Network& net, const DemandTensor& q, std::ostream& out) {
  out << "class,origin,destination,interval,demand\n";
  for (auto c : kAllClasses)
    for (int r = 0; r < q[c].rows(); ++r)
      for (int t = 0; t < q[c].cols(); ++t)
        out << class_name(c) << ',' << net.od_pairs()[r].origin << ',' << net.od_pairs()[r].destination << ',' << t << ','
            << csv::fmt(q[c](r, t)) << '\n';
}

inline void write_demand(const Network& net, const DemandTensor& q, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_demand(net, q, out);
}

// Reads `class,origin,destination,interval,demand`; cells not listed stay zero.
inline DemandTensor load_demand(const Network& net, int intervals, const std::string& path) {
  auto t = csv::read_file(path);
  const char* names[] = {"class", "origin", "destination", "interval", "demand"};
  int col[5];
  for (int i = 0; i < 5; ++i) {
    col[i] = t.column(names[i]);
    if (col[i] < 0) throw ParseError(path + ": missing column '" + names[i] + "'");
  }
  std::map<std::pair<int, int>, int> od_index;
  for (int r = 0; r < net.num_od_pairs(); ++r) od_index[{net.od_pairs()[r].origin, net.od_pairs()[r].destination}] = r;
  DemandTensor q(net.num_od_pairs(), intervals);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    auto where = path + ":" + std::to_string(t.line_numbers[i]) + ": ";
    try {
      auto c = parse_class(row[col[0]]);
      int o = static_cast<int>(csv::to_int(row[col[1]], "origin")), d = static_cast<int>(csv::to_int(row[col[2]], "destination"));
      auto it = od_index.find({o, d});
      if (it == od_index.end()) throw ParseError("unknown OD pair " + std::to_string(o) + "->" + std::to_string(d));
      int iv = static_cast<int>(csv::to_int(row[col[3]], "interval"));
      if (iv < 0 || iv >= intervals) throw ParseError("interval outside demand horizon");
      double v = csv::to_double(row[col[4]], "demand");
      if (v < 0) throw InvariantError(where + "negative demand");
      q[c](it->second, iv) = v;
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
  }
  return q;
}

}  // namespace dode
