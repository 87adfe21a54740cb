#pragma once

#include <Eigen/Sparse>

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "dode/csv.hpp"
#include "dode/dar.hpp"
#include "dode/error.hpp"
#include "dode/network.hpp"

namespace dode {

enum class Stream : int { count = 0, time = 1, density = 2 };

inline constexpr std::array<Stream, 3> kAllStreams{Stream::count, Stream::time, Stream::density};

inline const char* stream_name(Stream s) {
  switch (s) {
    case Stream::count: return "count";
    case Stream::time: return "time";
    case Stream::density: return "density";
  }
  return "?";
}

inline Stream parse_stream(const std::string& s) {
  if (s == "count") return Stream::count;
  if (s == "time") return Stream::time;
  if (s == "density") return Stream::density;
  throw ParseError("unknown observation stream '" + s + "'");
}

// One observed value and the modeled cells it aggregates. Counts and densities sum the
// cells; travel times average them.
struct ObservationRow {
  Stream stream = Stream::count;
  std::vector<VehicleClass> classes;
  std::vector<int> links;  // link indices
  std::vector<int> intervals;
  double value = 0.0;
  bool valid = true;
};

struct StreamObservations {
  std::vector<ObservationRow> rows;
  Eigen::VectorXd values;
  Eigen::VectorXd mask;  // 1 for rows that enter the loss, 0 otherwise
  PerClass<SparseMatrix> op;  // L, M or I: rows x (num_links * horizon_intervals)

  int size() const { return static_cast<int>(rows.size()); }
  bool empty() const { return rows.empty(); }
};

// Observed values with their aggregation operators, grouped by stream.
struct ObservationSet {
  int num_links = 0;
  int horizon_intervals = 0;
  std::array<StreamObservations, 3> streams;

  StreamObservations& operator[](Stream s) { return streams[static_cast<int>(s)]; }
  const StreamObservations& operator[](Stream s) const { return streams[static_cast<int>(s)]; }

  std::size_t total_rows() const { return streams[0].rows.size() + streams[1].rows.size() + streams[2].rows.size(); }
};

// Builds L, M and I from observation rows over a (num_links x horizon_intervals) cell grid.
inline ObservationSet build_aggregation(const std::vector<ObservationRow>& rows, int num_links, int horizon_intervals) {
  ObservationSet obs;
  obs.num_links = num_links;
  obs.horizon_intervals = horizon_intervals;
  for (const auto& r : rows) obs[r.stream].rows.push_back(r);
  const int cells = num_links * horizon_intervals;
  for (auto s : kAllStreams) {
    auto& so = obs[s];
    so.values.resize(so.size());
    so.mask.resize(so.size());
    PerClass<std::vector<Triplet>> trips;
    for (int i = 0; i < so.size(); ++i) {
      const auto& r = so.rows[i];
      if (r.classes.empty() || r.links.empty() || r.intervals.empty())
        throw InvariantError(std::string("build_aggregation: empty ") + stream_name(s) + " observation row " + std::to_string(i));
      for (int a : r.links)
        if (a < 0 || a >= num_links) throw TopologyError("build_aggregation: link index out of range");
      for (int t : r.intervals)
        if (t < 0 || t >= horizon_intervals) throw InvariantError("build_aggregation: interval outside horizon");
      double n = static_cast<double>(r.classes.size() * r.links.size() * r.intervals.size());
      double weight = s == Stream::time ? 1.0 / n : 1.0;
      for (auto c : r.classes)
        for (int a : r.links)
          for (int t : r.intervals) trips[index_of(c)].emplace_back(i, a * horizon_intervals + t, weight);
      so.values[i] = r.value;
      so.mask[i] = r.valid ? 1.0 : 0.0;
    }
    for (int c = 0; c < kNumClasses; ++c) {
      so.op[c].resize(so.size(), cells);
      so.op[c].setFromTriplets(trips[c].begin(), trips[c].end());
      so.op[c].makeCompressed();
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Row builders for the common aggregation patterns.

// One row per (class, link, interval) cell.
inline std::vector<ObservationRow> identity_rows(Stream s, const std::vector<int>& links, const std::vector<int>& intervals) {
  std::vector<ObservationRow> out;
  for (auto c : kAllClasses)
    for (int a : links)
      for (int t : intervals) out.push_back({s, {c}, {a}, {t}, 0.0, true});
  return out;
}

// Consecutive groups of `group` intervals summed into one row, e.g. four 15-min counts into an hour.
inline std::vector<ObservationRow> temporal_sum_rows(Stream s, VehicleClass c, int link, int first_interval, int num_intervals,
                                                     int group) {
  std::vector<ObservationRow> out;
  for (int t = first_interval; t + group <= first_interval + num_intervals; t += group) {
    ObservationRow r{s, {c}, {link}, {}, 0.0, true};
    for (int k = 0; k < group; ++k) r.intervals.push_back(t + k);
    out.push_back(std::move(r));
  }
  return out;
}

// Opposite directions of a road merged into one density row.
inline ObservationRow direction_pair_row(VehicleClass c, int link_a, int link_b, int interval) {
  return {Stream::density, {c}, {link_a, link_b}, {interval}, 0.0, true};
}

// Car and truck densities merged into one row.
inline ObservationRow cross_class_row(int link, int interval) {
  return {Stream::density, {VehicleClass::car, VehicleClass::truck}, {link}, {interval}, 0.0, true};
}

// ---------------------------------------------------------------------------
// Observation file: `stream,class_or_all,link_or_group,interval_or_group,value`, groups joined by '+'.

inline std::vector<ObservationRow> load_observations(const Network& net, const std::string& path) {
  auto t = csv::read_file(path);
  const char* names[] = {"stream", "class_or_all", "link_or_group", "interval_or_group", "value"};
  int col[5];
  for (int i = 0; i < 5; ++i) {
    col[i] = t.column(names[i]);
    if (col[i] < 0) throw ParseError(path + ": missing column '" + names[i] + "'");
  }
  std::vector<ObservationRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& cells = t.rows[i];
    try {
      ObservationRow r;
      r.stream = parse_stream(cells[col[0]]);
      if (cells[col[1]] == "all") r.classes = {VehicleClass::car, VehicleClass::truck};
      else
        for (const auto& c : csv::split(cells[col[1]], '+')) r.classes.push_back(parse_class(c));
      for (const auto& id : csv::split(cells[col[2]], '+')) {
        auto idx = net.find_link(static_cast<int>(csv::to_int(id, "link")));
        if (!idx) throw ParseError("unknown link id " + id);
        r.links.push_back(*idx);
      }
      for (const auto& iv : csv::split(cells[col[3]], '+')) r.intervals.push_back(static_cast<int>(csv::to_int(iv, "interval")));
      r.value = csv::to_double(cells[col[4]], "value");
      rows.push_back(std::move(r));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(t.line_numbers[i]) + ": " + e.what());
    }
  }
  return rows;
}

inline void save_observations(const Network& net, const std::vector<ObservationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "stream,class_or_all,link_or_group,interval_or_group,value\n";
  for (const auto& r : rows) {
    out << stream_name(r.stream) << ',';
    if (r.classes.size() == kNumClasses) out << "all";
    else
      for (std::size_t i = 0; i < r.classes.size(); ++i) out << (i ? "+" : "") << class_name(r.classes[i]);
    out << ',';
    for (std::size_t i = 0; i < r.links.size(); ++i) out << (i ? "+" : "") << net.links()[r.links[i]].id;
    out << ',';
    for (std::size_t i = 0; i < r.intervals.size(); ++i) out << (i ? "+" : "") << r.intervals[i];
    out << ',' << csv::fmt(r.value) << '\n';
  }
}

}  // namespace dode
