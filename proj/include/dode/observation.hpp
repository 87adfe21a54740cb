#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dode/aggregation.hpp"
#include "dode/csv.hpp"
#include "dode/error.hpp"
#include "dode/network.hpp"

namespace dode {

enum class DetectionClass { car, truck, other };

inline DetectionClass parse_detection_class(const std::string& s) {
  if (s == "car") return DetectionClass::car;
  if (s == "truck") return DetectionClass::truck;
  if (s == "other") return DetectionClass::other;
  throw ParseError("unknown detection class '" + s + "'");
}

inline const char* detection_class_name(DetectionClass c) {
  switch (c) {
    case DetectionClass::car: return "car";
    case DetectionClass::truck: return "truck";
    case DetectionClass::other: return "other";
  }
  return "?";
}

struct Detection {
  int id = 0;
  double x = 0.0;  // m
  double y = 0.0;
  DetectionClass cls = DetectionClass::car;
  int snapshot_id = 0;
  int interval = 0;
};

inline double point_segment_distance(Point p, Point a, Point b) {
  double dx = b.x - a.x, dy = b.y - a.y;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0) : 0.0;
  double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::hypot(ex, ey);
}

struct MatchResult {
  std::vector<std::optional<int>> link;  // link index per detection, empty when unmatched or dropped
  std::vector<double> distance;          // to the nearest link (infinity for dropped detections)
  std::vector<char> dropped;             // class "other"
  std::size_t matched = 0;
  std::size_t unmatched = 0;
  std::size_t num_dropped = 0;
};

// Nearest link by perpendicular distance to the straight node-to-node segment, within
// `buffer` meters. Near-ties (1e-9 m) go to the lower link id.
inline MatchResult match_detections(const std::vector<Detection>& dets, const Network& net, const NodeCoordinates& xy,
                                    double buffer, bool include_connectors = false) {
  if (!(buffer > 0)) throw InvariantError("match_detections: buffer must be > 0");
  struct Seg {
    int index, id;
    Point a, b;
  };
  std::vector<Seg> segs;
  for (int i = 0; i < net.num_links(); ++i) {
    const auto& l = net.links()[i];
    if (l.is_connector && !include_connectors) continue;
    auto fa = xy.find(l.from), fb = xy.find(l.to);
    if (fa == xy.end() || fb == xy.end())
      throw TopologyError("match_detections: missing coordinates for link " + std::to_string(l.id));
    segs.push_back({i, l.id, fa->second, fb->second});
  }
  std::sort(segs.begin(), segs.end(), [](const Seg& a, const Seg& b) { return a.id < b.id; });

  MatchResult out;
  out.link.resize(dets.size());
  out.distance.assign(dets.size(), std::numeric_limits<double>::infinity());
  out.dropped.assign(dets.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (!std::isfinite(d.x) || !std::isfinite(d.y)) throw InvariantError("match_detections: non-finite coordinates");
    if (d.cls == DetectionClass::other) {
      out.dropped[i] = 1;
      ++out.num_dropped;
      continue;
    }
    double best = std::numeric_limits<double>::infinity();
    int best_index = -1;
    for (const auto& s : segs) {
      double dist = point_segment_distance({d.x, d.y}, s.a, s.b);
      if (dist < best - 1e-9) best = dist, best_index = s.index;
    }
    out.distance[i] = best;
    if (best_index >= 0 && best <= buffer) {
      out.link[i] = best_index;
      ++out.matched;
    } else {
      ++out.unmatched;
    }
  }
  return out;
}

// Matched vehicle counts of one snapshot by (link, class).
struct DensitySnapshot {
  int snapshot_id = 0;
  int interval = 0;
  std::map<int, PerClass<double>> counts;  // link index -> per-class matched count
};

inline std::vector<DensitySnapshot> snapshots_from_matches(const std::vector<Detection>& dets, const MatchResult& m,
                                                           const std::vector<int>& links) {
  std::map<int, DensitySnapshot> by_id;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    auto& s = by_id[dets[i].snapshot_id];
    s.snapshot_id = dets[i].snapshot_id;
    s.interval = dets[i].interval;
    if (s.counts.empty())
      for (int a : links) s.counts[a] = {0.0, 0.0};
    if (!m.link[i]) continue;
    int a = *m.link[i];
    if (!s.counts.count(a)) continue;
    s.counts[a][dets[i].cls == DetectionClass::car ? 0 : 1] += 1.0;
  }
  std::vector<DensitySnapshot> out;
  for (auto& [id, s] : by_id) out.push_back(std::move(s));
  return out;
}

enum class DensityAggregation { per_class, cross_class };

// Density rows for one snapshot, matched counts standing in for k*l.
inline std::vector<ObservationRow> build_density_observation(const DensitySnapshot& snap, int horizon_intervals,
                                                             DensityAggregation agg = DensityAggregation::per_class) {
  if (snap.interval < 0 || snap.interval >= horizon_intervals)
    throw InvariantError("build_density_observation: snapshot interval outside horizon");
  std::vector<ObservationRow> rows;
  if (agg == DensityAggregation::cross_class) {
    for (const auto& [a, v] : snap.counts) {
      auto r = cross_class_row(a, snap.interval);
      r.value = v[0] + v[1];
      rows.push_back(std::move(r));
    }
    return rows;
  }
  for (auto c : kAllClasses)
    for (const auto& [a, v] : snap.counts) rows.push_back({Stream::density, {c}, {a}, {snap.interval}, v[index_of(c)], true});
  return rows;
}

// Multiplies every value by an independent Uniform(1 - level, 1 + level) factor.
inline std::vector<double> inject_noise(const std::vector<double>& values, double level, unsigned long long seed) {
  if (level < 0) throw InvariantError("inject_noise: level must be >= 0");
  if (level == 0) return values;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1.0 - level, 1.0 + level);
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] * u(rng);
  return out;
}

inline std::vector<int> select_consistent_links(const std::map<int, double>& a, const std::map<int, double>& b,
                                                double threshold) {
  if (a.size() != b.size()) throw InvariantError("select_consistent_links: snapshots cover different links");
  std::vector<int> out;
  for (const auto& [link, va] : a) {
    auto it = b.find(link);
    if (it == b.end()) throw InvariantError("select_consistent_links: snapshots cover different links");
    if (std::abs(va - it->second) <= threshold) out.push_back(link);
  }
  return out;
}

// Keeps links whose estimate is within 3x the observation in every class, or at most
// `zero_cap` where the observation is zero.
inline std::vector<int> two_stage_filter(const std::map<int, PerClass<double>>& estimated,
                                         const std::map<int, PerClass<double>>& observed, double zero_cap = 10.0) {
  std::vector<int> out;
  for (const auto& [link, obs] : observed) {
    auto it = estimated.find(link);
    if (it == estimated.end()) continue;
    bool keep = true;
    for (int c = 0; c < kNumClasses; ++c) {
      double o = obs[c], e = it->second[c];
      keep = keep && (o > 0 ? e <= 3.0 * o : e <= zero_cap);
    }
    if (keep) out.push_back(link);
  }
  return out;
}

// Scalar version over a single class.
inline std::vector<int> two_stage_filter(const std::map<int, double>& estimated, const std::map<int, double>& observed,
                                         double zero_cap = 10.0) {
  std::map<int, PerClass<double>> e, o;
  for (const auto& [k, v] : estimated) e[k] = {v, 0.0};
  for (const auto& [k, v] : observed) o[k] = {v, 0.0};
  return two_stage_filter(e, o, zero_cap);
}

// Points scattered uniformly along each link, one per vehicle in `counts` (rounded), with
// Gaussian lateral offset.
inline std::vector<Detection> synthesize_detections(const Network& net, const NodeCoordinates& xy,
                                                    const std::map<int, PerClass<double>>& counts, int snapshot_id,
                                                    int interval, double lateral_sd, unsigned long long seed,
                                                    int first_id = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, lateral_sd);
  std::vector<Detection> out;
  int id = first_id;
  for (const auto& [a, v] : counts) {
    const auto& l = net.links()[a];
    auto fa = xy.find(l.from), fb = xy.find(l.to);
    if (fa == xy.end() || fb == xy.end()) throw TopologyError("synthesize_detections: missing coordinates");
    Point p0 = fa->second, p1 = fb->second;
    double len = std::hypot(p1.x - p0.x, p1.y - p0.y);
    double nx = len > 0 ? -(p1.y - p0.y) / len : 0.0, ny = len > 0 ? (p1.x - p0.x) / len : 0.0;
    for (auto c : kAllClasses) {
      long k = std::lround(std::max(0.0, v[index_of(c)]));
      for (long i = 0; i < k; ++i) {
        double s = u(rng), off = lateral_sd > 0 ? n(rng) : 0.0;
        out.push_back({id++, p0.x + s * (p1.x - p0.x) + off * nx, p0.y + s * (p1.y - p0.y) + off * ny,
                       c == VehicleClass::car ? DetectionClass::car : DetectionClass::truck, snapshot_id, interval});
      }
    }
  }
  return out;
}

inline std::vector<Detection> load_detections(const std::string& path) {
  auto t = csv::read_file(path);
  const char* names[] = {"id", "x", "y", "class", "snapshot_id", "interval"};
  int col[6];
  for (int i = 0; i < 6; ++i) {
    col[i] = t.column(names[i]);
    if (col[i] < 0) throw ParseError(path + ": missing column '" + names[i] + "'");
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    try {
      out.push_back({static_cast<int>(csv::to_int(r[col[0]], "id")), csv::to_double(r[col[1]], "x"),
                     csv::to_double(r[col[2]], "y"), parse_detection_class(r[col[3]]),
                     static_cast<int>(csv::to_int(r[col[4]], "snapshot_id")),
                     static_cast<int>(csv::to_int(r[col[5]], "interval"))});
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(t.line_numbers[i]) + ": " + e.what());
    }
  }
  return out;
}

inline void save_detections(const std::vector<Detection>& dets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "id,x,y,class,snapshot_id,interval\n";
  for (const auto& d : dets)
    out << d.id << ',' << csv::fmt(d.x) << ',' << csv::fmt(d.y) << ',' << detection_class_name(d.cls) << ','
        << d.snapshot_id << ',' << d.interval << '\n';
}

}  // namespace dode
