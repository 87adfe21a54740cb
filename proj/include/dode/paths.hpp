#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "dode/csv.hpp"
#include "dode/error.hpp"
#include "dode/network.hpp"

namespace dode {

struct Path {
  int od = 0;
  std::vector<int> links;  // link indices into Network::links()
  PerClass<double> free_flow_time{};

  bool operator==(const Path&) const = default;
};

// Candidate paths of one vehicle class, grouped by OD pair in OD order.
struct ClassPaths {
  std::vector<Path> paths;
  std::vector<int> od_begin;  // size num_od + 1; paths of OD r are [od_begin[r], od_begin[r+1])

  int num_paths() const { return static_cast<int>(paths.size()); }
  int num_paths(int od) const { return od_begin[od + 1] - od_begin[od]; }

  bool operator==(const ClassPaths&) const = default;
};

struct PathSet {
  PerClass<ClassPaths> by_class;
  std::vector<int> dropped_ods;  // unreachable OD pairs, excluded from estimation
  std::vector<std::string> warnings;

  const ClassPaths& of(VehicleClass c) const { return by_class[index_of(c)]; }
  int num_ods() const { return static_cast<int>(by_class[0].od_begin.size()) - 1; }
  bool is_dropped(int od) const { return std::find(dropped_ods.begin(), dropped_ods.end(), od) != dropped_ods.end(); }
};

inline double path_free_flow_time(const Network& net, const std::vector<int>& links, VehicleClass c) {
  double t = 0.0;
  for (int l : links) t += net.links()[l].free_flow_time(c);
  return t;
}

// Throws TopologyError unless `links` is a contiguous, link-simple walk from od.origin to od.destination.
inline void check_path(const Network& net, const OdPair& od, const std::vector<int>& links) {
  if (links.empty()) throw TopologyError("empty path");
  const auto& L = net.links();
  if (L[links.front()].from != od.origin) throw TopologyError("path does not leave the origin");
  if (L[links.back()].to != od.destination) throw TopologyError("path does not enter the destination");
  std::set<int> seen;
  for (std::size_t i = 0; i < links.size(); ++i) {
    if (!seen.insert(links[i]).second) throw TopologyError("path repeats link " + std::to_string(L[links[i]].id));
    if (i > 0 && L[links[i - 1]].to != L[links[i]].from) throw TopologyError("path is not contiguous");
  }
}

namespace detail {

struct PathKey {
  long long cost_us;  // cost quantized to microseconds so equal-cost ties are exact
  std::vector<int> ids;
  bool operator<(const PathKey& o) const { return std::tie(cost_us, ids) < std::tie(o.cost_us, o.ids); }
};

inline PathKey make_key(const Network& net, const std::vector<int>& links, VehicleClass c) {
  PathKey k;
  k.cost_us = std::llround(path_free_flow_time(net, links, c) * 1e6);
  for (int l : links) k.ids.push_back(net.links()[l].id);
  return k;
}

// Dijkstra on free-flow time with some links and nodes removed. Returns link indices, empty if unreachable.
inline std::vector<int> shortest_path(const Network& net, int source, int target, VehicleClass c,
                                      const std::set<int>& banned_links, const std::set<int>& banned_nodes) {
  std::map<int, double> dist;
  std::map<int, int> via;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[source] = 0.0;
  pq.push({0.0, source});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    if (u == target) break;
    for (int li : net.out_links(u)) {
      if (banned_links.count(li)) continue;
      const auto& l = net.links()[li];
      if (banned_nodes.count(l.to)) continue;
      double nd = d + l.free_flow_time(c);
      auto it = dist.find(l.to);
      if (it == dist.end() || nd < it->second) {
        dist[l.to] = nd;
        via[l.to] = li;
        pq.push({nd, l.to});
      }
    }
  }
  if (!dist.count(target)) return {};
  std::vector<int> out;
  for (int n = target; n != source;) {
    int li = via.at(n);
    out.push_back(li);
    n = net.links()[li].from;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Up to k loopless shortest paths (Yen) from `od.origin` to `od.destination` by class free-flow
// time, ascending by cost, ties broken by lexicographic link-id sequence.
inline std::vector<std::vector<int>> k_shortest_paths(const Network& net, const OdPair& od, int k_max, VehicleClass c) {
  if (k_max < 1) throw InvariantError("k_max must be >= 1");
  if (od.origin == od.destination) throw TopologyError("OD pair with origin == destination");
  std::vector<std::vector<int>> accepted;
  auto first = detail::shortest_path(net, od.origin, od.destination, c, {}, {});
  if (first.empty()) return accepted;
  accepted.push_back(first);
  std::set<std::pair<detail::PathKey, std::vector<int>>> candidates;
  std::set<std::vector<int>> known{first};
  const auto& L = net.links();
  while (static_cast<int>(accepted.size()) < k_max) {
    const auto& last = accepted.back();
    for (std::size_t i = 0; i < last.size(); ++i) {
      int spur_node = L[last[i]].from;
      std::vector<int> root(last.begin(), last.begin() + static_cast<long>(i));
      std::set<int> banned_links;
      for (const auto& p : accepted) {
        if (p.size() > i && std::equal(root.begin(), root.end(), p.begin())) banned_links.insert(p[i]);
      }
      std::set<int> banned_nodes;
      for (int li : root) banned_nodes.insert(L[li].from);
      auto spur = detail::shortest_path(net, spur_node, od.destination, c, banned_links, banned_nodes);
      if (spur.empty()) continue;
      std::vector<int> total = root;
      total.insert(total.end(), spur.begin(), spur.end());
      if (known.insert(total).second) candidates.insert({detail::make_key(net, total, c), total});
    }
    if (candidates.empty()) break;
    accepted.push_back(candidates.begin()->second);
    candidates.erase(candidates.begin());
  }
  std::stable_sort(accepted.begin(), accepted.end(), [&](const auto& a, const auto& b) {
    return detail::make_key(net, a, c) < detail::make_key(net, b, c);
  });
  return accepted;
}

// Enumerate per-class candidate paths for every OD pair of `net`.
inline ClassPaths enumerate_paths(const Network& net, int k_max, VehicleClass c, std::vector<int>* unreachable = nullptr) {
  ClassPaths out;
  out.od_begin.push_back(0);
  for (int r = 0; r < net.num_od_pairs(); ++r) {
    auto found = k_shortest_paths(net, net.od_pairs()[r], k_max, c);
    if (found.empty() && unreachable) unreachable->push_back(r);
    for (auto& links : found) {
      Path p;
      p.od = r;
      for (auto cls : kAllClasses) p.free_flow_time[index_of(cls)] = path_free_flow_time(net, links, cls);
      p.links = std::move(links);
      out.paths.push_back(std::move(p));
    }
    out.od_begin.push_back(out.num_paths());
  }
  return out;
}

// Path set for all classes. With `shared_topology`, every class uses the paths ranked by car time.
inline PathSet build_path_set(const Network& net, int k_max, bool shared_topology = true) {
  PathSet ps;
  std::vector<int> unreachable;
  ps.by_class[0] = enumerate_paths(net, k_max, VehicleClass::car, &unreachable);
  ps.by_class[1] = shared_topology ? ps.by_class[0] : enumerate_paths(net, k_max, VehicleClass::truck);
  ps.dropped_ods = unreachable;
  for (int r : unreachable) {
    const auto& od = net.od_pairs()[r];
    ps.warnings.push_back("OD pair " + std::to_string(r) + " (" + std::to_string(od.origin) + "->" +
                          std::to_string(od.destination) + ") is unreachable and was dropped");
  }
  return ps;
}

// Reads `od_index,class,link_id;link_id;...` rows and replaces the path lists they mention.
inline PathSet load_path_file(const Network& net, const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ParseError("cannot open " + file);
  PerClass<std::vector<std::vector<std::vector<int>>>> lists;
  for (auto& l : lists) l.resize(net.num_od_pairs());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cells = csv::split(t);
    if (cells.size() != 3) throw ParseError(file + ":" + std::to_string(lineno) + ": expected od_index,class,links");
    if (cells[0] == "od_index") continue;
    int od = static_cast<int>(csv::to_int(cells[0], "od_index"));
    if (od < 0 || od >= net.num_od_pairs()) throw ParseError(file + ":" + std::to_string(lineno) + ": od_index out of range");
    auto cls = parse_class(cells[1]);
    std::vector<int> links;
    for (const auto& id : csv::split(cells[2], ';')) links.push_back(net.link_index(static_cast<int>(csv::to_int(id, "link_id"))));
    check_path(net, net.od_pairs()[od], links);
    lists[index_of(cls)][od].push_back(std::move(links));
  }
  PathSet ps;
  for (auto cls : kAllClasses) {
    auto& cp = ps.by_class[index_of(cls)];
    cp.od_begin.push_back(0);
    for (int r = 0; r < net.num_od_pairs(); ++r) {
      for (auto& links : lists[index_of(cls)][r]) {
        Path p;
        p.od = r;
        for (auto c2 : kAllClasses) p.free_flow_time[index_of(c2)] = path_free_flow_time(net, links, c2);
        p.links = links;
        cp.paths.push_back(std::move(p));
      }
      cp.od_begin.push_back(cp.num_paths());
    }
  }
  for (int r = 0; r < net.num_od_pairs(); ++r) {
    if (ps.by_class[0].num_paths(r) == 0 && ps.by_class[1].num_paths(r) == 0) {
      ps.dropped_ods.push_back(r);
      ps.warnings.push_back("OD pair " + std::to_string(r) + " has no paths in " + file);
    }
  }
  return ps;
}

inline void save_path_file(const Network& net, const PathSet& ps, const std::string& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file);
  out << "od_index,class,links\n";
  for (auto cls : kAllClasses) {
    for (const auto& p : ps.of(cls).paths) {
      out << p.od << ',' << class_name(cls) << ',';
      for (std::size_t i = 0; i < p.links.size(); ++i) out << (i ? ";" : "") << net.links()[p.links[i]].id;
      out << '\n';
    }
  }
}

// Designated curb stop of a path: the last non-connector link that allows parking, or -1.
inline int parking_link_of(const Network& net, const Path& p) {
  for (auto it = p.links.rbegin(); it != p.links.rend(); ++it) {
    const auto& l = net.links()[*it];
    if (!l.is_connector && l.allows_parking) return *it;
  }
  return -1;
}

}  // namespace dode
