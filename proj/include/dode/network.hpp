#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dode/csv.hpp"
#include "dode/error.hpp"

namespace dode {

enum class VehicleClass : int { car = 0, truck = 1 };

inline constexpr int kNumClasses = 2;
inline constexpr std::array<VehicleClass, kNumClasses> kAllClasses{VehicleClass::car, VehicleClass::truck};

inline constexpr int index_of(VehicleClass c) { return static_cast<int>(c); }

inline const char* class_name(VehicleClass c) { return c == VehicleClass::car ? "car" : "truck"; }

inline VehicleClass parse_class(const std::string& s) {
  if (s == "car" || s == "0") return VehicleClass::car;
  if (s == "truck" || s == "1") return VehicleClass::truck;
  throw ParseError("unknown vehicle class '" + s + "'");
}

template <typename T>
using PerClass = std::array<T, kNumClasses>;

struct Link {
  int id = 0;
  int from = 0;
  int to = 0;
  double length_km = 0.0;
  PerClass<double> free_flow_speed_kmh{};
  PerClass<double> capacity_vph{};
  PerClass<double> jam_density_vpkm{};
  bool allows_parking = false;
  double curb_capacity = 0.0;
  bool is_connector = false;

  // Unrounded traversal time at free-flow speed, seconds.
  double free_flow_time(VehicleClass c) const {
    return length_km / free_flow_speed_kmh[index_of(c)] * 3600.0;
  }

  // Vehicles the link can hold: moving lanes at jam density plus the curb.
  double holding_capacity(VehicleClass c) const {
    return jam_density_vpkm[index_of(c)] * length_km + curb_capacity;
  }

  bool operator==(const Link&) const = default;
};

struct OdPair {
  int origin = 0;
  int destination = 0;
  bool operator==(const OdPair&) const = default;
};

// Directed road network with its OD structure. Immutable once built.
class Network {
 public:
  Network() = default;

  Network(std::vector<Link> links, std::vector<OdPair> od_pairs)
      : links_(std::move(links)), od_pairs_(std::move(od_pairs)) {
    std::set<int> nodes;
    for (std::size_t i = 0; i < links_.size(); ++i) {
      const auto& l = links_[i];
      nodes.insert(l.from);
      nodes.insert(l.to);
      index_.emplace(l.id, static_cast<int>(i));
      out_[l.from].push_back(static_cast<int>(i));
    }
    nodes_.assign(nodes.begin(), nodes.end());
    std::set<int> r, s;
    for (const auto& od : od_pairs_) {
      r.insert(od.origin);
      s.insert(od.destination);
    }
    origins_.assign(r.begin(), r.end());
    destinations_.assign(s.begin(), s.end());
    for (auto& [node, outs] : out_) {
      std::sort(outs.begin(), outs.end(), [&](int a, int b) { return links_[a].id < links_[b].id; });
    }
  }

  const std::vector<Link>& links() const { return links_; }
  const std::vector<int>& nodes() const { return nodes_; }
  const std::vector<OdPair>& od_pairs() const { return od_pairs_; }
  const std::vector<int>& origins() const { return origins_; }
  const std::vector<int>& destinations() const { return destinations_; }
  int num_links() const { return static_cast<int>(links_.size()); }
  int num_od_pairs() const { return static_cast<int>(od_pairs_.size()); }

  bool has_node(int node) const { return std::binary_search(nodes_.begin(), nodes_.end(), node); }

  std::optional<int> find_link(int link_id) const {
    auto it = index_.find(link_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int link_index(int link_id) const {
    auto idx = find_link(link_id);
    if (!idx) throw TopologyError("unknown link id " + std::to_string(link_id));
    return *idx;
  }

  const Link& link_by_id(int link_id) const { return links_[link_index(link_id)]; }

  // Indices of links leaving `node`, ordered by link id.
  const std::vector<int>& out_links(int node) const {
    static const std::vector<int> empty;
    auto it = out_.find(node);
    return it == out_.end() ? empty : it->second;
  }

  std::vector<int> segment_indices() const {
    std::vector<int> out;
    for (int i = 0; i < num_links(); ++i)
      if (!links_[i].is_connector) out.push_back(i);
    return out;
  }

  bool operator==(const Network& o) const { return links_ == o.links_ && od_pairs_ == o.od_pairs_; }

 private:
  std::vector<Link> links_;
  std::vector<OdPair> od_pairs_;
  std::vector<int> nodes_;
  std::vector<int> origins_;
  std::vector<int> destinations_;
  std::unordered_map<int, int> index_;
  std::map<int, std::vector<int>> out_;
};

struct Violation {
  std::string code;
  int link_id = -1;
  std::string message;
};

// Pure check of every Link/Network invariant. Violations are returned, never thrown.
inline std::vector<Violation> validate_network(const Network& net) {
  std::vector<Violation> out;
  auto add = [&](const char* code, int id, std::string msg) { out.push_back({code, id, std::move(msg)}); };
  std::map<int, int> seen;
  for (const auto& l : net.links()) {
    if (++seen[l.id] == 2) add("duplicate_link_id", l.id, "link id appears more than once");
    if (!(l.length_km > 0)) add("nonpositive_length", l.id, "length must be > 0");
    for (int c = 0; c < kNumClasses; ++c) {
      const char* cls = class_name(static_cast<VehicleClass>(c));
      if (!(l.free_flow_speed_kmh[c] > 0)) add("nonpositive_speed", l.id, std::string("free-flow speed must be > 0 for ") + cls);
      if (!(l.capacity_vph[c] > 0)) add("nonpositive_capacity", l.id, std::string("capacity must be > 0 for ") + cls);
      if (!(l.jam_density_vpkm[c] > 0)) add("nonpositive_jam_density", l.id, std::string("jam density must be > 0 for ") + cls);
    }
    if (l.curb_capacity < 0) add("negative_curb_capacity", l.id, "curb capacity must be >= 0");
    if (!l.allows_parking && l.curb_capacity != 0) add("curb_without_parking", l.id, "curb capacity set on a link that does not allow parking");
    if (l.from == l.to) add("self_loop", l.id, "link starts and ends at the same node");
  }
  for (std::size_t i = 0; i < net.od_pairs().size(); ++i) {
    const auto& od = net.od_pairs()[i];
    if (!net.has_node(od.origin)) add("unknown_origin", -1, "OD pair " + std::to_string(i) + " origin not in network");
    if (!net.has_node(od.destination)) add("unknown_destination", -1, "OD pair " + std::to_string(i) + " destination not in network");
    if (od.origin == od.destination) add("degenerate_od", -1, "OD pair " + std::to_string(i) + " has origin == destination");
  }
  return out;
}

inline const char* kNetworkHeader =
    "link_id,from,to,length_km,ffs_car,ffs_truck,cap_car,cap_truck,jam_car,jam_truck,allows_parking,curb_capacity,is_connector";

inline std::vector<Link> parse_links(const csv::Table& t, const std::string& source) {
  static const std::vector<std::string> cols = csv::split(kNetworkHeader);
  std::vector<int> at;
  for (const auto& c : cols) {
    int i = t.column(c);
    if (i < 0) throw ParseError(source + ": missing column '" + c + "'");
    at.push_back(i);
  }
  std::vector<Link> links;
  std::map<int, std::size_t> by_id;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = source + ":" + std::to_string(t.line_numbers[r]);
    try {
      Link l;
      l.id = static_cast<int>(csv::to_int(row[at[0]], "link_id"));
      l.from = static_cast<int>(csv::to_int(row[at[1]], "from"));
      l.to = static_cast<int>(csv::to_int(row[at[2]], "to"));
      l.length_km = csv::to_double(row[at[3]], "length_km");
      l.free_flow_speed_kmh = {csv::to_double(row[at[4]], "ffs_car"), csv::to_double(row[at[5]], "ffs_truck")};
      l.capacity_vph = {csv::to_double(row[at[6]], "cap_car"), csv::to_double(row[at[7]], "cap_truck")};
      l.jam_density_vpkm = {csv::to_double(row[at[8]], "jam_car"), csv::to_double(row[at[9]], "jam_truck")};
      l.allows_parking = csv::to_bool(row[at[10]], "allows_parking");
      l.curb_capacity = csv::to_double(row[at[11]], "curb_capacity");
      l.is_connector = csv::to_bool(row[at[12]], "is_connector");
      auto it = by_id.find(l.id);
      if (it != by_id.end()) {
        // Identical repeated rows collapse; conflicting ones are rejected.
        if (links[it->second] == l) continue;
        throw InvariantError("conflicting duplicate link id " + std::to_string(l.id));
      }
      by_id.emplace(l.id, links.size());
      links.push_back(l);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const InvariantError& e) {
      throw InvariantError(where + ": " + e.what());
    }
  }
  return links;
}

inline std::vector<OdPair> load_od_pairs(const std::string& path) {
  auto t = csv::read_file(path);
  int o = t.column("origin"), d = t.column("destination");
  if (o < 0 || d < 0) throw ParseError(path + ": expected header origin,destination");
  std::vector<OdPair> out;
  for (const auto& row : t.rows)
    out.push_back({static_cast<int>(csv::to_int(row[o], "origin")), static_cast<int>(csv::to_int(row[d], "destination"))});
  return out;
}

// Throws the first invariant violation, if any.
inline void require_valid(const Network& net) {
  auto report = validate_network(net);
  if (report.empty()) return;
  const auto& v = report.front();
  std::string msg = v.code + (v.link_id >= 0 ? " (link " + std::to_string(v.link_id) + ")" : "") + ": " + v.message;
  if (v.code == "unknown_origin" || v.code == "unknown_destination") throw TopologyError(msg);
  throw InvariantError(msg);
}

inline Network load_network(const std::string& network_file, std::optional<std::string> od_file = std::nullopt) {
  auto table = csv::read_file(network_file);
  auto links = parse_links(table, network_file);
  std::vector<OdPair> ods;
  if (od_file) ods = load_od_pairs(*od_file);
  Network net(std::move(links), std::move(ods));
  require_valid(net);
  return net;
}

inline void save_network(const Network& net, const std::string& network_file,
                         std::optional<std::string> od_file = std::nullopt) {
  std::ofstream out(network_file);
  if (!out) throw Error("cannot write " + network_file);
  out << kNetworkHeader << '\n';
  for (const auto& l : net.links()) {
    out << l.id << ',' << l.from << ',' << l.to << ',' << csv::fmt(l.length_km) << ','
        << csv::fmt(l.free_flow_speed_kmh[0]) << ',' << csv::fmt(l.free_flow_speed_kmh[1]) << ','
        << csv::fmt(l.capacity_vph[0]) << ',' << csv::fmt(l.capacity_vph[1]) << ','
        << csv::fmt(l.jam_density_vpkm[0]) << ',' << csv::fmt(l.jam_density_vpkm[1]) << ','
        << (l.allows_parking ? 1 : 0) << ',' << csv::fmt(l.curb_capacity) << ',' << (l.is_connector ? 1 : 0) << '\n';
  }
  if (od_file) {
    std::ofstream od(*od_file);
    if (!od) throw Error("cannot write " + *od_file);
    od << "origin,destination\n";
    for (const auto& p : net.od_pairs()) od << p.origin << ',' << p.destination << '\n';
  }
}

// Planar node positions in meters, used for map matching.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

using NodeCoordinates = std::map<int, Point>;

inline NodeCoordinates load_node_coordinates(const std::string& path) {
  auto t = csv::read_file(path);
  int id = t.column("node_id"), x = t.column("x"), y = t.column("y");
  if (id < 0 || x < 0 || y < 0) throw ParseError(path + ": expected header node_id,x,y");
  NodeCoordinates out;
  for (const auto& row : t.rows)
    out[static_cast<int>(csv::to_int(row[id], "node_id"))] = {csv::to_double(row[x], "x"), csv::to_double(row[y], "y")};
  return out;
}

inline void save_node_coordinates(const NodeCoordinates& coords, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "node_id,x,y\n";
  for (const auto& [id, p] : coords) out << id << ',' << csv::fmt(p.x) << ',' << csv::fmt(p.y) << '\n';
}

}  // namespace dode
