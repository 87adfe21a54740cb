#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dode/dode.hpp"

namespace dode::testing {

inline std::string data_path(const std::string& rel) { return std::string(DODE_DATA_DIR) + "/" + rel; }

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dode_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Link plain_link(int id, int from, int to, double length = 1.0, double ffs = 50.0, double cap = 6000.0) {
  Link l;
  l.id = id;
  l.from = from;
  l.to = to;
  l.length_km = length;
  l.free_flow_speed_kmh = {ffs, ffs * 0.8};
  l.capacity_vph = {cap, cap * 0.6};
  l.jam_density_vpkm = {540, 240};
  return l;
}

struct ToyRun {
  SyntheticNetwork toy = toy_network();
  PathSet paths;
  DnlConfig cfg;
  DemandTensor q;
  RouteProportions p;
  PathFlowTensor f;
  DnlResult res;
};

inline ToyRun toy_run(unsigned long long seed, double car_max = 280.0, int demand_intervals = 4, int horizon = 8) {
  ToyRun r;
  r.paths = build_path_set(r.toy.network, 3);
  r.cfg.demand_intervals = demand_intervals;
  r.cfg.horizon_intervals = horizon;
  DemandProfile prof;
  prof.car_min = car_max * 0.35;
  prof.car_max = car_max;
  r.q = peaked_demand(r.toy.network.num_od_pairs(), demand_intervals, prof, seed);
  r.p = route_choice(r.paths, free_flow_path_costs(r.paths, demand_intervals), r.cfg.logit_scale);
  r.f = assign_path_flows(r.paths, r.q, r.p);
  r.res = run_dnl(r.toy.network, r.paths, r.f, r.cfg, seed);
  return r;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace dode::testing
