#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "dode/network.hpp"
#include "dode/paths.hpp"
#include "dode/tensor.hpp"

namespace dode {

struct SyntheticNetwork {
  Network network;
  NodeCoordinates coordinates;
};

namespace detail {

inline Link make_link(int id, int from, int to, double length, double ffs_car, double ffs_truck, double cap_car,
                      double cap_truck, double jam_car, double jam_truck, double curb = 0.0, bool connector = false) {
  Link l;
  l.id = id;
  l.from = from;
  l.to = to;
  l.length_km = length;
  l.free_flow_speed_kmh = {ffs_car, ffs_truck};
  l.capacity_vph = {cap_car, cap_truck};
  l.jam_density_vpkm = {jam_car, jam_truck};
  l.allows_parking = curb > 0;
  l.curb_capacity = curb;
  l.is_connector = connector;
  return l;
}

inline Link make_connector(int id, int from, int to) {
  return make_link(id, from, to, 0.05, 50, 40, 20000, 12000, 1000, 500, 0.0, true);
}

}  // namespace detail

// 18-link toy network: 12 road segments (ids 1-9, 16-18) with the published link
// properties plus 6 OD connectors (ids 10-15). Three origins, three destinations,
// eight connected OD pairs.
inline SyntheticNetwork toy_network() {
  using detail::make_connector;
  using detail::make_link;
  // Segment nodes: A=1 B=2 C=3 D=4 E=5 F=6 G=7 H=8. Origins 11-13, destinations 21-23.
  std::vector<Link> links{
      make_link(1, 1, 2, 1.0, 50, 40, 6000, 3600, 540, 240),
      make_link(2, 1, 4, 0.5, 50, 40, 2000, 1200, 90, 40),
      make_link(3, 2, 3, 1.0, 50, 40, 6000, 3600, 540, 240, 30),
      make_link(4, 2, 5, 0.5, 50, 40, 2000, 1200, 180, 80, 20),
      make_link(5, 4, 5, 1.0, 50, 40, 6000, 3600, 540, 240),
      make_link(6, 3, 6, 0.5, 50, 40, 2000, 1200, 90, 40, 20),
      make_link(7, 5, 6, 1.0, 50, 40, 4000, 2400, 360, 160, 40),
      make_link(8, 4, 8, 0.5, 50, 40, 2000, 1200, 90, 40),
      make_link(9, 8, 6, 1.0, 50, 40, 6000, 3600, 540, 240, 40),
      make_connector(10, 11, 1),
      make_connector(11, 12, 4),
      make_connector(12, 13, 7),
      make_connector(13, 3, 21),
      make_connector(14, 6, 22),
      make_connector(15, 5, 23),
      make_link(16, 1, 7, 2.0, 30, 20, 2000, 1200, 360, 160),
      make_link(17, 7, 2, 0.5, 30, 20, 2000, 1200, 90, 40),
      make_link(18, 7, 3, 2.0, 30, 20, 2000, 1200, 360, 160, 30),
  };
  std::vector<OdPair> ods{{11, 21}, {11, 22}, {11, 23}, {12, 22}, {12, 23}, {13, 21}, {13, 22}, {13, 23}};
  NodeCoordinates xy{{1, {0, 500}},     {2, {1000, 500}},  {3, {2000, 500}},   {4, {0, 0}},
                     {5, {1000, 0}},    {6, {2000, 0}},    {7, {1000, 1000}},  {8, {1000, -500}},
                     {11, {-300, 700}}, {12, {-300, -200}}, {13, {700, 1300}}, {21, {2300, 700}},
                     {22, {2300, -200}}, {23, {1200, 200}}};
  return {Network(std::move(links), std::move(ods)), std::move(xy)};
}

// Bidirectional rows x cols grid of 0.5 km blocks. Every boundary node on the west and
// north edges hosts an origin, every boundary node on the east and south edges a
// destination; all origin-destination combinations are OD pairs. Link attributes are
// drawn from two road types with the seeded generator.
inline SyntheticNetwork grid_network(int rows, int cols, unsigned long long seed) {
  using detail::make_connector;
  using detail::make_link;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Link> links;
  NodeCoordinates xy;
  auto node = [&](int r, int c) { return 1 + r * cols + c; };
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) xy[node(r, c)] = {c * 500.0, -r * 500.0};
  int id = 1;
  auto add_road = [&](int a, int b) {
    bool arterial = u(rng) < 0.4;
    double curb = u(rng) < 0.5 ? 10.0 + std::floor(u(rng) * 30.0) : 0.0;
    if (arterial) links.push_back(make_link(id++, a, b, 0.5, 50, 40, 4000, 2400, 360, 160, curb));
    else links.push_back(make_link(id++, a, b, 0.5, 30, 20, 2000, 1200, 180, 80, curb));
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c + 1 < cols) add_road(node(r, c), node(r, c + 1)), add_road(node(r, c + 1), node(r, c));
      if (r + 1 < rows) add_road(node(r, c), node(r + 1, c)), add_road(node(r + 1, c), node(r, c));
    }
  }
  std::vector<int> origins, destinations;
  int zone = 10000;
  auto add_zone = [&](int at, bool is_origin) {
    int z = zone++;
    auto p = xy[at];
    xy[z] = {p.x + (is_origin ? -150.0 : 150.0), p.y + (is_origin ? 150.0 : -150.0)};
    if (is_origin) links.push_back(make_connector(id++, z, at)), origins.push_back(z);
    else links.push_back(make_connector(id++, at, z)), destinations.push_back(z);
  };
  for (int r = 0; r < rows; ++r) add_zone(node(r, 0), true);
  for (int c = 1; c < cols; ++c) add_zone(node(0, c), true);
  for (int r = 0; r < rows; ++r) add_zone(node(r, cols - 1), false);
  for (int c = 0; c + 1 < cols; ++c) add_zone(node(rows - 1, c), false);
  std::vector<OdPair> ods;
  for (int o : origins)
    for (int d : destinations) ods.push_back({o, d});
  return {Network(std::move(links), std::move(ods)), std::move(xy)};
}

struct DemandProfile {
  double car_min = 60.0;    // veh per interval at the peak, lower bound over OD pairs
  double car_max = 160.0;   // upper bound
  double truck_ratio_min = 0.06;
  double truck_ratio_max = 0.12;
  double peak_position = 0.45;  // fraction of the demand horizon
  double peak_width = 0.25;     // fraction of the demand horizon
  double base_level = 0.45;     // off-peak level relative to the peak
};

// Seeded ground-truth demand with a single peak per OD pair. Trucks are a small
// per-OD share of cars with their own jitter.
inline DemandTensor peaked_demand(int num_ods, int intervals, const DemandProfile& prof, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DemandTensor q(num_ods, intervals);
  for (int r = 0; r < num_ods; ++r) {
    double peak = prof.car_min + (prof.car_max - prof.car_min) * u(rng);
    double ratio = prof.truck_ratio_min + (prof.truck_ratio_max - prof.truck_ratio_min) * u(rng);
    double center = prof.peak_position * (intervals - 1) + (u(rng) - 0.5) * 0.2 * intervals;
    double width = std::max(0.5, prof.peak_width * intervals);
    for (int t = 0; t < intervals; ++t) {
      double z = (t - center) / width;
      double shape = prof.base_level + (1.0 - prof.base_level) * std::exp(-z * z);
      double jitter = 0.9 + 0.2 * u(rng);
      q[VehicleClass::car](r, t) = std::round(peak * shape * jitter * 10.0) / 10.0;
      q[VehicleClass::truck](r, t) = std::round(peak * ratio * shape * (0.8 + 0.4 * u(rng)) * 10.0) / 10.0;
    }
  }
  return q;
}

}  // namespace dode
