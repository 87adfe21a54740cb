#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "support.hpp"

using namespace dode;
using namespace dode::testing;

namespace {

// Single link 1 -> 2 with one OD pair.
struct OneLink {
  Network net;
  PathSet paths;
  DnlConfig cfg;

  explicit OneLink(Link l, int Td = 1, int Th = 4) {
    l.from = 1;
    l.to = 2;
    net = Network({l}, {{1, 2}});
    paths = build_path_set(net, 1);
    cfg.demand_intervals = Td;
    cfg.horizon_intervals = Th;
  }

  PathFlowTensor flow(double car, double truck = 0.0) const {
    PathFlowTensor f(PerClass<int>{1, 1}, cfg.demand_intervals);
    f[VehicleClass::car](0, 0) = car;
    f[VehicleClass::truck](0, 0) = truck;
    return f;
  }
};

// Direct 1 km link plus a 2 km detour 1 -> 3 -> 2.
Network two_route_network() {
  return Network({plain_link(1, 1, 2), plain_link(2, 1, 3), plain_link(3, 3, 2)}, {{1, 2}});
}

CumulativeCurveSet blank_curves(int links, int horizon) {
  CumulativeCurveSet cs;
  cs.horizon_intervals = horizon;
  for (int c = 0; c < kNumClasses; ++c) {
    cs.curves[c].resize(links);
    cs.free_flow_steps[c].assign(links, 15);
  }
  return cs;
}

void push_n(CumulativeCurveSet& cs, CurveKind k, int step, int n) {
  for (int i = 0; i < n; ++i) cs.curve(0, VehicleClass::car, k).push({step, 1.0, 0, 0, i});
}

}  // namespace

TEST(RouteChoice, EqualCostsSplitEvenly) {
  Network net({plain_link(2, 1, 3), plain_link(3, 3, 2), plain_link(4, 1, 4), plain_link(5, 4, 2)}, {{1, 2}});
  auto ps = build_path_set(net, 3);
  auto p = route_choice(ps, free_flow_path_costs(ps, 2), 1.0 / 120);
  ASSERT_EQ(ps.of(VehicleClass::car).num_paths(), 2);
  EXPECT_NEAR(p[VehicleClass::car](0, 0), 0.5, 1e-12);
  EXPECT_NEAR(p[VehicleClass::car](1, 1), 0.5, 1e-12);
}

TEST(RouteChoice, SinglePathGetsEverything) {
  OneLink one(plain_link(1, 1, 2));
  auto p = route_choice(one.paths, free_flow_path_costs(one.paths, 3), 1.0 / 120);
  EXPECT_DOUBLE_EQ(p[VehicleClass::car](0, 2), 1.0);
  EXPECT_DOUBLE_EQ(p[VehicleClass::truck](0, 0), 1.0);
}

TEST(RouteChoice, LogitOfSeventyTwoAndOneFortyFour) {
  auto net = two_route_network();
  auto ps = build_path_set(net, 2);
  auto p = route_choice(ps, free_flow_path_costs(ps, 1), 1.0 / 72);
  double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
  EXPECT_NEAR(p[VehicleClass::car](0, 0), e1 / (e1 + e2), 1e-12);
  EXPECT_NEAR(p[VehicleClass::car](1, 0), e2 / (e1 + e2), 1e-12);
  EXPECT_NEAR(p[VehicleClass::car](0, 0), 0.7311, 1e-4);
}

TEST(RouteChoice, RejectsNonPositiveCosts) {
  auto ps = build_path_set(two_route_network(), 2);
  auto costs = free_flow_path_costs(ps, 1);
  costs[VehicleClass::car](0, 0) = 0.0;
  EXPECT_THROW(route_choice(ps, costs, 1.0), InvariantError);
}

TEST(AssignPathFlows, SeventyThirty) {
  auto ps = build_path_set(two_route_network(), 2);
  RouteProportions p(PerClass<int>{2, 2}, 1);
  p[VehicleClass::car] << 0.7, 0.3;
  p[VehicleClass::truck] << 0.5, 0.5;
  DemandTensor q(1, 1);
  q[VehicleClass::car](0, 0) = 100;
  auto f = assign_path_flows(ps, q, p);
  EXPECT_NEAR(f[VehicleClass::car](0, 0), 70.0, 1e-12);
  EXPECT_NEAR(f[VehicleClass::car](1, 0), 30.0, 1e-12);
  EXPECT_EQ(f[VehicleClass::truck].cwiseAbs().sum(), 0.0);
}

TEST(AssignPathFlows, PathFlowsSumToDemand) {
  auto toy = toy_network();
  auto ps = build_path_set(toy.network, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 300);
  for (int rep = 0; rep < 10; ++rep) {
    DemandTensor q(toy.network.num_od_pairs(), 4);
    for (auto& m : q.data)
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    ClassTensor costs = free_flow_path_costs(ps, 4);
    for (auto& m : costs.data) m.array() += 50.0 * Eigen::ArrayXXd::Random(m.rows(), m.cols()).abs();
    auto f = assign_path_flows(ps, q, route_choice(ps, costs, 1.0 / 120));
    auto back = demand_of(ps, f);
    for (auto c : kAllClasses)
      for (Eigen::Index i = 0; i < q[c].size(); ++i)
        EXPECT_LE(std::abs(back[c].data()[i] - q[c].data()[i]), 1e-12 * std::max(1.0, q[c].data()[i]));
  }
}

TEST(AssignPathFlows, RejectsNegativeDemand) {
  auto ps = build_path_set(two_route_network(), 2);
  DemandTensor q(1, 1);
  q[VehicleClass::car](0, 0) = -1;
  auto p = route_choice(ps, free_flow_path_costs(ps, 1), 1.0);
  EXPECT_THROW(assign_path_flows(ps, q, p), InvariantError);
}

TEST(Dnl, ZeroFlowLeavesEverythingEmpty) {
  OneLink one(plain_link(1, 1, 2));
  auto res = run_dnl(one.net, one.paths, one.flow(0.0), one.cfg, 1);
  EXPECT_TRUE(res.cleared);
  EXPECT_TRUE(res.packets.empty());
  for (auto c : kAllClasses) {
    for (auto k : kAllCurves) EXPECT_TRUE(res.curves.curve(0, c, k).events().empty());
    EXPECT_EQ(res.states.inflow[c].cwiseAbs().sum(), 0.0);
    EXPECT_EQ(res.states.remaining[c].cwiseAbs().sum(), 0.0);
  }
  EXPECT_DOUBLE_EQ(res.states.travel_time[VehicleClass::car](0, 2), 75.0);
}

TEST(Dnl, SinglePacketTakesSeventyFiveSeconds) {
  OneLink one(plain_link(1, 1, 2));
  auto res = run_dnl(one.net, one.paths, one.flow(1.0), one.cfg, 1);
  ASSERT_EQ(res.packets.size(), 1u);
  EXPECT_EQ(res.packets[0].arrive_step - res.packets[0].depart_step, 15);
  EXPECT_DOUBLE_EQ(res.states.travel_time[VehicleClass::car](0, 0), 75.0);
  EXPECT_DOUBLE_EQ(res.states.inflow[VehicleClass::car](0, 0), 1.0);
  EXPECT_DOUBLE_EQ(res.states.remaining[VehicleClass::car](0, 0), 0.0);
}

TEST(Dnl, FractionalRemainderPacket) {
  OneLink one(plain_link(1, 1, 2));
  auto res = run_dnl(one.net, one.paths, one.flow(2.5), one.cfg, 1);
  std::vector<double> sizes;
  for (const auto& p : res.packets) sizes.push_back(p.size);
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<double>{0.5, 1.0, 1.0}));
  EXPECT_DOUBLE_EQ(res.states.inflow[VehicleClass::car](0, 0), 2.5);
}

TEST(Dnl, OversaturatedLinkQueues) {
  // 1000 veh per 15 min against 2000 veh/h; the first arrival of the second interval meets a queue.
  OneLink one(plain_link(2, 1, 2, 0.5, 50, 2000), 2, 8);
  auto f = one.flow(1000.0);
  f[VehicleClass::car](0, 1) = 1000.0;
  auto res = run_dnl(one.net, one.paths, f, one.cfg, 1);
  EXPECT_TRUE(res.cleared);
  double ff = res.curves.free_flow_time(0, VehicleClass::car);
  EXPECT_GT(res.states.travel_time[VehicleClass::car].row(0).maxCoeff(), ff);
  EXPECT_GT(res.states.remaining[VehicleClass::car](0, 0), 0.0);
}

TEST(Dnl, TruckUsesTwoUnitsOfCapacity) {
  // 36 veh/h is one PCE per 100 s (20 steps).
  OneLink one(plain_link(1, 1, 2, 0.05, 50, 36.0), 1, 4);
  auto cars = run_dnl(one.net, one.paths, one.flow(4.0), one.cfg, 1);
  auto trucks = run_dnl(one.net, one.paths, one.flow(0.0, 4.0), one.cfg, 1);
  auto last = [](const DnlResult& r) {
    int s = 0;
    for (const auto& p : r.packets) s = std::max(s, p.arrive_step);
    return s;
  };
  EXPECT_GT(last(trucks), last(cars));
}

TEST(ExtractLinkFlow, CountsBothArrivalCurves) {
  auto cs = blank_curves(1, 3);
  push_n(cs, CurveKind::arrival_moving, 10, 10);
  push_n(cs, CurveKind::arrival_parking, 20, 2);
  push_n(cs, CurveKind::arrival_moving, 180, 4);  // next interval
  EXPECT_DOUBLE_EQ(extract_link_flow(cs, 0, VehicleClass::car, 0), 12.0);
  EXPECT_DOUBLE_EQ(extract_link_flow(cs, 0, VehicleClass::car, 1), 4.0);
  EXPECT_DOUBLE_EQ(extract_link_flow(blank_curves(1, 3), 0, VehicleClass::car, 0), 0.0);
  EXPECT_THROW(extract_link_flow(cs, 0, VehicleClass::car, 3), DimensionError);
  EXPECT_THROW(extract_link_flow(cs, 2, VehicleClass::car, 0), DimensionError);
}

TEST(ExtractTravelTime, FallsBackToFreeFlow) {
  auto cs = blank_curves(1, 3);
  EXPECT_DOUBLE_EQ(extract_travel_time(cs, 0, VehicleClass::car, 1), 75.0);
  push_n(cs, CurveKind::arrival_moving, 0, 1);
  push_n(cs, CurveKind::departure_moving, 40, 1);
  EXPECT_DOUBLE_EQ(extract_travel_time(cs, 0, VehicleClass::car, 0), 200.0);
}

TEST(ExtractDensity, ThroughPlusParked) {
  auto cs = blank_curves(1, 3);
  push_n(cs, CurveKind::arrival_moving, 5, 3);
  push_n(cs, CurveKind::arrival_parking, 6, 2);
  EXPECT_DOUBLE_EQ(remaining_at_end(cs, 0, VehicleClass::car, 0), 5.0);
  EXPECT_DOUBLE_EQ(remaining_at_end(blank_curves(1, 3), 0, VehicleClass::car, 0), 0.0);
}

TEST(ExtractDensity, SmoothedWindowMean) {
  auto cs = blank_curves(1, 3);
  push_n(cs, CurveKind::arrival_moving, 0, 4);
  push_n(cs, CurveKind::arrival_moving, 200, 2);
  push_n(cs, CurveKind::arrival_moving, 400, 2);
  EXPECT_DOUBLE_EQ(remaining_at_end(cs, 0, VehicleClass::car, 0), 4.0);
  EXPECT_DOUBLE_EQ(remaining_at_end(cs, 0, VehicleClass::car, 2), 8.0);
  EXPECT_DOUBLE_EQ(extract_density(cs, 0, VehicleClass::car, 1, 1), 6.0);
  // clipped window at the edge
  EXPECT_DOUBLE_EQ(extract_density(cs, 0, VehicleClass::car, 0, 1), 5.0);
}

TEST(DnlOracle, InflowMatchesEventLog) {
  for (unsigned long long seed : {1ull, 2ull, 3ull}) {
    auto r = toy_run(seed);
    const int spi = r.cfg.steps_per_interval();
    ClassTensor x(r.toy.network.num_links(), r.cfg.horizon_intervals);
    for (const auto& v : r.res.visits) {
      const auto& p = r.res.packets[v.packet];
      x[p.cls](v.link, v.enter_step / spi) += p.size;
    }
    for (auto c : kAllClasses)
      for (Eigen::Index i = 0; i < x[c].size(); ++i)
        EXPECT_NEAR(r.res.states.inflow[c].data()[i], x[c].data()[i], 1e-9);
  }
}

TEST(DnlOracle, TravelTimeMatchesPacketTrace) {
  auto r = toy_run(7, 600.0);
  const auto& cs = r.res.curves;
  const int spi = cs.steps_per_interval;
  // first through visit per (class, link, interval)
  std::map<std::tuple<int, int, int>, const LinkVisit*> first;
  for (const auto& v : r.res.visits) {
    if (v.parked) continue;
    auto key = std::make_tuple(index_of(r.res.packets[v.packet].cls), v.link, v.enter_step / spi);
    first.emplace(key, &v);
  }
  int congested = 0;
  for (auto c : kAllClasses)
    for (int a = 0; a < cs.num_links(); ++a)
      for (int t = 0; t < cs.horizon_intervals; ++t) {
        double ff = cs.free_flow_time(a, c);
        double expect = ff;
        auto it = first.find({index_of(c), a, t});
        if (it != first.end()) {
          int exit = it->second->exit_step < 0 ? r.cfg.horizon_steps() : it->second->exit_step;
          expect = std::max(ff, (exit - it->second->enter_step) * cs.sim_step);
        }
        if (expect > ff) ++congested;
        EXPECT_DOUBLE_EQ(r.res.states.travel_time[c](a, t), expect) << a << ' ' << t;
      }
  EXPECT_GT(congested, 0);
}

TEST(DnlOracle, RemainingEqualsVehiclesOnLink) {
  auto r = toy_run(4, 500.0);
  const int spi = r.cfg.steps_per_interval();
  ClassTensor k(r.toy.network.num_links(), r.cfg.horizon_intervals);
  for (const auto& v : r.res.visits) {
    const auto& p = r.res.packets[v.packet];
    for (int t = 0; t < r.cfg.horizon_intervals; ++t) {
      int end = (t + 1) * spi;
      if (v.enter_step < end && (v.exit_step < 0 || v.exit_step >= end)) k[p.cls](v.link, t) += p.size;
    }
  }
  for (auto c : kAllClasses)
    for (Eigen::Index i = 0; i < k[c].size(); ++i) EXPECT_NEAR(r.res.states.remaining[c].data()[i], k[c].data()[i], 1e-9);
}

class DnlInvariants : public ::testing::TestWithParam<unsigned long long> {};

TEST_P(DnlInvariants, Hold) {
  auto seed = GetParam();
  auto r = toy_run(seed, 150.0 + 60.0 * static_cast<double>(seed % 7), 4, 12);
  const auto& cs = r.res.curves;
  ASSERT_TRUE(r.res.cleared);
  EXPECT_NEAR(r.res.vehicles_departed, r.res.vehicles_arrived, 1e-6);
  EXPECT_NEAR(r.res.vehicles_departed, r.f.data[0].sum() + r.f.data[1].sum(), 1e-6);
  for (auto c : kAllClasses)
    for (int a = 0; a < cs.num_links(); ++a) {
      for (auto k : kAllCurves) {
        const auto& ev = cs.curve(a, c, k).events();
        for (std::size_t i = 0; i < ev.size(); ++i) {
          EXPECT_GT(ev[i].size, 0.0);
          if (i) {
            EXPECT_LE(ev[i - 1].step, ev[i].step);
          }
        }
      }
      for (int s = 0; s <= r.cfg.horizon_steps(); s += 5) {
        double A = cs.curve(a, c, CurveKind::arrival_moving).value_before(s) + cs.curve(a, c, CurveKind::arrival_parking).value_before(s);
        double D = cs.curve(a, c, CurveKind::departure_moving).value_before(s) +
                   cs.curve(a, c, CurveKind::departure_parking).value_before(s);
        EXPECT_LE(D, A + 1e-9);
      }
      // FIFO among through vehicles of one class
      const auto& am = cs.curve(a, c, CurveKind::arrival_moving).events();
      const auto& dm = cs.curve(a, c, CurveKind::departure_moving).events();
      ASSERT_EQ(am.size(), dm.size());
      for (std::size_t i = 0; i < dm.size(); ++i) EXPECT_EQ(am[i].packet, dm[i].packet);
      for (int t = 0; t < cs.horizon_intervals; ++t) {
        EXPECT_GE(r.res.states.travel_time[c](a, t), cs.free_flow_time(a, c));
        EXPECT_GE(r.res.states.remaining[c](a, t), -1e-9);
      }
      EXPECT_NEAR(r.res.states.remaining[c](a, cs.horizon_intervals - 1), 0.0, 1e-9);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, DnlInvariants, ::testing::Range(1ull, 21ull));

TEST(Dnl, SameSeedSameCurves) {
  auto a = toy_run(11), b = toy_run(11);
  for (auto c : kAllClasses) {
    EXPECT_EQ(a.res.states.inflow[c], b.res.states.inflow[c]);
    EXPECT_EQ(a.res.states.travel_time[c], b.res.states.travel_time[c]);
    EXPECT_EQ(a.res.states.remaining[c], b.res.states.remaining[c]);
  }
  std::ostringstream da, db;
  dump_curves(a.toy.network, a.res.curves, da);
  dump_curves(b.toy.network, b.res.curves, db);
  EXPECT_EQ(da.str(), db.str());
}

TEST(Dnl, CurveDumpIsJsonLines) {
  OneLink one(plain_link(9, 1, 2));
  auto res = run_dnl(one.net, one.paths, one.flow(1.0), one.cfg, 1);
  std::ostringstream out;
  dump_curves(one.net, res.curves, out);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("link"), 9);
    EXPECT_EQ(j.at("class"), "car");
    EXPECT_DOUBLE_EQ(j.at("value").get<double>(), 1.0);
    EXPECT_EQ(j.at("tag"), nlohmann::json::array({0, 0}));
    ++n;
  }
  EXPECT_EQ(n, 2);  // Am and Dm
}

TEST(Parking, VehiclesDwellAtTheCurb) {
  auto l = plain_link(1, 1, 2);
  l.allows_parking = true;
  l.curb_capacity = 10;
  OneLink one(l, 1, 6);
  one.cfg.parking_fraction = 1.0;
  auto res = run_dnl(one.net, one.paths, one.flow(3.0), one.cfg, 1);
  ASSERT_TRUE(res.cleared);
  EXPECT_EQ(res.curves.curve(0, VehicleClass::car, CurveKind::arrival_moving).total(), 0.0);
  EXPECT_EQ(res.curves.curve(0, VehicleClass::car, CurveKind::arrival_parking).total(), 3.0);
  for (const auto& v : res.visits) {
    EXPECT_TRUE(v.parked);
    EXPECT_EQ(v.exit_step - v.enter_step, 360);
  }
  // parked vehicles count towards the link's vehicles
  EXPECT_DOUBLE_EQ(res.states.remaining[VehicleClass::car](0, 0), 3.0);
  EXPECT_DOUBLE_EQ(res.states.remaining[VehicleClass::car](0, 2), 0.0);
}

TEST(Parking, FullCurbSendsVehiclesThrough) {
  auto l = plain_link(1, 1, 2);
  l.allows_parking = true;
  l.curb_capacity = 2;
  OneLink one(l, 1, 6);
  one.cfg.parking_fraction = 1.0;
  auto res = run_dnl(one.net, one.paths, one.flow(5.0), one.cfg, 1);
  EXPECT_EQ(res.curves.curve(0, VehicleClass::car, CurveKind::arrival_parking).total(), 2.0);
  EXPECT_EQ(res.curves.curve(0, VehicleClass::car, CurveKind::arrival_moving).total(), 3.0);
  EXPECT_TRUE(res.cleared);
}

TEST(Parking, ToyShareMatchesFraction) {
  auto r = toy_run(3);
  double want = 0.0, parked = 0.0;
  for (const auto& p : r.res.packets) want += p.wants_parking ? p.size : 0.0;
  for (const auto& v : r.res.visits) parked += v.parked ? r.res.packets[v.packet].size : 0.0;
  double total = r.f.data[0].sum() + r.f.data[1].sum();
  EXPECT_GT(want, 0.1 * total);
  EXPECT_LE(parked, want + 1e-9);
}

TEST(EnRoute, ReassignmentConservesDemand) {
  auto r = toy_run(2, 500.0);
  r.cfg.enroute_fraction = 1.0;
  auto res = run_dnl(r.toy.network, r.paths, r.f, r.cfg, 2);
  auto before = demand_of(r.paths, r.f), after = demand_of(r.paths, res.realized_flow);
  for (auto c : kAllClasses) {
    EXPECT_LT((before[c] - after[c]).cwiseAbs().maxCoeff(), 1e-9);
    const auto& cp = r.paths.of(c);
    for (int od = 0; od < r.paths.num_ods(); ++od)
      for (int t = 0; t < r.cfg.demand_intervals; ++t) {
        int used = 0;
        for (int k = cp.od_begin[od]; k < cp.od_begin[od + 1]; ++k) used += res.realized_flow[c](k, t) > 0;
        EXPECT_LE(used, 1);
      }
  }
}

TEST(EnRoute, ZeroFractionKeepsPretripFlows) {
  auto r = toy_run(2);
  for (auto c : kAllClasses) EXPECT_EQ(r.res.realized_flow[c], r.f[c]);
}

TEST(Dnl, ShortHorizonWarns) {
  OneLink one(plain_link(2, 1, 2, 0.5, 50, 2000), 1, 1);
  auto res = run_dnl(one.net, one.paths, one.flow(1000.0), one.cfg, 1);
  EXPECT_FALSE(res.cleared);
  ASSERT_EQ(res.warnings.size(), 1u);
  EXPECT_GT(res.states.remaining[VehicleClass::car](0, 0), 0.0);
}

TEST(DnlConfig, Validation) {
  OneLink one(plain_link(1, 1, 2));
  auto bad = one.cfg;
  bad.sim_step = 7.0;
  EXPECT_THROW(run_dnl(one.net, one.paths, one.flow(1), bad, 1), InvariantError);
  bad = one.cfg;
  bad.horizon_intervals = 0;
  EXPECT_THROW(bad.validate(), InvariantError);
  bad = one.cfg;
  bad.parking_fraction = 1.5;
  EXPECT_THROW(bad.validate(), InvariantError);
  EXPECT_THROW(run_dnl(one.net, one.paths, one.flow(-1), one.cfg, 1), InvariantError);
  EXPECT_THROW(run_dnl(one.net, one.paths, PathFlowTensor(PerClass<int>{2, 1}, 1), one.cfg, 1), DimensionError);
}

TEST(DnlConfig, JsonRoundTripKeepsDefaults) {
  DnlConfig c;
  c.demand_intervals = 3;
  c.truck_pce = 2.5;
  nlohmann::json j = c;
  DnlConfig back;
  from_json(j, back);
  EXPECT_EQ(back.demand_intervals, 3);
  EXPECT_DOUBLE_EQ(back.truck_pce, 2.5);
  DnlConfig partial;
  from_json(nlohmann::json{{"sim_step", 10.0}}, partial);
  EXPECT_EQ(partial.horizon_intervals, DnlConfig{}.horizon_intervals);
  EXPECT_EQ(partial.steps_per_interval(), 90);
}
