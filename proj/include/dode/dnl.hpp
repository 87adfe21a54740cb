#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dode/error.hpp"
#include "dode/network.hpp"
#include "dode/paths.hpp"
#include "dode/tensor.hpp"

namespace dode {

struct DnlConfig {
  double sim_step = 5.0;           // s
  double interval_length = 900.0;  // s
  int demand_intervals = 8;        // departure intervals carrying demand
  int horizon_intervals = 12;      // simulated intervals (>= demand_intervals, leaves room to clear)
  double logit_scale = 1.0 / 120.0;  // 1/s
  double parking_fraction = 0.2;
  double dwell_time = 1800.0;  // s
  double enroute_fraction = 0.0;
  int density_smoothing_delta = 0;
  double packet_size = 1.0;  // veh
  double truck_pce = 2.0;

  int steps_per_interval() const { return static_cast<int>(std::lround(interval_length / sim_step)); }
  int horizon_steps() const { return steps_per_interval() * horizon_intervals; }

  void validate() const {
    if (!(sim_step > 0) || !(interval_length > 0)) throw InvariantError("DnlConfig: sim_step and interval_length must be > 0");
    double ratio = interval_length / sim_step;
    if (std::abs(ratio - std::round(ratio)) > 1e-9) throw InvariantError("DnlConfig: sim_step must divide interval_length");
    if (demand_intervals < 1 || horizon_intervals < demand_intervals)
      throw InvariantError("DnlConfig: need 1 <= demand_intervals <= horizon_intervals");
    for (double frac : {parking_fraction, enroute_fraction})
      if (frac < 0 || frac > 1) throw InvariantError("DnlConfig: fractions must lie in [0,1]");
    if (density_smoothing_delta < 0) throw InvariantError("DnlConfig: density smoothing delta must be >= 0");
    if (!(packet_size > 0)) throw InvariantError("DnlConfig: packet_size must be > 0");
    if (!(truck_pce > 0)) throw InvariantError("DnlConfig: truck_pce must be > 0");
    if (dwell_time < 0) throw InvariantError("DnlConfig: dwell_time must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const DnlConfig& c) {
  j = {{"sim_step", c.sim_step},
       {"interval_length", c.interval_length},
       {"demand_intervals", c.demand_intervals},
       {"horizon_intervals", c.horizon_intervals},
       {"logit_scale", c.logit_scale},
       {"parking_fraction", c.parking_fraction},
       {"dwell_time", c.dwell_time},
       {"enroute_fraction", c.enroute_fraction},
       {"density_smoothing_delta", c.density_smoothing_delta},
       {"packet_size", c.packet_size},
       {"truck_pce", c.truck_pce}};
}

inline void from_json(const nlohmann::json& j, DnlConfig& c) {
  c.sim_step = j.value("sim_step", c.sim_step);
  c.interval_length = j.value("interval_length", c.interval_length);
  c.demand_intervals = j.value("demand_intervals", c.demand_intervals);
  c.horizon_intervals = j.value("horizon_intervals", c.horizon_intervals);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  c.parking_fraction = j.value("parking_fraction", c.parking_fraction);
  c.dwell_time = j.value("dwell_time", c.dwell_time);
  c.enroute_fraction = j.value("enroute_fraction", c.enroute_fraction);
  c.density_smoothing_delta = j.value("density_smoothing_delta", c.density_smoothing_delta);
  c.packet_size = j.value("packet_size", c.packet_size);
  c.truck_pce = j.value("truck_pce", c.truck_pce);
}

enum class CurveKind : int { arrival_moving = 0, arrival_parking = 1, departure_moving = 2, departure_parking = 3 };

inline constexpr std::array<CurveKind, 4> kAllCurves{CurveKind::arrival_moving, CurveKind::arrival_parking,
                                                     CurveKind::departure_moving, CurveKind::departure_parking};

inline const char* curve_name(CurveKind k) {
  switch (k) {
    case CurveKind::arrival_moving: return "Am";
    case CurveKind::arrival_parking: return "Ap";
    case CurveKind::departure_moving: return "Dm";
    case CurveKind::departure_parking: return "Dp";
  }
  return "?";
}

// One increment of a cumulative curve, tagged with the path flow it belongs to.
struct CurveEvent {
  int step = 0;
  double size = 0.0;
  int path = 0;
  int depart_interval = 0;
  int packet = 0;
};

// Right-open step function: value_before(s) counts increments strictly before step s.
class Curve {
 public:
  void push(const CurveEvent& e) {
    cumulative_.push_back((cumulative_.empty() ? 0.0 : cumulative_.back()) + e.size);
    events_.push_back(e);
  }

  const std::vector<CurveEvent>& events() const { return events_; }
  // Value just after event i.
  double cumulative(std::size_t i) const { return cumulative_[i]; }
  double total() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

  // Index of the first event at or after `step`.
  std::size_t first_at_or_after(int step) const {
    auto it = std::lower_bound(events_.begin(), events_.end(), step,
                               [](const CurveEvent& e, int s) { return e.step < s; });
    return static_cast<std::size_t>(it - events_.begin());
  }

  double value_before(int step) const {
    auto i = first_at_or_after(step);
    return i == 0 ? 0.0 : cumulative_[i - 1];
  }

 private:
  std::vector<CurveEvent> events_;
  std::vector<double> cumulative_;
};

// Four tagged cumulative curves per (link, class) plus the time grid they live on.
struct CumulativeCurveSet {
  double sim_step = 5.0;
  int steps_per_interval = 180;
  int horizon_intervals = 0;
  PerClass<std::vector<std::array<Curve, 4>>> curves;
  PerClass<std::vector<int>> free_flow_steps;  // per link, travel time at free flow in whole steps

  int num_links() const { return static_cast<int>(curves[0].size()); }

  const Curve& curve(int link, VehicleClass c, CurveKind k) const {
    return curves[index_of(c)][link][static_cast<int>(k)];
  }
  Curve& curve(int link, VehicleClass c, CurveKind k) { return curves[index_of(c)][link][static_cast<int>(k)]; }

  // Free-flow traversal time rounded up to the simulation step, seconds.
  double free_flow_time(int link, VehicleClass c) const { return free_flow_steps[index_of(c)][link] * sim_step; }

  void check(int link, int interval) const {
    if (link < 0 || link >= num_links()) throw DimensionError("unknown link index " + std::to_string(link));
    if (interval < 0 || interval >= horizon_intervals) throw DimensionError("interval " + std::to_string(interval) + " outside horizon");
  }
};

// x: inflow (veh), h: travel time (s), k: vehicles remaining at interval end (veh).
// Rows are link indices, columns are horizon intervals.
struct LinkStateTensor {
  ClassTensor inflow;
  ClassTensor travel_time;
  ClassTensor remaining;
};

// Life of one packet, kept for oracles and diagnostics.
struct PacketRecord {
  VehicleClass cls = VehicleClass::car;
  int path = 0;
  int depart_interval = 0;
  double size = 0.0;
  bool wants_parking = false;
  int depart_step = -1;
  int arrive_step = -1;  // -1 while still in the network at the horizon
};

struct LinkVisit {
  int packet = 0;
  int link = 0;
  int enter_step = 0;
  int exit_step = -1;
  bool parked = false;
};

struct DnlResult {
  CumulativeCurveSet curves;
  LinkStateTensor states;
  PathFlowTensor realized_flow;  // path flows after en-route reassignment
  bool cleared = true;
  double vehicles_departed = 0.0;
  double vehicles_arrived = 0.0;
  std::vector<PacketRecord> packets;
  std::vector<LinkVisit> visits;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Extraction of link states from curves.

inline double extract_link_flow(const CumulativeCurveSet& cs, int link, VehicleClass c, int interval) {
  cs.check(link, interval);
  int lo = interval * cs.steps_per_interval, hi = lo + cs.steps_per_interval;
  double x = 0.0;
  for (auto k : {CurveKind::arrival_moving, CurveKind::arrival_parking}) {
    const auto& cv = cs.curve(link, c, k);
    x += cv.value_before(hi) - cv.value_before(lo);
  }
  return x;
}

// Traversal time of the first through vehicle arriving in the interval, D^-1(A(t)) - t.
// Free-flow time when no through vehicle arrives.
inline double extract_travel_time(const CumulativeCurveSet& cs, int link, VehicleClass c, int interval) {
  cs.check(link, interval);
  int lo = interval * cs.steps_per_interval, hi = lo + cs.steps_per_interval;
  const auto& A = cs.curve(link, c, CurveKind::arrival_moving);
  const auto& D = cs.curve(link, c, CurveKind::departure_moving);
  auto i = A.first_at_or_after(lo);
  if (i >= A.events().size() || A.events()[i].step >= hi) return cs.free_flow_time(link, c);
  double target = A.cumulative(i);
  double tol = 1e-9 * std::max(1.0, target);
  int arrive = A.events()[i].step;
  // First departure event that brings D up to A(t).
  std::size_t lo_j = 0, hi_j = D.events().size();
  while (lo_j < hi_j) {
    auto mid = (lo_j + hi_j) / 2;
    if (D.cumulative(mid) >= target - tol) hi_j = mid;
    else lo_j = mid + 1;
  }
  int depart = lo_j < D.events().size() ? D.events()[lo_j].step : cs.horizon_intervals * cs.steps_per_interval;
  return std::max(cs.free_flow_time(link, c), (depart - arrive) * cs.sim_step);
}

// R(t̄) = A^m + A^p - D^m - D^p at the end of `interval`.
inline double remaining_at_end(const CumulativeCurveSet& cs, int link, VehicleClass c, int interval) {
  cs.check(link, interval);
  int hi = (interval + 1) * cs.steps_per_interval;
  return cs.curve(link, c, CurveKind::arrival_moving).value_before(hi) +
         cs.curve(link, c, CurveKind::arrival_parking).value_before(hi) -
         cs.curve(link, c, CurveKind::departure_moving).value_before(hi) -
         cs.curve(link, c, CurveKind::departure_parking).value_before(hi);
}

// Mean of R over intervals [t - delta, t + delta] clipped to the horizon.
inline double extract_density(const CumulativeCurveSet& cs, int link, VehicleClass c, int interval, int delta) {
  cs.check(link, interval);
  int a = std::max(0, interval - delta), b = std::min(cs.horizon_intervals - 1, interval + delta);
  double sum = 0.0;
  for (int t = a; t <= b; ++t) sum += remaining_at_end(cs, link, c, t);
  return sum / (b - a + 1);
}

inline LinkStateTensor extract_link_states(const CumulativeCurveSet& cs, int delta) {
  LinkStateTensor s{ClassTensor(cs.num_links(), cs.horizon_intervals), ClassTensor(cs.num_links(), cs.horizon_intervals),
                    ClassTensor(cs.num_links(), cs.horizon_intervals)};
  for (auto c : kAllClasses) {
    for (int a = 0; a < cs.num_links(); ++a) {
      for (int t = 0; t < cs.horizon_intervals; ++t) {
        s.inflow[c](a, t) = extract_link_flow(cs, a, c, t);
        s.travel_time[c](a, t) = extract_travel_time(cs, a, c, t);
        s.remaining[c](a, t) = delta == 0 ? remaining_at_end(cs, a, c, t) : extract_density(cs, a, c, t, delta);
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Network loading.

namespace detail {

struct LinkRuntime {
  std::array<std::deque<std::pair<int, int>>, kNumClasses> moving;  // (ready_step, packet) in entry order
  std::deque<int> exit_queue;
  std::deque<std::pair<int, int>> parked;  // (release_step, packet)
  double budget = 0.0;
  double curb_occupancy = 0.0;
  double queued_pce = 0.0;
};

struct PacketState {
  int link_pos = 0;
  int visit = -1;
  long long entry_seq = 0;
};

}  // namespace detail

// Point-queue mesoscopic loading of path flows with curbside parking. Packets of
// `cfg.packet_size` vehicles travel each link at free-flow speed (rounded up to whole
// simulation steps) and then discharge FIFO through a shared PCE capacity. Packets that
// park divert to the curb of their path's parking link, dwell, and continue. `seed`
// orders departures that fall in the same step.
inline DnlResult run_dnl(const Network& net, const PathSet& paths, const PathFlowTensor& f, const DnlConfig& cfg,
                         unsigned long long seed) {
  cfg.validate();
  const int num_links = net.num_links();
  const int spi = cfg.steps_per_interval();
  const int horizon = cfg.horizon_steps();
  const int T = cfg.demand_intervals;
  for (auto c : kAllClasses) {
    if (f[c].rows() != paths.of(c).num_paths() || f[c].cols() != T) throw DimensionError("run_dnl: path flow shape mismatch");
  }
  if (f.min_coeff() < 0) throw InvariantError("run_dnl: negative path flow");
  if (!f.all_finite()) throw InvariantError("run_dnl: non-finite path flow");

  DnlResult out;
  auto& cs = out.curves;
  cs.sim_step = cfg.sim_step;
  cs.steps_per_interval = spi;
  cs.horizon_intervals = cfg.horizon_intervals;
  for (int c = 0; c < kNumClasses; ++c) {
    cs.curves[c].resize(num_links);
    cs.free_flow_steps[c].resize(num_links);
    for (int a = 0; a < num_links; ++a) {
      double steps = net.links()[a].free_flow_time(static_cast<VehicleClass>(c)) / cfg.sim_step;
      cs.free_flow_steps[c][a] = std::max(1, static_cast<int>(std::ceil(steps - 1e-9)));
    }
  }
  out.realized_flow = f;

  std::vector<detail::LinkRuntime> rt(num_links);
  std::vector<double> cap_per_step(num_links);
  for (int a = 0; a < num_links; ++a) cap_per_step[a] = net.links()[a].capacity_vph[0] * cfg.sim_step / 3600.0;
  const PerClass<double> pce{1.0, cfg.truck_pce};
  const int dwell_steps = static_cast<int>(std::ceil(cfg.dwell_time / cfg.sim_step - 1e-9));

  PerClass<std::vector<int>> parking_link;
  for (auto c : kAllClasses) {
    for (const auto& p : paths.of(c).paths) parking_link[index_of(c)].push_back(parking_link_of(net, p));
  }

  std::vector<detail::PacketState> pstate;
  std::mt19937_64 rng(seed);
  long long entry_seq = 0;
  std::size_t arrived_packets = 0;

  // Departures of the current demand interval, sorted by step.
  std::vector<std::pair<int, int>> schedule;
  std::size_t next_departure = 0;

  auto record = [&](int link, VehicleClass c, CurveKind k, int step, int packet) {
    const auto& p = out.packets[packet];
    cs.curve(link, c, k).push({step, p.size, p.path, p.depart_interval, packet});
  };

  auto enter_link = [&](int packet, int step) {
    auto& p = out.packets[packet];
    auto& ps = pstate[packet];
    const auto& path = paths.of(p.cls).paths[p.path];
    int link = path.links[ps.link_pos];
    auto& L = rt[link];
    const auto& ln = net.links()[link];
    ps.entry_seq = entry_seq++;
    ps.visit = static_cast<int>(out.visits.size());
    bool park = p.wants_parking && link == parking_link[index_of(p.cls)][p.path] &&
                L.curb_occupancy + p.size <= ln.curb_capacity + 1e-12;
    out.visits.push_back({packet, link, step, -1, park});
    if (park) {
      L.curb_occupancy += p.size;
      L.parked.emplace_back(step + dwell_steps, packet);
      record(link, p.cls, CurveKind::arrival_parking, step, packet);
    } else {
      L.moving[index_of(p.cls)].emplace_back(step + cs.free_flow_steps[index_of(p.cls)][link], packet);
      record(link, p.cls, CurveKind::arrival_moving, step, packet);
    }
  };

  auto leave_link = [&](int packet, int step) {
    auto& p = out.packets[packet];
    auto& ps = pstate[packet];
    out.visits[ps.visit].exit_step = step;
    const auto& path = paths.of(p.cls).paths[p.path];
    if (++ps.link_pos == static_cast<int>(path.links.size())) {
      p.arrive_step = step;
      out.vehicles_arrived += p.size;
      ++arrived_packets;
    } else {
      enter_link(packet, step);
    }
  };

  auto generate_interval = [&](int t1) {
    schedule.clear();
    next_departure = 0;
    if (cfg.enroute_fraction > 0) {
      // Instantaneous link times: free-flow plus time to discharge the current queue.
      std::vector<PerClass<double>> link_time(num_links);
      for (int a = 0; a < num_links; ++a) {
        double wait = rt[a].queued_pce / cap_per_step[a] * cfg.sim_step;
        for (int c = 0; c < kNumClasses; ++c) link_time[a][c] = cs.free_flow_steps[c][a] * cfg.sim_step + wait;
      }
      for (auto c : kAllClasses) {
        const auto& cp = paths.of(c);
        auto& fr = out.realized_flow[c];
        for (int r = 0; r < paths.num_ods(); ++r) {
          int b = cp.od_begin[r], e = cp.od_begin[r + 1];
          if (e - b < 2) continue;
          int best = b;
          double best_cost = std::numeric_limits<double>::infinity();
          double total = 0.0;
          for (int k = b; k < e; ++k) {
            double cost = 0.0;
            for (int l : cp.paths[k].links) cost += link_time[l][index_of(c)];
            if (cost < best_cost) best_cost = cost, best = k;
            total += f[c](k, t1);
          }
          for (int k = b; k < e; ++k) fr(k, t1) = (1.0 - cfg.enroute_fraction) * f[c](k, t1);
          fr(best, t1) += cfg.enroute_fraction * total;
        }
      }
    }
    for (auto c : kAllClasses) {
      const auto& cp = paths.of(c);
      for (int k = 0; k < cp.num_paths(); ++k) {
        double flow = out.realized_flow[c](k, t1);
        if (flow <= 0) continue;
        bool can_park = parking_link[index_of(c)][k] >= 0 && cfg.parking_fraction > 0;
        double parking_share = can_park ? flow * cfg.parking_fraction : 0.0;
        for (int group = 0; group < 2; ++group) {
          double amount = group == 0 ? flow - parking_share : parking_share;
          if (amount <= 0) continue;
          auto whole = static_cast<long long>(std::floor(amount / cfg.packet_size + 1e-12));
          double rest = amount - static_cast<double>(whole) * cfg.packet_size;
          if (rest < 1e-12 * std::max(1.0, amount)) rest = 0.0;
          long long n = whole + (rest > 0 ? 1 : 0);
          for (long long j = 0; j < n; ++j) {
            PacketRecord rec;
            rec.cls = c;
            rec.path = k;
            rec.depart_interval = t1;
            rec.size = j < whole ? cfg.packet_size : rest;
            rec.wants_parking = group == 1;
            int offset = static_cast<int>((j * spi) / n);
            rec.depart_step = t1 * spi + offset;
            schedule.emplace_back(rec.depart_step, static_cast<int>(out.packets.size()));
            out.packets.push_back(rec);
            pstate.push_back({});
          }
        }
      }
    }
    std::stable_sort(schedule.begin(), schedule.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < schedule.size();) {
      std::size_t j = i;
      while (j < schedule.size() && schedule[j].first == schedule[i].first) ++j;
      std::shuffle(schedule.begin() + static_cast<long>(i), schedule.begin() + static_cast<long>(j), rng);
      i = j;
    }
  };

  for (int step = 0; step < horizon; ++step) {
    if (step % spi == 0 && step / spi < T) generate_interval(step / spi);
    while (next_departure < schedule.size() && schedule[next_departure].first == step) {
      int packet = schedule[next_departure++].second;
      out.vehicles_departed += out.packets[packet].size;
      enter_link(packet, step);
    }
    for (int a = 0; a < num_links; ++a) {
      auto& L = rt[a];
      while (!L.parked.empty() && L.parked.front().first <= step) {
        int packet = L.parked.front().second;
        L.parked.pop_front();
        L.curb_occupancy -= out.packets[packet].size;
        record(a, out.packets[packet].cls, CurveKind::departure_parking, step, packet);
        leave_link(packet, step);
      }
    }
    for (int a = 0; a < num_links; ++a) {
      auto& L = rt[a];
      // Move packets that reached the downstream end into the discharge queue.
      while (true) {
        int pick = -1;
        for (int c = 0; c < kNumClasses; ++c) {
          if (L.moving[c].empty() || L.moving[c].front().first > step) continue;
          if (pick < 0) {
            pick = c;
            continue;
          }
          const auto& x = L.moving[c].front();
          const auto& y = L.moving[pick].front();
          if (x.first < y.first || (x.first == y.first && pstate[x.second].entry_seq < pstate[y.second].entry_seq)) pick = c;
        }
        if (pick < 0) break;
        int packet = L.moving[pick].front().second;
        L.moving[pick].pop_front();
        L.exit_queue.push_back(packet);
        L.queued_pce += pce[pick] * out.packets[packet].size;
      }
      L.budget += cap_per_step[a];
      while (!L.exit_queue.empty()) {
        int packet = L.exit_queue.front();
        const auto& p = out.packets[packet];
        double need = pce[index_of(p.cls)] * p.size;
        if (L.budget + 1e-12 < need) break;
        L.budget -= need;
        L.queued_pce -= need;
        L.exit_queue.pop_front();
        record(a, p.cls, CurveKind::departure_moving, step, packet);
        leave_link(packet, step);
      }
      // Unused capacity does not carry over an empty queue.
      if (L.exit_queue.empty()) {
        L.queued_pce = 0.0;
        L.budget = 0.0;
      }
    }
  }

  out.cleared = arrived_packets == out.packets.size();
  if (!out.cleared) {
    out.warnings.push_back("horizon too short: " + std::to_string(out.packets.size() - arrived_packets) +
                           " packets still in the network");
  }
  out.states = extract_link_states(cs, cfg.density_smoothing_delta);
  return out;
}

// JSON-lines dump of every curve increment: {link, class, curve, t, value, tag:[path,interval]}.
inline void dump_curves(const Network& net, const CumulativeCurveSet& cs, std::ostream& out) {
  for (int a = 0; a < cs.num_links(); ++a) {
    for (auto c : kAllClasses) {
      for (auto k : kAllCurves) {
        const auto& cv = cs.curve(a, c, k);
        for (std::size_t i = 0; i < cv.events().size(); ++i) {
          const auto& e = cv.events()[i];
          nlohmann::json j = {{"link", net.links()[a].id}, {"class", class_name(c)}, {"curve", curve_name(k)},
                              {"t", e.step * cs.sim_step}, {"value", cv.cumulative(i)},
                              {"tag", {e.path, e.depart_interval}}};
          out << j.dump() << '\n';
        }
      }
    }
  }
}

}  // namespace dode
