#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dode/benchmark.hpp"
#include "dode/estimator.hpp"
#include "dode/io.hpp"
#include "dode/metrics.hpp"
#include "dode/observation.hpp"
#include "dode/synthetic.hpp"

namespace dode {

enum class ScenarioKind { counts_only, counts_plus_density, pc_spsa };

inline const char* scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::counts_only: return "counts_only";
    case ScenarioKind::counts_plus_density: return "counts_plus_density";
    case ScenarioKind::pc_spsa: return "pc_spsa";
  }
  return "?";
}

inline ScenarioKind parse_scenario(const std::string& s) {
  if (s == "counts_only") return ScenarioKind::counts_only;
  if (s == "counts_plus_density") return ScenarioKind::counts_plus_density;
  if (s == "pc_spsa") return ScenarioKind::pc_spsa;
  throw ParseError("unknown scenario kind '" + s + "'");
}

enum class DensitySource { states, detections };

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::counts_plus_density;
  // Empty network_file selects the built-in 18-link toy network.
  std::string network_file;
  std::string od_file;
  std::string nodes_file;
  std::string paths_file;   // optional path-set override
  std::string demand_file;  // ground truth; empty selects the seeded peaked profile
  DemandProfile demand;
  unsigned long long demand_seed = 42;
  int k_paths = 3;
  int observed_links = 6;
  unsigned long long seed = 1;  // link sampling, noise, initialization
  double noise_count = 0.1;
  double noise_time = 0.1;
  double noise_density = 0.1;
  double snapshot_period = 900.0;  // s between density snapshots
  int snapshot_count = 10;         // within the demand window
  DensitySource density_source = DensitySource::states;
  double buffer = 15.0;  // m
  double lateral_sd = 3.0;
  bool truth_init = false;  // start the solver from the ground truth
  std::optional<LossWeights> weights;
  DnlConfig dnl;
  EstimatorConfig estimator;
  SpsaConfig spsa;
  std::string out_dir = "out";

  ScenarioConfig() {
    dnl.demand_intervals = 10;
    dnl.horizon_intervals = 14;
    demand.car_min = 100;
    demand.car_max = 280;
  }

  std::vector<int> snapshot_intervals() const {
    int stride = static_cast<int>(std::lround(snapshot_period / dnl.interval_length));
    if (stride < 1) throw InvariantError("snapshot period shorter than one interval");
    std::vector<int> out;
    for (int t = 0; t < dnl.demand_intervals && static_cast<int>(out.size()) < snapshot_count; t += stride) out.push_back(t);
    return out;
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = nlohmann::json{{"kind", scenario_name(c.kind)},
                     {"network_file", c.network_file},
                     {"od_file", c.od_file},
                     {"nodes_file", c.nodes_file},
                     {"paths_file", c.paths_file},
                     {"demand_file", c.demand_file},
                     {"demand",
                      {{"car_min", c.demand.car_min},
                       {"car_max", c.demand.car_max},
                       {"truck_ratio_min", c.demand.truck_ratio_min},
                       {"truck_ratio_max", c.demand.truck_ratio_max},
                       {"peak_position", c.demand.peak_position},
                       {"peak_width", c.demand.peak_width},
                       {"base_level", c.demand.base_level}}},
                     {"demand_seed", c.demand_seed},
                     {"k_paths", c.k_paths},
                     {"observed_links", c.observed_links},
                     {"seed", c.seed},
                     {"noise", {{"count", c.noise_count}, {"time", c.noise_time}, {"density", c.noise_density}}},
                     {"snapshot_period", c.snapshot_period},
                     {"snapshot_count", c.snapshot_count},
                     {"density_source", c.density_source == DensitySource::states ? "states" : "detections"},
                     {"buffer", c.buffer},
                     {"lateral_sd", c.lateral_sd},
                     {"truth_init", c.truth_init},
                     {"dnl", c.dnl},
                     {"estimator", c.estimator},
                     {"spsa", c.spsa},
                     {"out_dir", c.out_dir}};
  if (c.weights) j["weights"] = {{"count", c.weights->count}, {"time", c.weights->time}, {"density", c.weights->density}};
}

inline void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  if (j.contains("kind")) c.kind = parse_scenario(j.at("kind").get<std::string>());
  c.network_file = j.value("network_file", c.network_file);
  c.od_file = j.value("od_file", c.od_file);
  c.nodes_file = j.value("nodes_file", c.nodes_file);
  c.paths_file = j.value("paths_file", c.paths_file);
  c.demand_file = j.value("demand_file", c.demand_file);
  if (j.contains("demand")) {
    const auto& d = j.at("demand");
    c.demand.car_min = d.value("car_min", c.demand.car_min);
    c.demand.car_max = d.value("car_max", c.demand.car_max);
    c.demand.truck_ratio_min = d.value("truck_ratio_min", c.demand.truck_ratio_min);
    c.demand.truck_ratio_max = d.value("truck_ratio_max", c.demand.truck_ratio_max);
    c.demand.peak_position = d.value("peak_position", c.demand.peak_position);
    c.demand.peak_width = d.value("peak_width", c.demand.peak_width);
    c.demand.base_level = d.value("base_level", c.demand.base_level);
  }
  c.demand_seed = j.value("demand_seed", c.demand_seed);
  c.k_paths = j.value("k_paths", c.k_paths);
  c.observed_links = j.value("observed_links", c.observed_links);
  c.seed = j.value("seed", c.seed);
  if (j.contains("noise")) {
    const auto& n = j.at("noise");
    c.noise_count = n.value("count", c.noise_count);
    c.noise_time = n.value("time", c.noise_time);
    c.noise_density = n.value("density", c.noise_density);
  }
  c.snapshot_period = j.value("snapshot_period", c.snapshot_period);
  c.snapshot_count = j.value("snapshot_count", c.snapshot_count);
  if (j.contains("density_source")) {
    auto s = j.at("density_source").get<std::string>();
    if (s == "states") c.density_source = DensitySource::states;
    else if (s == "detections") c.density_source = DensitySource::detections;
    else throw ParseError("unknown density_source '" + s + "'");
  }
  c.buffer = j.value("buffer", c.buffer);
  c.lateral_sd = j.value("lateral_sd", c.lateral_sd);
  c.truth_init = j.value("truth_init", c.truth_init);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights = LossWeights{w.value("count", 1.0), w.value("time", 1.0), w.value("density", 1.0)};
  }
  if (j.contains("dnl")) from_json(j.at("dnl"), c.dnl);
  if (j.contains("estimator")) from_json(j.at("estimator"), c.estimator);
  if (j.contains("spsa")) from_json(j.at("spsa"), c.spsa);
  c.out_dir = j.value("out_dir", c.out_dir);
}

// A summary file holds its config under "config"; a plain config file is the object itself.
inline ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return (j.contains("config") ? j.at("config") : j).get<ScenarioConfig>();
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
  return h;
}

inline std::string config_hash(const ScenarioConfig& c) {
  nlohmann::json j = c;
  j.erase("out_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

// ---------------------------------------------------------------------------

struct ScenarioSetup {
  Network network;
  NodeCoordinates coordinates;
  PathSet paths;
  DemandTensor truth;
  LinkStateTensor truth_states;
  LinkStateTensor reference;  // noisy truth, the observation source on every link
  std::vector<int> observed;  // sampled segment indices, sorted
  std::vector<int> unobserved;
  std::vector<int> segments;
  std::vector<ObservationRow> rows;
  ObservationSet obs;
  LossWeights weights;
  std::vector<std::string> warnings;
};

namespace detail {

inline ClassTensor noisy(const ClassTensor& t, double level, unsigned long long seed) {
  ClassTensor out = t;
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<double> v(t.data[c].data(), t.data[c].data() + t.data[c].size());
    auto n = inject_noise(v, level, seed * 7919ull + static_cast<unsigned long long>(c));
    std::copy(n.begin(), n.end(), out.data[c].data());
  }
  return out;
}

inline std::vector<int> all_intervals(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace detail

inline ScenarioSetup prepare_scenario(const ScenarioConfig& cfg) {
  cfg.dnl.validate();
  ScenarioSetup s;
  if (cfg.network_file.empty()) {
    auto toy = toy_network();
    s.network = std::move(toy.network);
    s.coordinates = std::move(toy.coordinates);
  } else {
    s.network = load_network(cfg.network_file, cfg.od_file.empty() ? std::nullopt : std::optional<std::string>(cfg.od_file));
    if (!cfg.nodes_file.empty()) s.coordinates = load_node_coordinates(cfg.nodes_file);
  }
  const auto& net = s.network;
  s.paths = cfg.paths_file.empty() ? build_path_set(net, cfg.k_paths) : load_path_file(net, cfg.paths_file);
  s.warnings = s.paths.warnings;
  const int Td = cfg.dnl.demand_intervals, Th = cfg.dnl.horizon_intervals;
  s.truth = cfg.demand_file.empty() ? peaked_demand(net.num_od_pairs(), Td, cfg.demand, cfg.demand_seed)
                                    : load_demand(net, Td, cfg.demand_file);
  for (int r : s.paths.dropped_ods)
    for (auto c : kAllClasses) s.truth[c].row(r).setZero();

  auto p = route_choice(s.paths, free_flow_path_costs(s.paths, Td), cfg.dnl.logit_scale);
  auto res = run_dnl(net, s.paths, assign_path_flows(s.paths, s.truth, p), cfg.dnl, cfg.estimator.dnl_seed);
  for (const auto& w : res.warnings) s.warnings.push_back("ground truth: " + w);
  s.truth_states = res.states;
  s.reference = {detail::noisy(res.states.inflow, cfg.noise_count, cfg.seed * 3 + 0),
                 detail::noisy(res.states.travel_time, cfg.noise_time, cfg.seed * 3 + 1),
                 detail::noisy(res.states.remaining, cfg.noise_density, cfg.seed * 3 + 2)};

  s.segments = net.segment_indices();
  if (cfg.observed_links < 0 || cfg.observed_links > static_cast<int>(s.segments.size()))
    throw InvariantError("observed_links exceeds the number of road segments");
  std::vector<int> shuffled = s.segments;
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  s.observed.assign(shuffled.begin(), shuffled.begin() + cfg.observed_links);
  s.unobserved.assign(shuffled.begin() + cfg.observed_links, shuffled.end());
  std::sort(s.observed.begin(), s.observed.end());
  std::sort(s.unobserved.begin(), s.unobserved.end());

  auto all_t = detail::all_intervals(Th);
  for (auto stream : {Stream::count, Stream::time}) {
    const auto& src = stream == Stream::count ? s.reference.inflow : s.reference.travel_time;
    for (auto r : identity_rows(stream, s.observed, all_t)) {
      r.value = src[r.classes[0]](r.links[0], r.intervals[0]);
      s.rows.push_back(std::move(r));
    }
  }
  if (cfg.kind == ScenarioKind::counts_plus_density) {
    auto snaps = cfg.snapshot_intervals();
    if (cfg.density_source == DensitySource::states) {
      for (auto r : identity_rows(Stream::density, s.segments, snaps)) {
        r.value = s.reference.remaining[r.classes[0]](r.links[0], r.intervals[0]);
        s.rows.push_back(std::move(r));
      }
    } else {
      // Vehicles on the link at the end of the interval, scattered as detections and map-matched back.
      for (std::size_t i = 0; i < snaps.size(); ++i) {
        int t = snaps[i];
        std::map<int, PerClass<double>> counts;
        for (int a : s.segments) counts[a] = {s.truth_states.remaining.data[0](a, t), s.truth_states.remaining.data[1](a, t)};
        auto dets = synthesize_detections(net, s.coordinates, counts, static_cast<int>(i), t, cfg.lateral_sd,
                                          cfg.seed * 101 + i);
        auto m = match_detections(dets, net, s.coordinates, cfg.buffer);
        auto snap = snapshots_from_matches(dets, m, s.segments);
        DensitySnapshot ds = snap.empty() ? DensitySnapshot{static_cast<int>(i), t, {}} : snap.front();
        if (snap.empty())
          for (int a : s.segments) ds.counts[a] = {0.0, 0.0};
        auto rows = build_density_observation(ds, Th);
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r.value);
        v = inject_noise(v, cfg.noise_density, cfg.seed * 103 + i);
        for (std::size_t k = 0; k < rows.size(); ++k) {
          rows[k].value = v[k];
          s.rows.push_back(rows[k]);
        }
      }
    }
  }
  s.obs = build_aggregation(s.rows, net.num_links(), Th);
  s.weights = cfg.weights ? *cfg.weights : default_weights(s.obs);
  return s;
}

// True when every count and time row touches only observed links.
inline bool audit_masking(const ObservationSet& obs, const std::vector<int>& observed) {
  for (auto stream : {Stream::count, Stream::time})
    for (const auto& r : obs[stream].rows)
      for (int a : r.links)
        if (!std::binary_search(observed.begin(), observed.end(), a)) return false;
  return true;
}

using StreamMetrics = std::map<std::string, std::map<std::string, FitMetrics>>;  // stream -> subset -> metrics

inline StreamMetrics state_metrics(const LinkStateTensor& est, const LinkStateTensor& ref, const ScenarioSetup& s) {
  StreamMetrics out;
  const std::pair<const char*, const std::vector<int>*> subsets[] = {
      {"observed", &s.observed}, {"unobserved", &s.unobserved}, {"all", &s.segments}};
  for (auto stream : kAllStreams) {
    const auto& e = stream == Stream::count ? est.inflow : stream == Stream::time ? est.travel_time : est.remaining;
    const auto& r = stream == Stream::count ? ref.inflow : stream == Stream::time ? ref.travel_time : ref.remaining;
    for (const auto& [name, links] : subsets) {
      std::vector<double> ev, rv;
      for (auto c : kAllClasses)
        for (int a : *links)
          for (int t = 0; t < e[c].cols(); ++t) ev.push_back(e[c](a, t)), rv.push_back(r[c](a, t));
      out[stream_name(stream)][name] = compute_metrics(ev, rv);
    }
  }
  return out;
}

struct ScenarioReport {
  ScenarioConfig config;
  std::string hash;
  DemandTensor estimate;
  ConvergenceTrace trace;
  LinkStateTensor estimated_states;
  StreamMetrics metrics;
  PerClass<double> demand_mae{};
  int dnl_evaluations = 0;
  double runtime_s = 0.0;
  bool masking_ok = true;
  std::vector<std::string> warnings;
  std::size_t observation_rows = 0;
  PerClass<int> density_rows{};
};

inline LinkStateTensor load_states(const ScenarioSetup& s, const DemandTensor& q, const ScenarioConfig& cfg) {
  auto p = route_choice(s.paths, free_flow_path_costs(s.paths, cfg.dnl.demand_intervals), cfg.dnl.logit_scale);
  return run_dnl(s.network, s.paths, assign_path_flows(s.paths, q, p), cfg.dnl, cfg.estimator.dnl_seed).states;
}

inline nlohmann::json metrics_json(const StreamMetrics& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [stream, subs] : m)
    for (const auto& [sub, fm] : subs)
      j[stream][sub] = {{"r2", fm.r2 ? nlohmann::json(*fm.r2) : nlohmann::json(nullptr)}, {"mae", fm.mae}, {"rmse", fm.rmse}};
  return j;
}

inline void write_metrics(const ScenarioReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "stream,subset,r2,mae,rmse,n\n";
  for (const auto& [stream, subs] : r.metrics)
    for (const auto& [sub, fm] : subs)
      out << stream << ',' << sub << ',' << (fm.r2 ? csv::fmt(*fm.r2) : "") << ',' << csv::fmt(fm.mae) << ','
          << csv::fmt(fm.rmse) << ',' << fm.n << '\n';
  out << "demand_car,all,," << csv::fmt(r.demand_mae[0]) << ",,\n";
  out << "demand_truck,all,," << csv::fmt(r.demand_mae[1]) << ",,\n";
}

inline nlohmann::json summary_json(const ScenarioReport& r) {
  return {{"scenario", scenario_name(r.config.kind)},
          {"seeds",
           {{"seed", r.config.seed},
            {"demand_seed", r.config.demand_seed},
            {"init_seed", r.config.estimator.init_seed},
            {"dnl_seed", r.config.estimator.dnl_seed},
            {"spsa_seed", r.config.spsa.seed}}},
          {"config_hash", r.hash},
          {"metrics", metrics_json(r.metrics)},
          {"demand_mae", {{"car", r.demand_mae[0]}, {"truck", r.demand_mae[1]}}},
          {"dnl_evaluations", r.dnl_evaluations},
          {"runtime_s", r.runtime_s},
          {"assumptions",
           {"dwell_time and parking_fraction are configured values, not observed ones",
            "loss weights default to unit balancing by mean magnitudes",
            "ground-truth demand is synthetic"}},
          {"warnings", r.warnings},
          {"config", r.config}};
}

inline PcBasis template_basis(const DemandTensor& tmpl, const SpsaConfig& sc) {
  return fit_pca(generate_od_samples(tmpl, sc.num_samples, sc.sample_perturbation, sc.seed), sc.variance_threshold);
}

inline DemandTensor initial_demand(const ScenarioConfig& cfg, const ScenarioSetup& s) {
  if (cfg.truth_init) return s.truth;
  return random_demand(s.network.num_od_pairs(), cfg.dnl.demand_intervals, cfg.estimator.init_scale,
                       cfg.estimator.init_seed + cfg.seed * 1000003ull, &s.paths);
}

// Ground truth, observations, solve, metrics. Writes artifacts when `write` is set.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg, bool write = true) {
  auto t0 = std::chrono::steady_clock::now();
  ScenarioReport rep;
  rep.config = cfg;
  rep.hash = config_hash(cfg);
  if (write) std::filesystem::create_directories(cfg.out_dir);
  auto s = prepare_scenario(cfg);
  rep.warnings = s.warnings;
  rep.masking_ok = audit_masking(s.obs, s.observed);
  rep.observation_rows = s.obs.total_rows();
  for (const auto& r : s.obs[Stream::density].rows) rep.density_rows[index_of(r.classes[0])]++;
  if (write) save_observations(s.network, s.rows, cfg.out_dir + "/observations.csv");

  auto q0 = initial_demand(cfg, s);
  if (cfg.kind == ScenarioKind::pc_spsa) {
    auto basis = template_basis(s.truth, cfg.spsa);
    auto res = solve_pc_spsa(s.network, s.paths, s.obs, s.weights, basis, cfg.spsa, cfg.dnl, q0);
    rep.estimate = res.estimate;
    rep.trace = res.trace;
    rep.dnl_evaluations = res.dnl_evaluations;
    if (res.aborted) rep.warnings.push_back(res.message);
  } else {
    auto res = solve_dode(s.network, s.paths, s.obs, s.weights, cfg.estimator, cfg.dnl, q0);
    rep.estimate = res.estimate;
    rep.trace = res.trace;
    rep.dnl_evaluations = res.dnl_evaluations;
    if (res.aborted) rep.warnings.push_back(res.message);
    for (const auto& w : res.warnings) rep.warnings.push_back(w);
  }
  rep.estimated_states = load_states(s, rep.estimate, cfg);
  rep.metrics = state_metrics(rep.estimated_states, s.reference, s);
  for (auto c : kAllClasses) rep.demand_mae[index_of(c)] = (rep.estimate[c] - s.truth[c]).cwiseAbs().mean();
  rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (write) {
    write_trace(rep.trace, cfg.out_dir + "/trace.csv");
    write_demand(s.network, rep.estimate, cfg.out_dir + "/estimate.csv");
    write_metrics(rep, cfg.out_dir + "/metrics.csv");
    std::ofstream(cfg.out_dir + "/summary.json") << summary_json(rep).dump(2) << '\n';
  }
  return rep;
}

// ---------------------------------------------------------------------------

enum class SensitivityAxis { error_level, snapshot_frequency };

inline SensitivityAxis parse_axis(const std::string& s) {
  if (s == "error_level") return SensitivityAxis::error_level;
  if (s == "snapshot_frequency") return SensitivityAxis::snapshot_frequency;
  throw ParseError("unknown sensitivity axis '" + s + "'");
}

struct SensitivityRun {
  double value = 0.0;
  int replication = 0;
  unsigned long long seed = 0;
  ScenarioReport report;
};

struct SensitivityStat {
  double mean = 0.0, min = 0.0, max = 0.0;
  int n = 0;
};

struct SensitivityReport {
  SensitivityAxis axis = SensitivityAxis::error_level;
  std::vector<SensitivityRun> runs;
  // value -> "stream/subset" -> R^2 stats over replications
  std::map<double, std::map<std::string, SensitivityStat>> stats;
};

inline ScenarioConfig apply_axis(ScenarioConfig cfg, SensitivityAxis axis, double value) {
  if (axis == SensitivityAxis::error_level) cfg.noise_count = cfg.noise_time = cfg.noise_density = value;
  else cfg.snapshot_period = value;
  return cfg;
}

// Runs every (value, replication) pair on `workers` threads; each run writes to its own
// subdirectory.
inline SensitivityReport sensitivity_suite(const ScenarioConfig& base, SensitivityAxis axis, const std::vector<double>& values,
                                           int replications, bool write = true, unsigned workers = 0) {
  if (replications < 1) throw InvariantError("sensitivity_suite: replications must be >= 1");
  SensitivityReport rep;
  rep.axis = axis;
  for (double v : values)
    for (int r = 0; r < replications; ++r) rep.runs.push_back({v, r, base.seed + static_cast<unsigned long long>(r), {}});
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(rep.runs.size()));
  std::size_t next = 0;
  std::mutex mu;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= rep.runs.size() || failure) return;
        i = next++;
      }
      auto& run = rep.runs[i];
      auto cfg = apply_axis(base, axis, run.value);
      cfg.seed = run.seed;
      cfg.out_dir = base.out_dir + "/" + csv::fmt(run.value) + "_rep" + std::to_string(run.replication);
      try {
        run.report = run_scenario(cfg, write);
      } catch (...) {
        std::lock_guard lock(mu);
        failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (const auto& run : rep.runs)
    for (const auto& [stream, subs] : run.report.metrics)
      for (const auto& [sub, fm] : subs) {
        if (!fm.r2) continue;
        auto& st = rep.stats[run.value][stream + "/" + sub];
        double r2 = *fm.r2;
        st.min = st.n ? std::min(st.min, r2) : r2;
        st.max = st.n ? std::max(st.max, r2) : r2;
        st.mean += r2;
        ++st.n;
      }
  for (auto& [v, m] : rep.stats)
    for (auto& [k, st] : m) st.mean /= st.n;

  if (write) {
    std::filesystem::create_directories(base.out_dir);
    std::ofstream out(base.out_dir + "/sensitivity.csv");
    out << "value,stream_subset,r2_mean,r2_min,r2_max,n\n";
    for (const auto& [v, m] : rep.stats)
      for (const auto& [k, st] : m)
        out << csv::fmt(v) << ',' << k << ',' << csv::fmt(st.mean) << ',' << csv::fmt(st.min) << ',' << csv::fmt(st.max) << ','
            << st.n << '\n';
  }
  return rep;
}

// ---------------------------------------------------------------------------

struct ComparisonReport {
  ScenarioReport cg;
  ScenarioReport spsa;
  std::vector<int> budget;             // DNL evaluations
  std::vector<double> cg_normalized;   // L/L0 of the latest entry within the budget
  std::vector<double> spsa_normalized;
};

inline double normalized_at(const ConvergenceTrace& trace, int evaluations) {
  auto norm = trace.normalized();
  double v = norm.empty() ? 1.0 : norm.front();
  for (std::size_t i = 0; i < trace.rows.size(); ++i)
    if (trace.rows[i].dnl_evaluations <= evaluations) v = norm[i];
  return v;
}

// Both solvers on identical observations and start point. The PC-SPSA iteration count is
// derived from the estimator's epoch budget so both spend the same number of loadings.
inline ComparisonReport compare_solvers(const ScenarioConfig& base, bool write = true) {
  ComparisonReport rep;
  ScenarioConfig cg = base;
  if (cg.kind == ScenarioKind::pc_spsa) cg.kind = ScenarioKind::counts_only;
  cg.out_dir = base.out_dir + "/cg";
  ScenarioConfig sp = cg;
  sp.kind = ScenarioKind::pc_spsa;
  sp.out_dir = base.out_dir + "/pc_spsa";
  sp.spsa.iterations = std::max(0, (base.estimator.epochs - 1) / 2);
  // PC-SPSA runs on counts and times, so the CG side does too.
  cg.kind = ScenarioKind::counts_only;
  rep.cg = run_scenario(cg, write);
  rep.spsa = run_scenario(sp, write);
  int budget = std::max(rep.cg.dnl_evaluations, rep.spsa.dnl_evaluations);
  for (int b = 1; b <= budget; ++b) {
    rep.budget.push_back(b);
    rep.cg_normalized.push_back(normalized_at(rep.cg.trace, b));
    rep.spsa_normalized.push_back(normalized_at(rep.spsa.trace, b));
  }
  if (write) {
    std::ofstream out(base.out_dir + "/comparison.csv");
    out << "dnl_evaluations,cg,pc_spsa\n";
    for (std::size_t i = 0; i < rep.budget.size(); ++i)
      out << rep.budget[i] << ',' << csv::fmt(rep.cg_normalized[i]) << ',' << csv::fmt(rep.spsa_normalized[i]) << '\n';
    nlohmann::json j = {{"cg", {{"final_normalized", rep.cg.trace.normalized().back()}, {"metrics", metrics_json(rep.cg.metrics)}}},
                        {"pc_spsa",
                         {{"final_normalized", rep.spsa.trace.normalized().back()}, {"metrics", metrics_json(rep.spsa.metrics)}}},
                        {"dnl_budget", budget}};
    std::ofstream(base.out_dir + "/comparison.json") << j.dump(2) << '\n';
  }
  return rep;
}

}  // namespace dode
