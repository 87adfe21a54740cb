#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dode/dode.hpp"

namespace {

using namespace dode;

struct Overrides {
  std::string config;
  std::optional<unsigned long long> seed;
  std::optional<std::string> out;
  std::optional<int> epochs;
  std::optional<std::string> kind;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "scenario file (JSON); a summary.json from an earlier run also works");
  cmd->add_option("--seed", o.seed, "scenario seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--epochs", o.epochs, "estimator epoch budget");
  cmd->add_option("--kind", o.kind, "counts_only | counts_plus_density | pc_spsa");
}

ScenarioConfig resolve(const Overrides& o) {
  ScenarioConfig cfg = o.config.empty() ? ScenarioConfig{} : load_scenario_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.epochs) {
    cfg.estimator.epochs = *o.epochs;
    cfg.spsa.iterations = std::max(0, (*o.epochs - 1) / 2);
  }
  if (o.kind) cfg.kind = parse_scenario(*o.kind);
  return cfg;
}

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void print_metrics(const ScenarioReport& r) {
  std::cout << "scenario " << scenario_name(r.config.kind) << "  seed " << r.config.seed << "  hash " << r.hash << '\n';
  for (const auto& [stream, subs] : r.metrics) {
    std::cout << "  " << stream;
    for (const auto& [sub, m] : subs) std::cout << "  " << sub << " r2=" << (m.r2 ? short_fmt(*m.r2) : "null") << " mae=" << short_fmt(m.mae);
    std::cout << '\n';
  }
  std::cout << "  demand mae car=" << short_fmt(r.demand_mae[0]) << " truck=" << short_fmt(r.demand_mae[1]) << '\n';
  std::cout << "  loadings " << r.dnl_evaluations << "  runtime " << short_fmt(r.runtime_s) << " s\n";
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  for (const auto& v : csv::split(s, ',')) out.push_back(csv::to_double(v, "value"));
  return out;
}

int cmd_validate(const std::string& network, const std::string& od, const std::string& config) {
  if (!config.empty()) {
    auto cfg = load_scenario_config(config);
    auto s = prepare_scenario(cfg);
    std::cout << "config ok: " << s.network.num_links() << " links, " << s.network.num_od_pairs() << " OD pairs, "
              << s.obs.total_rows() << " observation rows\n";
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
    return 0;
  }
  auto table = csv::read_file(network);
  auto links = parse_links(table, network);
  Network net(std::move(links), od.empty() ? std::vector<OdPair>{} : load_od_pairs(od));
  auto report = validate_network(net);
  for (const auto& v : report)
    std::cout << v.code << (v.link_id >= 0 ? " link " + std::to_string(v.link_id) : std::string()) << ": " << v.message << '\n';
  if (report.empty()) std::cout << "ok: " << net.num_links() << " links, " << net.num_od_pairs() << " OD pairs\n";
  return report.empty() ? 0 : 1;
}

int cmd_generate(const std::string& what, const std::string& out, unsigned long long seed, int rows, int cols, int intervals) {
  if (what != "grid" && what != "toy") throw ParseError("gen-synthetic: unknown network '" + what + "'");
  std::filesystem::create_directories(out);
  auto syn = what == "grid" ? grid_network(rows, cols, seed) : toy_network();
  save_network(syn.network, out + "/network.csv", out + "/od.csv");
  save_node_coordinates(syn.coordinates, out + "/nodes.csv");
  ScenarioConfig defaults;
  auto profile = defaults.demand;
  if (what == "grid") profile.car_min = 10, profile.car_max = 40;
  auto q = peaked_demand(syn.network.num_od_pairs(), intervals, profile, seed);
  write_demand(syn.network, q, out + "/demand.csv");
  save_path_file(syn.network, build_path_set(syn.network, defaults.k_paths), out + "/paths.csv");
  std::cout << "wrote " << syn.network.num_links() << " links, " << syn.network.num_od_pairs() << " OD pairs to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-class dynamic OD demand estimation"};
  app.require_subcommand(1);

  Overrides run_o, sens_o, cmp_o;
  auto* run = app.add_subcommand("run", "run one scenario and write trace, estimate, metrics and summary");
  add_overrides(run, run_o);

  auto* sens = app.add_subcommand("sensitivity", "repeat a scenario over an error-level or snapshot-frequency axis");
  add_overrides(sens, sens_o);
  std::string axis = "error_level", values = "0.1,0.2";
  int reps = 5;
  unsigned workers = 0;
  sens->add_option("--axis", axis, "error_level | snapshot_frequency");
  sens->add_option("--values", values, "comma-separated axis values (noise fraction, or seconds between snapshots)");
  sens->add_option("--reps", reps, "replications per value");
  sens->add_option("--workers", workers, "parallel runs (0 = hardware threads)");

  auto* cmp = app.add_subcommand("compare", "gradient solver against PC-SPSA at equal loading budgets");
  add_overrides(cmp, cmp_o);

  std::string v_net, v_od, v_cfg;
  auto* val = app.add_subcommand("validate", "check a network file or a scenario config");
  val->add_option("--network", v_net, "network CSV");
  val->add_option("--od", v_od, "OD CSV");
  val->add_option("--config", v_cfg, "scenario config");

  std::string g_what = "toy", g_out = "synthetic";
  unsigned long long g_seed = 42;
  int g_rows = 4, g_cols = 4, g_intervals = 10;
  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic network, nodes, paths and demand");
  gen->add_option("network", g_what, "toy | grid");
  gen->add_option("--out", g_out);
  gen->add_option("--seed", g_seed);
  gen->add_option("--rows", g_rows);
  gen->add_option("--cols", g_cols);
  gen->add_option("--intervals", g_intervals, "demand intervals");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto r = run_scenario(resolve(run_o));
      print_metrics(r);
      std::cout << "artifacts in " << r.config.out_dir << '\n';
    } else if (*sens) {
      auto cfg = resolve(sens_o);
      if (cfg.kind == ScenarioKind::counts_only && parse_axis(axis) == SensitivityAxis::snapshot_frequency)
        std::cerr << "warning: snapshot_frequency has no effect without the density stream\n";
      auto rep = sensitivity_suite(cfg, parse_axis(axis), parse_values(values), reps, true, workers);
      for (const auto& [v, m] : rep.stats)
        for (const auto& [k, st] : m)
          std::cout << csv::fmt(v) << ' ' << k << " r2 mean=" << csv::fmt(st.mean) << " min=" << csv::fmt(st.min)
                    << " max=" << csv::fmt(st.max) << '\n';
      std::cout << rep.runs.size() << " runs, report in " << cfg.out_dir << "/sensitivity.csv\n";
    } else if (*cmp) {
      auto cfg = resolve(cmp_o);
      auto rep = compare_solvers(cfg);
      std::cout << "loadings " << rep.budget.size() << "  final L/L0  cg=" << csv::fmt(rep.cg_normalized.back())
                << "  pc_spsa=" << csv::fmt(rep.spsa_normalized.back()) << '\n';
    } else if (*val) {
      if (v_net.empty() && v_cfg.empty()) throw Error("validate: pass --network or --config");
      return cmd_validate(v_net, v_od, v_cfg);
    } else if (*gen) {
      return cmd_generate(g_what, g_out, g_seed, g_rows, g_cols, g_intervals);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
