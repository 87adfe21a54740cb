#pragma once

#include <Eigen/Sparse>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dode/aggregation.hpp"
#include "dode/dar.hpp"
#include "dode/dnl.hpp"
#include "dode/error.hpp"
#include "dode/route_choice.hpp"
#include "dode/tensor.hpp"

namespace dode {

struct LossWeights {
  double count = 1.0;
  double time = 1.0;
  double density = 1.0;

  void validate() const {
    if (count < 0 || time < 0 || density < 0) throw InvariantError("loss weights must be >= 0");
    if (count == 0 && time == 0 && density == 0) throw InvariantError("loss weights must not all be zero");
  }
};

// Unit balancing: counts weigh 1, the other streams are scaled by (mean count / mean value)^2.
// Streams without observations keep weight 1.
inline LossWeights default_weights(const ObservationSet& obs) {
  auto mean_abs = [](const StreamObservations& s) {
    return s.empty() ? 0.0 : s.values.cwiseAbs().sum() / static_cast<double>(s.size());
  };
  double mc = mean_abs(obs[Stream::count]);
  LossWeights w;
  if (mc > 0) {
    double mt = mean_abs(obs[Stream::time]), md = mean_abs(obs[Stream::density]);
    if (mt > 0) w.time = (mc / mt) * (mc / mt);
    if (md > 0) w.density = (mc / md) * (mc / md);
  }
  return w;
}

struct LossTerms {
  double total = 0.0;
  double count = 0.0;
  double time = 0.0;
  double density = 0.0;
};

namespace detail {

// obs - sum_c op_c * state_c, masked.
inline Eigen::VectorXd residual(const StreamObservations& so, const ClassTensor& state) {
  Eigen::VectorXd r = so.values;
  for (auto c : kAllClasses) {
    if (so.op[index_of(c)].cols() != state[c].size()) throw DimensionError("observation operator does not match state shape");
    r -= so.op[index_of(c)] * state.flat(c);
  }
  return r.cwiseProduct(so.mask);
}

inline void require_finite(const ClassTensor& t, const char* what) {
  if (!t.all_finite()) throw InvariantError(std::string("non-finite values in ") + what);
}

}  // namespace detail

// L = w1 |x^o - sum L x|^2 + w2 |h^o - sum M h|^2 + w3 |k^o l - sum I k l|^2.
inline LossTerms compute_loss(const LinkStateTensor& modeled, const ObservationSet& obs, const LossWeights& w) {
  detail::require_finite(modeled.inflow, "modeled inflow");
  detail::require_finite(modeled.travel_time, "modeled travel time");
  detail::require_finite(modeled.remaining, "modeled density");
  for (const auto& s : obs.streams)
    if (!s.values.allFinite()) throw InvariantError("non-finite observation values");
  LossTerms out;
  if (!obs[Stream::count].empty()) out.count = detail::residual(obs[Stream::count], modeled.inflow).squaredNorm();
  if (!obs[Stream::time].empty()) out.time = detail::residual(obs[Stream::time], modeled.travel_time).squaredNorm();
  if (!obs[Stream::density].empty()) out.density = detail::residual(obs[Stream::density], modeled.remaining).squaredNorm();
  out.total = w.count * out.count + w.time * out.time + w.density * out.density;
  return out;
}

enum class TimeGradientMode { off, on };

// Fluid point-queue travel time response of one link to its per-interval PCE inflow:
// h_t = free-flow + interval * (mean queue over t) / capacity-per-interval.
inline Eigen::VectorXd link_travel_time_response(const Eigen::VectorXd& inflow_pce, double capacity_per_interval,
                                                 double free_flow_time, double interval_length) {
  Eigen::VectorXd h(inflow_pce.size());
  double queue = 0.0;
  for (Eigen::Index t = 0; t < inflow_pce.size(); ++t) {
    double next = std::max(0.0, queue + inflow_pce[t] - capacity_per_interval);
    h[t] = free_flow_time + interval_length * 0.5 * (queue + next) / capacity_per_interval;
    queue = next;
  }
  return h;
}

// dh_t/dx_t per (class, link, interval) by central differences of the link response at
// the current inflow. Cross-interval sensitivities are ignored.
inline ClassTensor travel_time_sensitivity(const Network& net, const LinkStateTensor& states, const DnlConfig& cfg) {
  const int A = net.num_links();
  const int T = static_cast<int>(states.inflow.data[0].cols());
  ClassTensor out(A, T);
  const PerClass<double> pce{1.0, cfg.truck_pce};
  for (int a = 0; a < A; ++a) {
    const auto& link = net.links()[a];
    double cap = link.capacity_vph[0] * cfg.interval_length / 3600.0;
    Eigen::VectorXd x = states.inflow[VehicleClass::car].row(a).transpose() +
                        cfg.truck_pce * states.inflow[VehicleClass::truck].row(a).transpose();
    for (int t = 0; t < T; ++t) {
      double eps = std::max(1e-3, 1e-3 * x[t]);
      Eigen::VectorXd up = x, down = x;
      up[t] += eps;
      down[t] -= eps;
      double d = (link_travel_time_response(up, cap, 0.0, cfg.interval_length)[t] -
                  link_travel_time_response(down, cap, 0.0, cfg.interval_length)[t]) /
                 (2 * eps);
      for (auto c : kAllClasses) out[c](a, t) = pce[index_of(c)] * d;
    }
  }
  return out;
}

// The DNL linearized around one forward pass: link states are linear in demand through
// the frozen route proportions and DAR matrices. Loss and gradient are exact for this
// quadratic surrogate, and coincide with the simulated ones at the reference demand.
class LinearizedModel {
 public:
  LinearizedModel(const PathSet& paths, const ObservationSet& obs, LossWeights w, DarMatrixSet dar, RouteProportions p,
                  PathFlowTensor f_ref, LinkStateTensor states_ref, ClassTensor dh_dx, int density_delta,
                  TimeGradientMode mode)
      : paths_(&paths),
        obs_(&obs),
        w_(w),
        dar_(std::move(dar)),
        p_(std::move(p)),
        f_ref_(std::move(f_ref)),
        ref_(std::move(states_ref)),
        dh_dx_(std::move(dh_dx)),
        mode_(mode),
        H_(dar_.num_links, dar_.horizon_intervals) {
    dar_.require_compatible(f_ref_, "LinearizedModel");
    require_same_shape(p_, f_ref_, "LinearizedModel proportions");
    if (obs.num_links != dar_.num_links || obs.horizon_intervals != dar_.horizon_intervals)
      throw DimensionError("LinearizedModel: observation grid does not match DAR rows");
    if (density_delta > 0) smoothing_ = smoothing_operator(dar_.num_links, dar_.horizon_intervals, density_delta);
    for (auto c : kAllClasses) x_ref_.data[index_of(c)] = Eigen::VectorXd(dar_.arrival[index_of(c)] * f_ref_.flat(c));
  }

  const DarMatrixSet& dar() const { return dar_; }
  const RouteProportions& proportions() const { return p_; }

  PathFlowTensor path_flows(const DemandTensor& q) const { return assign_path_flows(*paths_, q, p_); }

  LinkStateTensor states(const DemandTensor& q) const {
    auto f = path_flows(q);
    LinkStateTensor s{ClassTensor(dar_.num_links, dar_.horizon_intervals), ref_.travel_time,
                      ClassTensor(dar_.num_links, dar_.horizon_intervals)};
    for (auto c : kAllClasses) {
      int ci = index_of(c);
      s.inflow.flat(c) = dar_.arrival[ci] * f.flat(c);
      s.remaining.flat(c) = density_map(dar_.change[ci] * f.flat(c));
      if (mode_ == TimeGradientMode::on) {
        Eigen::VectorXd dx = s.inflow.flat(c) - Eigen::Map<const Eigen::VectorXd>(x_ref_.data[ci].data(), x_ref_.data[ci].size());
        s.travel_time.flat(c) += dh_dx_.flat(c).cwiseProduct(dx);
      }
    }
    return s;
  }

  LossTerms loss(const DemandTensor& q) const { return compute_loss(states(q), *obs_, w_); }

  // dL/dq per class.
  DemandTensor gradient(const DemandTensor& q) const {
    auto s = states(q);
    Eigen::VectorXd rx, rh, rk;
    const auto& O = *obs_;
    if (!O[Stream::count].empty()) rx = detail::residual(O[Stream::count], s.inflow);
    if (!O[Stream::time].empty()) rh = detail::residual(O[Stream::time], s.travel_time);
    if (!O[Stream::density].empty()) rk = detail::residual(O[Stream::density], s.remaining);
    PathFlowTensor gf(PerClass<int>{dar_.num_paths[0], dar_.num_paths[1]}, dar_.demand_intervals);
    for (auto c : kAllClasses) {
      int ci = index_of(c);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(dar_.cols(c));
      if (rx.size()) {
        Eigen::VectorXd dx = -2.0 * w_.count * (O[Stream::count].op[ci].transpose() * rx);
        g += dar_.arrival[ci].transpose() * dx;
      }
      if (rh.size() && mode_ == TimeGradientMode::on) {
        Eigen::VectorXd dh = -2.0 * w_.time * (O[Stream::time].op[ci].transpose() * rh);
        g += dar_.arrival[ci].transpose() * Eigen::VectorXd(dh_dx_.flat(c).cwiseProduct(dh));
      }
      if (rk.size()) {
        Eigen::VectorXd dk = -2.0 * w_.density * (O[Stream::density].op[ci].transpose() * rk);
        g += dar_.change[ci].transpose() * density_map_transpose(dk);
      }
      gf.flat(c) = g;
    }
    return chain_to_demand(gf);
  }

  // Exact minimizer of the quadratic surrogate along -d, restricted to the segment that keeps
  // q - alpha d >= 0. Returns alpha.
  double line_search(const DemandTensor& q, const DemandTensor& d) const {
    const DemandTensor g = gradient(q);
    double slope = 0.0, alpha_max = std::numeric_limits<double>::infinity();
    for (int c = 0; c < kNumClasses; ++c) {
      slope += (g.data[c].array() * d.data[c].array()).sum();
      for (Eigen::Index i = 0; i < d.data[c].size(); ++i) {
        double di = d.data[c].data()[i];
        if (di > 0) alpha_max = std::min(alpha_max, q.data[c].data()[i] / di);
      }
    }
    if (!(slope > 0) || !(alpha_max > 0)) return 0.0;
    // L(q - a d) = L(q) - a slope + a^2 curv, probed at a feasible point
    double probe = std::isfinite(alpha_max) ? alpha_max : 1.0;
    DemandTensor q1 = q;
    for (int c = 0; c < kNumClasses; ++c) q1.data[c] = (q1.data[c] - probe * d.data[c]).cwiseMax(0.0);
    double curv = (loss(q1).total - loss(q).total + probe * slope) / (probe * probe);
    double alpha = curv > 0 ? slope / (2 * curv) : alpha_max;
    if (!std::isfinite(alpha)) return 0.0;
    return std::min(alpha, alpha_max);
  }

  // Direction for line_search: the gradient with components that would push a zero
  // coordinate negative removed.
  static DemandTensor feasible_direction(const DemandTensor& q, const DemandTensor& g) {
    DemandTensor d = g;
    for (int c = 0; c < kNumClasses; ++c)
      for (Eigen::Index i = 0; i < d.data[c].size(); ++i)
        if (q.data[c].data()[i] <= 0 && d.data[c].data()[i] > 0) d.data[c].data()[i] = 0.0;
    return d;
  }

  // g_q[od][t] = sum over the OD's paths of p[k][t] * g_f[k][t].
  DemandTensor chain_to_demand(const PathFlowTensor& gf) const {
    DemandTensor gq(paths_->num_ods(), dar_.demand_intervals);
    for (auto c : kAllClasses) {
      const auto& cp = paths_->of(c);
      for (int k = 0; k < cp.num_paths(); ++k) gq[c].row(cp.paths[k].od) += p_[c].row(k).cwiseProduct(gf[c].row(k));
    }
    return gq;
  }

 private:
  Eigen::VectorXd density_map(const Eigen::VectorXd& change) const {
    Eigen::VectorXd r = H_.apply(change);
    return smoothing_.size() ? Eigen::VectorXd(smoothing_ * r) : r;
  }

  Eigen::VectorXd density_map_transpose(const Eigen::VectorXd& g) const {
    Eigen::VectorXd v = smoothing_.size() ? Eigen::VectorXd(smoothing_.transpose() * g) : g;
    return H_.apply_transpose(v);
  }

  const PathSet* paths_;
  const ObservationSet* obs_;
  LossWeights w_;
  DarMatrixSet dar_;
  RouteProportions p_;
  PathFlowTensor f_ref_;
  LinkStateTensor ref_;
  ClassTensor dh_dx_;
  ClassTensor x_ref_;
  TimeGradientMode mode_;
  CumulationOperator H_;
  SparseMatrix smoothing_;
};

// Realized route proportions: realized path flow over OD demand, falling back to the
// pre-trip proportions where demand is zero.
inline RouteProportions effective_proportions(const PathSet& paths, const DemandTensor& q, const PathFlowTensor& realized,
                                              const RouteProportions& pretrip) {
  RouteProportions p = pretrip;
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    for (int k = 0; k < cp.num_paths(); ++k)
      for (int t = 0; t < q[c].cols(); ++t) {
        double d = q[c](cp.paths[k].od, t);
        if (d > 0) p[c](k, t) = realized[c](k, t) / d;
      }
  }
  return p;
}

// Gradient of the loss with respect to demand at the forward-pass point that produced `dar`.
inline DemandTensor compute_gradient(const Network& net, const PathSet& paths, const DemandTensor& q,
                                     const RouteProportions& p, const PathFlowTensor& f, const DarMatrixSet& dar,
                                     const LinkStateTensor& states, const ObservationSet& obs, const LossWeights& w,
                                     const DnlConfig& cfg, TimeGradientMode mode) {
  dar.require_compatible(f, "compute_gradient");
  ClassTensor dh = mode == TimeGradientMode::on ? travel_time_sensitivity(net, states, cfg)
                                                 : ClassTensor(dar.num_links, dar.horizon_intervals);
  LinearizedModel model(paths, obs, w, dar, p, f, states, std::move(dh), cfg.density_smoothing_delta, mode);
  return model.gradient(q);
}

// ---------------------------------------------------------------------------
// Solver.

enum class OptimizerKind { adam, fixed_step };
enum class RouteCostMode { free_flow, experienced };

struct EstimatorConfig {
  int epochs = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  PerClass<double> step_size{20.0, 2.0};  // veh per update at epoch 0
  double step_decay = 0.97;               // step size multiplied by this each epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  PerClass<double> init_scale{200.0, 20.0};  // q0 ~ Uniform(0, scale)
  unsigned long long init_seed = 1;
  unsigned long long dnl_seed = 1;
  double tolerance = 1e-4;  // relative loss change
  int patience = 5;         // epochs the change must stay below tolerance
  TimeGradientMode time_gradient = TimeGradientMode::on;
  RouteCostMode route_costs = RouteCostMode::free_flow;
  double divergence_threshold = 1e12;

  void validate() const {
    if (epochs < 1) throw InvariantError("EstimatorConfig: epochs must be >= 1");
    for (double s : step_size)
      if (!(s > 0)) throw InvariantError("EstimatorConfig: step sizes must be > 0");
    if (!(step_decay > 0)) throw InvariantError("EstimatorConfig: step_decay must be > 0");
    for (double s : init_scale)
      if (s < 0) throw InvariantError("EstimatorConfig: init scale must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const EstimatorConfig& c) {
  j = {{"epochs", c.epochs},
       {"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "fixed_step"},
       {"step_size", c.step_size},
       {"step_decay", c.step_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"init_scale", c.init_scale},
       {"init_seed", c.init_seed},
       {"dnl_seed", c.dnl_seed},
       {"tolerance", c.tolerance},
       {"patience", c.patience},
       {"time_gradient", c.time_gradient == TimeGradientMode::on ? "on" : "off"},
       {"route_costs", c.route_costs == RouteCostMode::free_flow ? "free_flow" : "experienced"},
       {"divergence_threshold", c.divergence_threshold}};
}

inline void from_json(const nlohmann::json& j, EstimatorConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("optimizer")) {
    auto s = j.at("optimizer").get<std::string>();
    if (s == "adam") c.optimizer = OptimizerKind::adam;
    else if (s == "fixed_step") c.optimizer = OptimizerKind::fixed_step;
    else throw ParseError("unknown optimizer '" + s + "'");
  }
  c.step_size = j.value("step_size", c.step_size);
  c.step_decay = j.value("step_decay", c.step_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.dnl_seed = j.value("dnl_seed", c.dnl_seed);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.patience = j.value("patience", c.patience);
  if (j.contains("time_gradient")) c.time_gradient = j.at("time_gradient").get<std::string>() == "off" ? TimeGradientMode::off : TimeGradientMode::on;
  if (j.contains("route_costs"))
    c.route_costs = j.at("route_costs").get<std::string>() == "experienced" ? RouteCostMode::experienced : RouteCostMode::free_flow;
  c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
}

struct TraceRow {
  int epoch = 0;
  LossTerms loss;
  double grad_norm = 0.0;
  int dnl_evaluations = 0;  // cumulative, including this entry
};

struct ConvergenceTrace {
  std::vector<TraceRow> rows;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.loss.total);
    return out;
  }

  // L_k / L_0.
  std::vector<double> normalized() const {
    std::vector<double> out;
    if (rows.empty()) return out;
    double l0 = rows.front().loss.total;
    for (const auto& r : rows) out.push_back(l0 > 0 ? r.loss.total / l0 : (r.loss.total == 0 ? 1.0 : r.loss.total));
    return out;
  }
};

struct DodeResult {
  DemandTensor estimate;  // best-loss iterate
  int best_epoch = 0;
  ConvergenceTrace trace;
  bool converged = false;
  bool aborted = false;
  std::string message;
  int dnl_evaluations = 0;
  std::vector<std::string> warnings;
};

inline DemandTensor random_demand(int num_ods, int intervals, const PerClass<double>& scale, unsigned long long seed,
                                  const PathSet* paths = nullptr) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DemandTensor q(num_ods, intervals);
  for (auto c : kAllClasses)
    for (int r = 0; r < num_ods; ++r)
      for (int t = 0; t < intervals; ++t) {
        double v = u(rng) * scale[index_of(c)];
        q[c](r, t) = paths && paths->is_dropped(r) ? 0.0 : v;
      }
  return q;
}

// One simulated forward pass: route choice, path flows, loading, DAR extraction.
struct ForwardPass {
  RouteProportions pretrip;
  RouteProportions effective;
  DnlResult dnl;
  DarMatrixSet dar;
  LossTerms loss;
};

inline ForwardPass forward_pass(const Network& net, const PathSet& paths, const DemandTensor& q, const ClassTensor& path_costs,
                                const ObservationSet& obs, const LossWeights& w, const DnlConfig& cfg,
                                unsigned long long seed) {
  ForwardPass fp;
  fp.pretrip = route_choice(paths, path_costs, cfg.logit_scale);
  auto f = assign_path_flows(paths, q, fp.pretrip);
  fp.dnl = run_dnl(net, paths, f, cfg, seed);
  fp.effective = effective_proportions(paths, q, fp.dnl.realized_flow, fp.pretrip);
  fp.dar = extract_dar(fp.dnl.curves, fp.dnl.realized_flow);
  fp.loss = compute_loss(fp.dnl.states, obs, w);
  return fp;
}

// Experienced path costs: sum of the link travel times at each departure interval.
inline ClassTensor experienced_path_costs(const PathSet& paths, const LinkStateTensor& states, int intervals) {
  ClassTensor costs(PerClass<int>{paths.by_class[0].num_paths(), paths.by_class[1].num_paths()}, intervals);
  for (auto c : kAllClasses) {
    const auto& cp = paths.of(c);
    for (int k = 0; k < cp.num_paths(); ++k)
      for (int t = 0; t < intervals; ++t)
        for (int l : cp.paths[k].links) costs[c](k, t) += states.travel_time[c](l, t);
  }
  return costs;
}

// Computational-graph DODE: alternate forward passes (route choice, loading, DAR
// extraction) with exact backward passes through the linearized model, projecting the
// demand iterate onto q >= 0 after every update.
inline DodeResult solve_dode(const Network& net, const PathSet& paths, const ObservationSet& obs, const LossWeights& w,
                             const EstimatorConfig& est, const DnlConfig& cfg,
                             std::optional<DemandTensor> initial = std::nullopt,
                             const std::function<void(int, const DemandTensor&)>& on_iterate = {}) {
  est.validate();
  cfg.validate();
  w.validate();
  if (obs.total_rows() == 0) throw InvariantError("solve_dode: no observations");
  const int T = cfg.demand_intervals;
  DemandTensor q = initial ? *initial : random_demand(paths.num_ods(), T, est.init_scale, est.init_seed, &paths);
  if (q.data[0].rows() != paths.num_ods() || q.data[0].cols() != T) throw DimensionError("solve_dode: initial demand shape");
  if (q.min_coeff() < 0) throw InvariantError("solve_dode: negative initial demand");

  DodeResult out;
  out.estimate = q;
  double best = std::numeric_limits<double>::infinity();
  DemandTensor m(paths.num_ods(), T), v(paths.num_ods(), T);
  std::optional<DarMatrixSet> cache;
  ClassTensor costs = free_flow_path_costs(paths, T);
  std::vector<double> rel_changes;

  for (int epoch = 0; epoch < est.epochs; ++epoch) {
    if (on_iterate) on_iterate(epoch, q);
    auto fp = forward_pass(net, paths, q, costs, obs, w, cfg, est.dnl_seed);
    ++out.dnl_evaluations;
    if (!fp.dnl.cleared && out.warnings.empty()) out.warnings.push_back(fp.dnl.warnings.front());
    if (cache) fp.dar = fill_missing_columns(fp.dar, *cache, fp.dnl.realized_flow);
    cache = fp.dar;

    if (!std::isfinite(fp.loss.total) || fp.loss.total > est.divergence_threshold) {
      out.trace.rows.push_back({epoch, fp.loss, 0.0, out.dnl_evaluations});
      out.aborted = true;
      out.message = "diverged at epoch " + std::to_string(epoch);
      return out;
    }
    if (fp.loss.total < best) {
      best = fp.loss.total;
      out.estimate = q;
      out.best_epoch = epoch;
    }

    ClassTensor dh = est.time_gradient == TimeGradientMode::on ? travel_time_sensitivity(net, fp.dnl.states, cfg)
                                                               : ClassTensor(net.num_links(), cfg.horizon_intervals);
    LinearizedModel model(paths, obs, w, fp.dar, fp.effective, fp.dnl.realized_flow, fp.dnl.states, std::move(dh),
                          cfg.density_smoothing_delta, est.time_gradient);
    DemandTensor g = model.gradient(q);
    double gnorm = std::sqrt(g.data[0].squaredNorm() + g.data[1].squaredNorm());
    out.trace.rows.push_back({epoch, fp.loss, gnorm, out.dnl_evaluations});

    if (epoch > 0) {
      double prev = out.trace.rows[epoch - 1].loss.total;
      rel_changes.push_back(std::abs(prev - fp.loss.total) / std::max(prev, 1e-300));
      int n = static_cast<int>(rel_changes.size());
      if (n >= est.patience) {
        bool flat = true;
        for (int i = n - est.patience; i < n; ++i) flat = flat && rel_changes[i] < est.tolerance;
        if (flat) {
          out.converged = true;
          break;
        }
      }
    }
    if (fp.loss.total == 0.0) {
      out.converged = true;
      break;
    }
    if (epoch + 1 == est.epochs) break;

    double decay = std::pow(est.step_decay, epoch);
    for (auto c : kAllClasses) {
      double lr = est.step_size[index_of(c)] * decay;
      auto& qc = q[c];
      const auto& gc = g[c];
      if (est.optimizer == OptimizerKind::adam) {
        m[c] = est.beta1 * m[c] + (1 - est.beta1) * gc;
        v[c] = est.beta2 * v[c] + (1 - est.beta2) * gc.cwiseProduct(gc);
        double bc1 = 1 - std::pow(est.beta1, epoch + 1), bc2 = 1 - std::pow(est.beta2, epoch + 1);
        RowMatrix step = (m[c] / bc1).array() / ((v[c] / bc2).array().sqrt() + 1e-8);
        qc -= lr * step;
      } else {
        qc -= lr * gc;
      }
      qc = qc.cwiseMax(0.0);
      for (int r : paths.dropped_ods) qc.row(r).setZero();
    }
    if (est.route_costs == RouteCostMode::experienced) costs = experienced_path_costs(paths, fp.dnl.states, T);
  }
  return out;
}

}  // namespace dode
