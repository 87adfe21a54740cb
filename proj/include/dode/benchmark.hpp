#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "dode/estimator.hpp"

namespace dode {

struct OdSampleSet {
  std::vector<DemandTensor> samples;  // samples[0] is the template
};

// The template followed by n perturbed copies, each cell scaled by Uniform(1-p, 1+p).
inline OdSampleSet generate_od_samples(const DemandTensor& tmpl, int n, double perturbation, unsigned long long seed) {
  if (n < 0) throw InvariantError("generate_od_samples: n must be >= 0");
  if (perturbation < 0) throw InvariantError("generate_od_samples: perturbation must be >= 0");
  OdSampleSet set;
  set.samples.reserve(static_cast<std::size_t>(n) + 1);
  set.samples.push_back(tmpl);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1.0 - perturbation, 1.0 + perturbation);
  for (int i = 0; i < n; ++i) {
    DemandTensor s = tmpl;
    if (perturbation > 0)
      for (auto& m : s.data)
        for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = std::max(0.0, m.data()[j] * u(rng));
    set.samples.push_back(std::move(s));
  }
  return set;
}

// Principal components of one class's interval-level OD vectors.
struct ClassBasis {
  Eigen::VectorXd mean;          // n_od
  Eigen::MatrixXd components;    // n_od x r, orthonormal columns
  Eigen::VectorXd eigenvalues;   // r, descending
  double explained = 0.0;        // retained share of total variance

  int rank() const { return static_cast<int>(components.cols()); }
};

struct PcBasis {
  PerClass<ClassBasis> by_class;

  const ClassBasis& operator[](VehicleClass c) const { return by_class[index_of(c)]; }
  ClassBasis& operator[](VehicleClass c) { return by_class[index_of(c)]; }
};

inline ClassBasis fit_class_pca(const Eigen::MatrixXd& X, double variance_threshold) {
  // X: samples x dimension
  ClassBasis b;
  b.mean = X.colwise().mean().transpose();
  Eigen::MatrixXd C = X.rowwise() - b.mean.transpose();
  Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(X.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw SolverError("fit_pca: eigendecomposition failed");
  Eigen::VectorXd vals = es.eigenvalues().reverse().cwiseMax(0.0);
  Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
  double total = vals.sum();
  if (!(total > 1e-12 * std::max(1.0, b.mean.squaredNorm()))) throw InvariantError("fit_pca: samples have zero variance");
  int r = 0;
  double acc = 0.0;
  while (r < vals.size() && acc < variance_threshold * total - 1e-12 * total) acc += vals[r++];
  r = std::max(r, 1);
  b.components = vecs.leftCols(r);
  b.eigenvalues = vals.head(r);
  b.explained = acc / total;
  for (int j = 0; j < r; ++j) {
    Eigen::Index i;
    b.components.col(j).cwiseAbs().maxCoeff(&i);
    if (b.components(i, j) < 0) b.components.col(j) *= -1.0;
  }
  return b;
}

// Per-class PCA over interval-level OD vectors: every (sample, interval) pair is one
// observation of dimension n_od.
inline PcBasis fit_pca(const OdSampleSet& set, double variance_threshold) {
  if (set.samples.size() < 2) throw InvariantError("fit_pca: need at least 2 samples");
  if (!(variance_threshold > 0 && variance_threshold <= 1)) throw InvariantError("fit_pca: threshold must be in (0, 1]");
  PcBasis basis;
  for (auto c : kAllClasses) {
    const auto& first = set.samples.front()[c];
    const Eigen::Index n_od = first.rows(), T = first.cols();
    Eigen::MatrixXd X(static_cast<Eigen::Index>(set.samples.size()) * T, n_od);
    for (std::size_t s = 0; s < set.samples.size(); ++s) {
      const auto& m = set.samples[s][c];
      if (m.rows() != n_od || m.cols() != T) throw DimensionError("fit_pca: samples differ in shape");
      for (Eigen::Index t = 0; t < T; ++t) X.row(static_cast<Eigen::Index>(s) * T + t) = m.col(t).transpose();
    }
    basis[c] = fit_class_pca(X, variance_threshold);
  }
  return basis;
}

// Coordinates z[c] (rank x intervals) of q in the basis.
inline ClassTensor project_to_basis(const PcBasis& basis, const DemandTensor& q) {
  ClassTensor z(PerClass<int>{basis.by_class[0].rank(), basis.by_class[1].rank()}, static_cast<int>(q.data[0].cols()));
  for (auto c : kAllClasses) {
    const auto& b = basis[c];
    if (q[c].rows() != b.mean.size()) throw DimensionError("project_to_basis: OD dimension mismatch");
    z[c] = (b.components.transpose() * (q[c].colwise() - b.mean)).eval();
  }
  return z;
}

// q(z) = max(0, mean + B z).
inline DemandTensor demand_from_basis(const PcBasis& basis, const ClassTensor& z) {
  DemandTensor q(PerClass<int>{static_cast<int>(basis.by_class[0].mean.size()), static_cast<int>(basis.by_class[1].mean.size())},
                 static_cast<int>(z.data[0].cols()));
  for (auto c : kAllClasses) {
    const auto& b = basis[c];
    if (z[c].rows() != b.rank()) throw DimensionError("demand_from_basis: coordinate rank mismatch");
    q[c] = ((b.components * z[c]).colwise() + b.mean).cwiseMax(0.0);
  }
  return q;
}

struct SpsaConfig {
  int iterations = 50;
  double alpha = 0.602;
  double gamma = 0.101;
  double stability_fraction = 0.1;  // A as a share of the iteration budget
  double step = 0.5;                // first-iteration max move, in component standard deviations
  double perturbation = 0.2;        // c, in component standard deviations
  unsigned long long seed = 1;
  unsigned long long dnl_seed = 1;
  double variance_threshold = 0.95;
  int num_samples = 299;
  double sample_perturbation = 0.3;

  void validate() const {
    if (iterations < 0) throw InvariantError("SpsaConfig: iterations must be >= 0");
    if (!(step > 0) || !(perturbation > 0)) throw InvariantError("SpsaConfig: step and perturbation must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const SpsaConfig& c) {
  j = {{"iterations", c.iterations}, {"alpha", c.alpha}, {"gamma", c.gamma}, {"stability_fraction", c.stability_fraction},
       {"step", c.step}, {"perturbation", c.perturbation}, {"seed", c.seed}, {"dnl_seed", c.dnl_seed},
       {"variance_threshold", c.variance_threshold}, {"num_samples", c.num_samples},
       {"sample_perturbation", c.sample_perturbation}};
}

inline void from_json(const nlohmann::json& j, SpsaConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.alpha = j.value("alpha", c.alpha);
  c.gamma = j.value("gamma", c.gamma);
  c.stability_fraction = j.value("stability_fraction", c.stability_fraction);
  c.step = j.value("step", c.step);
  c.perturbation = j.value("perturbation", c.perturbation);
  c.seed = j.value("seed", c.seed);
  c.dnl_seed = j.value("dnl_seed", c.dnl_seed);
  c.variance_threshold = j.value("variance_threshold", c.variance_threshold);
  c.num_samples = j.value("num_samples", c.num_samples);
  c.sample_perturbation = j.value("sample_perturbation", c.sample_perturbation);
}

// Fills every cell with an independent +-1 draw.
inline void draw_perturbation(ClassTensor& delta, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  for (auto& m : delta.data)
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = coin(rng) ? 1.0 : -1.0;
}

// Loss after a full loading of q under pre-trip route choice.
inline LossTerms evaluate_demand(const Network& net, const PathSet& paths, const DemandTensor& q, const ObservationSet& obs,
                                 const LossWeights& w, const DnlConfig& cfg, unsigned long long seed) {
  auto p = route_choice(paths, free_flow_path_costs(paths, cfg.demand_intervals), cfg.logit_scale);
  auto res = run_dnl(net, paths, assign_path_flows(paths, q, p), cfg, seed);
  return compute_loss(res.states, obs, w);
}

struct SpsaResult {
  DemandTensor estimate;
  ClassTensor z;
  ConvergenceTrace trace;
  int dnl_evaluations = 0;
  bool aborted = false;
  std::string message;
};

// SPSA over whitened PC coordinates u = z / sqrt(eigenvalue). Trace row 0 is the loss at
// the start point; row k >= 1 is the mean of the two probe losses of iteration k.
inline SpsaResult solve_pc_spsa(const Network& net, const PathSet& paths, const ObservationSet& obs, const LossWeights& w,
                                const PcBasis& basis, const SpsaConfig& sc, const DnlConfig& cfg, const DemandTensor& initial) {
  sc.validate();
  cfg.validate();
  SpsaResult out;
  PerClass<Eigen::VectorXd> sd;
  for (auto c : kAllClasses) sd[index_of(c)] = basis[c].eigenvalues.cwiseMax(1e-12).cwiseSqrt();

  auto to_z = [&](const ClassTensor& u) {
    ClassTensor z = u;
    for (auto c : kAllClasses) z[c] = (u[c].array().colwise() * sd[index_of(c)].array()).matrix();
    return z;
  };
  auto loss_at = [&](const ClassTensor& u) {
    ++out.dnl_evaluations;
    auto q = demand_from_basis(basis, to_z(u));
    for (int r : paths.dropped_ods)
      for (auto c : kAllClasses) q[c].row(r).setZero();
    return evaluate_demand(net, paths, q, obs, w, cfg, sc.dnl_seed);
  };

  ClassTensor u = project_to_basis(basis, initial);
  for (auto c : kAllClasses) u[c] = (u[c].array().colwise() / sd[index_of(c)].array()).matrix();
  auto l0 = loss_at(u);
  out.trace.rows.push_back({0, l0, 0.0, out.dnl_evaluations});
  if (!std::isfinite(l0.total)) {
    out.aborted = true;
    out.message = "non-finite objective at start";
    out.z = to_z(u);
    out.estimate = demand_from_basis(basis, out.z);
    return out;
  }

  std::mt19937_64 rng(sc.seed);
  const double A = sc.stability_fraction * sc.iterations;
  double a = sc.step * std::pow(A + 1.0, sc.alpha);
  ClassTensor best_u = u;
  double best = l0.total;

  for (int k = 1; k <= sc.iterations; ++k) {
    double ak = a / std::pow(k + A, sc.alpha);
    double ck = sc.perturbation / std::pow(static_cast<double>(k), sc.gamma);
    ClassTensor delta = u;
    draw_perturbation(delta, rng);
    ClassTensor up = u, down = u;
    for (int c = 0; c < kNumClasses; ++c) {
      up.data[c] += ck * delta.data[c];
      down.data[c] -= ck * delta.data[c];
    }
    int before = out.dnl_evaluations;
    auto lp = loss_at(up);
    auto lm = loss_at(down);
    if (out.dnl_evaluations - before != 2) throw SolverError("solve_pc_spsa: expected two loadings per iteration");
    LossTerms mean{0.5 * (lp.total + lm.total), 0.5 * (lp.count + lm.count), 0.5 * (lp.time + lm.time),
                   0.5 * (lp.density + lm.density)};
    if (!std::isfinite(lp.total) || !std::isfinite(lm.total)) {
      out.trace.rows.push_back({k, mean, 0.0, out.dnl_evaluations});
      out.aborted = true;
      out.message = "non-finite objective at iteration " + std::to_string(k);
      break;
    }
    double diff = (lp.total - lm.total) / (2.0 * ck);
    ClassTensor ghat = delta;
    double gmax = 0.0, gnorm2 = 0.0;
    for (auto& m : ghat.data) {
      m = diff * m.cwiseInverse();
      gmax = std::max(gmax, m.cwiseAbs().maxCoeff());
      gnorm2 += m.squaredNorm();
    }
    if (k == 1 && gmax > 0) a /= gmax, ak /= gmax;
    for (int c = 0; c < kNumClasses; ++c) u.data[c] -= ak * ghat.data[c];
    out.trace.rows.push_back({k, mean, std::sqrt(gnorm2), out.dnl_evaluations});
    if (lp.total < best) best = lp.total, best_u = up;
    if (lm.total < best) best = lm.total, best_u = down;
  }
  out.z = to_z(best_u);
  out.estimate = demand_from_basis(basis, out.z);
  for (int r : paths.dropped_ods)
    for (auto c : kAllClasses) out.estimate[c].row(r).setZero();
  return out;
}

}  // namespace dode
