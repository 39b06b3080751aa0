#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "strlab/constants.hpp"
#include "strlab/dataset.hpp"
#include "strlab/mdp.hpp"
#include "strlab/rng.hpp"

namespace strlab {

/**
 * Linear features over state-action pairs, one dense row per pair.
 * Evaluation with these features covers the spectrum from exact tabular
 * estimation (one_hot) to deliberately lossy approximation
 * (state_aggregation, random_projection).
 */
struct FeatureMap {
  int n_states = 0;
  int n_actions = 0;
  int n_features = 0;
  std::vector<double> phi;  // [(s * n_actions + a) * n_features + j]

  const double* row(int s, int a) const {
    return phi.data() + (size_t(s) * n_actions + a) * n_features;
  }
  double* row(int s, int a) {
    return phi.data() + (size_t(s) * n_actions + a) * n_features;
  }

  /** One indicator feature per pair; linear regression becomes tabular. */
  static FeatureMap one_hot(int n_states, int n_actions) {
    FeatureMap f;
    f.n_states = n_states;
    f.n_actions = n_actions;
    f.n_features = n_states * n_actions;
    f.phi.assign(size_t(n_states) * n_actions * f.n_features, 0.0);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a)
        f.row(s, a)[size_t(s) * n_actions + a] = 1.0;
    return f;
  }

  /**
   * States sharing a group id share parameters; one indicator per
   * (group, action). Group ids must be dense in [0, max_id].
   */
  static FeatureMap state_aggregation(int n_actions,
                                       const std::vector<int>& group_of_state) {
    if (group_of_state.empty())
      detail::fail("state_aggregation: empty group map");
    int n_groups = 0;
    for (int g : group_of_state) {
      if (g < 0) detail::fail("state_aggregation: negative group id");
      n_groups = std::max(n_groups, g + 1);
    }
    FeatureMap f;
    f.n_states = int(group_of_state.size());
    f.n_actions = n_actions;
    f.n_features = n_groups * n_actions;
    f.phi.assign(size_t(f.n_states) * n_actions * f.n_features, 0.0);
    for (int s = 0; s < f.n_states; ++s)
      for (int a = 0; a < n_actions; ++a)
        f.row(s, a)[size_t(group_of_state[size_t(s)]) * n_actions + a] = 1.0;
    return f;
  }

  /** Gaussian random features, each pair's row normalized to unit length. */
  static FeatureMap random_projection(int n_states, int n_actions,
                                      int n_features, uint64_t seed) {
    if (n_features < 1)
      detail::fail("random_projection: n_features must be positive");
    FeatureMap f;
    f.n_states = n_states;
    f.n_actions = n_actions;
    f.n_features = n_features;
    f.phi.assign(size_t(n_states) * n_actions * n_features, 0.0);
    CounterRng rng(seed, /*stream=*/7);
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        double* r = f.row(s, a);
        double norm2 = 0.0;
        for (int j = 0; j < n_features; ++j) {
          r[j] = rng.next_normal();
          norm2 += r[j] * r[j];
        }
        double inv = 1.0 / std::sqrt(norm2);
        for (int j = 0; j < n_features; ++j) r[j] *= inv;
      }
    return f;
  }
};

struct FqeConfig {
  int n_iterations = 50;
  double ridge = 0.0;       // zero demands full-rank coverage
  double v_max = 1.0;       // clip range for regression targets
  bool clip_targets = true;
};

struct FqeResult {
  QTable q;                  // phi(s, a) . theta for every pair
  std::vector<double> theta;
};

/**
 * Fitted evaluation of a policy from a fixed dataset: K rounds of linear
 * least squares onto bootstrapped targets r + gamma * E_pi Q(s'). Episode
 * boundaries in the data mark collection restarts, not value-semantics
 * terminals (absorbing states are explicit in the models here), so
 * targets always bootstrap from the recorded next state. Targets are
 * clipped to [0, v_max] when clip_targets is set; with zero ridge the
 * normal matrix must have full rank, otherwise the fit is ill-posed and
 * an exception names the deficiency.
 */
inline FqeResult fqe_run(const TransitionDataset& d, const TabularPolicy& pi,
                         const FeatureMap& features, const FqeConfig& cfg) {
  detail::check_dataset(d);
  validate_policy(pi, d.n_states, d.n_actions);
  if (features.n_states != d.n_states || features.n_actions != d.n_actions)
    detail::fail("fqe_run: feature map shape mismatch");
  if (cfg.n_iterations < 0)
    detail::fail("fqe_run: n_iterations must be non-negative");
  if (cfg.ridge < 0.0) detail::fail("fqe_run: ridge must be non-negative");
  if (cfg.clip_targets && !(cfg.v_max > 0.0))
    detail::fail("fqe_run: v_max must be positive when clipping");
  const int S = d.n_states, A = d.n_actions, F = features.n_features;

  FqeResult out;
  out.theta.assign(size_t(F), 0.0);
  out.q = QTable::zeros(S, A);
  if (cfg.n_iterations == 0) return out;

  // The normal matrix depends only on visited pairs and their counts, so
  // it is assembled and factored once.
  std::vector<long> counts = pair_counts(d);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(F, F);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      long n = counts[size_t(s) * A + a];
      if (n == 0) continue;
      Eigen::Map<const Eigen::VectorXd> f(features.row(s, a), F);
      gram.noalias() += double(n) * f * f.transpose();
    }
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  if (cfg.ridge == 0.0) {
    lu.compute(gram);
    if (lu.rank() < F)
      detail::fail("fqe_run: normal matrix rank " +
                   std::to_string(lu.rank()) + " < " + std::to_string(F) +
                   "; add ridge or cover more pairs");
  } else {
    gram.diagonal().array() += cfg.ridge;
    ldlt.compute(gram);
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(F);
  std::vector<double> q_pair(size_t(S) * A, 0.0);
  std::vector<double> v_state(size_t(S), 0.0);
  std::vector<double> y_pair(size_t(S) * A, 0.0);
  for (int k = 0; k < cfg.n_iterations; ++k) {
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        Eigen::Map<const Eigen::VectorXd> f(features.row(s, a), F);
        q_pair[size_t(s) * A + a] = f.dot(theta);
        v += pi(s, a) * q_pair[size_t(s) * A + a];
      }
      v_state[size_t(s)] = v;
    }
    std::fill(y_pair.begin(), y_pair.end(), 0.0);
    for (const Transition& t : d.records) {
      double y = t.r + d.gamma * v_state[size_t(t.s_next)];
      if (cfg.clip_targets) y = std::min(cfg.v_max, std::max(0.0, y));
      y_pair[size_t(t.s) * A + t.a] += y;
    }
    Eigen::VectorXd b = Eigen::VectorXd::Zero(F);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        double y = y_pair[size_t(s) * A + a];
        if (y == 0.0 && counts[size_t(s) * A + a] == 0) continue;
        Eigen::Map<const Eigen::VectorXd> f(features.row(s, a), F);
        b.noalias() += y * f;
      }
    if (cfg.ridge == 0.0)
      theta = lu.solve(b);
    else
      theta = ldlt.solve(b);
  }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      Eigen::Map<const Eigen::VectorXd> f(features.row(s, a), F);
      out.q.at(s, a) = f.dot(theta);
    }
  std::copy(theta.data(), theta.data() + F, out.theta.begin());
  return out;
}

/**
 * Occupancy-weighted L1 distance between two Q tables: pairs the policy
 * never reaches contribute nothing.
 */
inline double fqe_error(const QTable& q_hat, const QTable& q_ref,
                        const std::vector<double>& rho) {
  if (q_hat.n_states != q_ref.n_states || q_hat.n_actions != q_ref.n_actions)
    detail::fail("fqe_error: shape mismatch");
  if (rho.size() != q_hat.values.size())
    detail::fail("fqe_error: weight vector size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < rho.size(); ++i)
    acc += rho[i] * std::abs(q_hat.values[i] - q_ref.values[i]);
  return acc;
}

/**
 * Sample-complexity part of the evaluation error guarantee:
 * 44 v_max^2 log(f_size * k / delta) / n plus 20 times the inherent
 * approximation error of the function class.
 */
inline double fqe_generalization_term(double v_max, double f_size, int k,
                                      double delta, long n_samples,
                                      double eps_complete) {
  if (k < 1) detail::fail("fqe_generalization_term: k must be at least 1");
  if (!(v_max > 0.0) || !(f_size >= 1.0) || !(delta > 0.0 && delta < 1.0) ||
      n_samples < 1 || eps_complete < 0.0)
    detail::fail("fqe_generalization_term: invalid parameters");
  return 44.0 * v_max * v_max * std::log(f_size * double(k) / delta) /
             double(n_samples) +
         20.0 * eps_complete;
}

/**
 * Finite-sample error ceiling for K rounds of fitted evaluation:
 * ((1 - gamma^K) / (1 - gamma)) * sqrt(C * eps_gb) + gamma^K * v_max.
 * K = 0 keeps the initialization error v_max and nothing else.
 */
inline double fqe_bound(int k, double gamma, double v_max,
                        double concentrability, double eps_gb) {
  if (k < 0) detail::fail("fqe_bound: k must be non-negative");
  if (!(gamma >= 0.0 && gamma < 1.0))
    detail::fail("fqe_bound: gamma must lie in [0, 1)");
  if (!(v_max > 0.0) || concentrability < 0.0 || eps_gb < 0.0)
    detail::fail("fqe_bound: invalid parameters");
  if (k == 0) return v_max;
  double gk = std::pow(gamma, k);
  return (1.0 - gk) / (1.0 - gamma) * std::sqrt(concentrability * eps_gb) +
         gk * v_max;
}

/**
 * Largest ratio, over time steps and visited pairs, between the pair
 * distribution the evaluated policy induces on the model and the pair
 * frequency in the dataset. Infinite when the policy reaches a pair the
 * data never recorded.
 */
inline double measured_concentrability(const TabularMdp& mdp,
                                       const TabularPolicy& pi,
                                       const TransitionDataset& d,
                                       int horizon = -1) {
  validate_policy(pi, mdp.n_states, mdp.n_actions);
  if (d.n_states != mdp.n_states || d.n_actions != mdp.n_actions)
    detail::fail("measured_concentrability: dataset shape mismatch");
  detail::check_dataset(d);
  OccupancyPair occ = occupancy(mdp, pi, horizon, /*store_per_step=*/true);
  std::vector<long> counts = pair_counts(d);
  const double n_total = double(d.records.size());
  double worst = 0.0;
  for (const std::vector<double>& dt : occ.per_step) {
    for (int s = 0; s < mdp.n_states; ++s) {
      if (dt[size_t(s)] <= 0.0) continue;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double mass = dt[size_t(s)] * pi(s, a);
        if (mass <= 0.0) continue;
        long n = counts[size_t(s) * mdp.n_actions + a];
        if (n == 0) return HUGE_VAL;
        worst = std::max(worst, mass / (double(n) / n_total));
      }
    }
  }
  return worst;
}

}  // namespace strlab
