#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "strlab/constants.hpp"

namespace strlab {

/**
 * Finite MDP with dense transition and reward tables.
 *
 * transition is laid out [s][a][s'] row-major, reward is [s][a].
 * Rewards live in [0, r_max]; v_max() = r_max / (1 - gamma) bounds every
 * value and Q function of the MDP.
 */
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;    // n_states * n_actions * n_states
  std::vector<double> reward;        // n_states * n_actions
  double gamma = 0.0;
  std::vector<double> initial_dist;  // n_states
  double r_max = 1.0;

  double p(int s, int a, int s2) const {
    return transition[(size_t(s) * n_actions + a) * n_states + s2];
  }
  double& p(int s, int a, int s2) {
    return transition[(size_t(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const { return reward[size_t(s) * n_actions + a]; }
  double& r(int s, int a) { return reward[size_t(s) * n_actions + a]; }
  double v_max() const { return r_max / (1.0 - gamma); }

  static TabularMdp zeros(int n_states, int n_actions, double gamma,
                          double r_max = 1.0) {
    TabularMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    m.r_max = r_max;
    m.transition.assign(size_t(n_states) * n_actions * n_states, 0.0);
    m.reward.assign(size_t(n_states) * n_actions, 0.0);
    m.initial_dist.assign(size_t(n_states), 0.0);
    return m;
  }
};

/** Stochastic policy table, probs laid out [s][a] row-major. */
struct TabularPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;

  double operator()(int s, int a) const {
    return probs[size_t(s) * n_actions + a];
  }
  double& at(int s, int a) { return probs[size_t(s) * n_actions + a]; }
  const double* row(int s) const { return probs.data() + size_t(s) * n_actions; }
  double* row(int s) { return probs.data() + size_t(s) * n_actions; }

  static TabularPolicy uniform(int n_states, int n_actions) {
    TabularPolicy p;
    p.n_states = n_states;
    p.n_actions = n_actions;
    p.probs.assign(size_t(n_states) * n_actions, 1.0 / n_actions);
    return p;
  }

  // All-zero table for callers that fill rows themselves; not a valid
  // policy until they do.
  static TabularPolicy zeros(int n_states, int n_actions) {
    TabularPolicy p;
    p.n_states = n_states;
    p.n_actions = n_actions;
    p.probs.assign(size_t(n_states) * n_actions, 0.0);
    return p;
  }
};

/** Q (or advantage) table, values laid out [s][a] row-major. */
struct QTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> values;

  double operator()(int s, int a) const {
    return values[size_t(s) * n_actions + a];
  }
  double& at(int s, int a) { return values[size_t(s) * n_actions + a]; }
  const double* row(int s) const {
    return values.data() + size_t(s) * n_actions;
  }

  static QTable zeros(int n_states, int n_actions) {
    QTable q;
    q.n_states = n_states;
    q.n_actions = n_actions;
    q.values.assign(size_t(n_states) * n_actions, 0.0);
    return q;
  }
};

/**
 * Discounted occupancy of a policy: d sums to one over states, rho(s,a) =
 * d(s) * pi(a|s) sums to one over pairs. per_step holds the undiscounted
 * step distributions d_t for t < horizon when requested.
 */
struct OccupancyPair {
  std::vector<double> d;    // n_states
  std::vector<double> rho;  // n_states * n_actions
  std::vector<std::vector<double>> per_step;
  int horizon = 0;

  double state(int s) const { return d[size_t(s)]; }
  double pair(int s, int a, int n_actions) const {
    return rho[size_t(s) * n_actions + a];
  }
};

/** Divergences between two policy rows at one state. */
struct DivergenceRow {
  double tv = 0.0;     // total variation
  double kl_pq = 0.0;  // KL(p || q)
  double kl_qp = 0.0;  // KL(q || p)
};

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline std::string sa_str(int s, int a) {
  return "(s=" + std::to_string(s) + ", a=" + std::to_string(a) + ")";
}

}  // namespace detail

/**
 * Validates shapes, row stochasticity (within tol), reward bounds and the
 * initial distribution. Throws std::invalid_argument naming the first
 * offending state-action pair.
 */
inline void validate_mdp(const TabularMdp& m, double tol = kProbTol) {
  if (m.n_states <= 0 || m.n_actions <= 0)
    detail::fail("validate_mdp: n_states and n_actions must be positive");
  if (!(m.gamma >= 0.0 && m.gamma < 1.0))
    detail::fail("validate_mdp: gamma must lie in [0, 1), got " +
                 std::to_string(m.gamma));
  size_t want_t = size_t(m.n_states) * m.n_actions * m.n_states;
  if (m.transition.size() != want_t)
    detail::fail("validate_mdp: transition table has wrong size");
  if (m.reward.size() != size_t(m.n_states) * m.n_actions)
    detail::fail("validate_mdp: reward table has wrong size");
  if (m.initial_dist.size() != size_t(m.n_states))
    detail::fail("validate_mdp: initial_dist has wrong size");
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      double sum = 0.0;
      for (int s2 = 0; s2 < m.n_states; ++s2) {
        double p = m.p(s, a, s2);
        if (!(p >= 0.0))
          detail::fail("validate_mdp: negative transition probability at " +
                       detail::sa_str(s, a));
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol)
        detail::fail("validate_mdp: transition row " + detail::sa_str(s, a) +
                     " sums to " + std::to_string(sum));
      double r = m.r(s, a);
      if (!(r >= 0.0 && r <= m.r_max))
        detail::fail("validate_mdp: reward at " + detail::sa_str(s, a) +
                     " outside [0, r_max], got " + std::to_string(r));
    }
  }
  double d0 = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    if (!(m.initial_dist[size_t(s)] >= 0.0))
      detail::fail("validate_mdp: negative initial probability at s=" +
                   std::to_string(s));
    d0 += m.initial_dist[size_t(s)];
  }
  if (std::abs(d0 - 1.0) > tol)
    detail::fail("validate_mdp: initial_dist sums to " + std::to_string(d0));
}

/** Validates a policy table against an MDP's shape: rows sum to one. */
inline void validate_policy(const TabularPolicy& pi, int n_states,
                            int n_actions, double tol = kProbTol) {
  if (pi.n_states != n_states || pi.n_actions != n_actions)
    detail::fail("validate_policy: shape mismatch, policy is " +
                 std::to_string(pi.n_states) + "x" +
                 std::to_string(pi.n_actions) + ", expected " +
                 std::to_string(n_states) + "x" + std::to_string(n_actions));
  if (pi.probs.size() != size_t(n_states) * n_actions)
    detail::fail("validate_policy: probs table has wrong size");
  for (int s = 0; s < n_states; ++s) {
    double sum = 0.0;
    for (int a = 0; a < n_actions; ++a) {
      double p = pi(s, a);
      if (!(p >= 0.0))
        detail::fail("validate_policy: negative probability at " +
                     detail::sa_str(s, a));
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol)
      detail::fail("validate_policy: row s=" + std::to_string(s) +
                   " sums to " + std::to_string(sum));
  }
}

/** One application of the policy Bellman operator: R + gamma * P * (pi f). */
inline QTable bellman_apply(const TabularMdp& m, const TabularPolicy& pi,
                            const QTable& f) {
  if (f.n_states != m.n_states || f.n_actions != m.n_actions)
    detail::fail("bellman_apply: Q table shape mismatch");
  if (pi.n_states != m.n_states || pi.n_actions != m.n_actions)
    detail::fail("bellman_apply: policy shape mismatch");
  std::vector<double> v(size_t(m.n_states), 0.0);
  for (int s = 0; s < m.n_states; ++s) {
    double acc = 0.0;
    for (int a = 0; a < m.n_actions; ++a) acc += pi(s, a) * f(s, a);
    v[size_t(s)] = acc;
  }
  QTable out = QTable::zeros(m.n_states, m.n_actions);
  for (int s = 0; s < m.n_states; ++s) {
    for (int a = 0; a < m.n_actions; ++a) {
      double acc = 0.0;
      const double* row = m.transition.data() +
                          (size_t(s) * m.n_actions + a) * m.n_states;
      for (int s2 = 0; s2 < m.n_states; ++s2) acc += row[s2] * v[size_t(s2)];
      out.at(s, a) = m.r(s, a) + m.gamma * acc;
    }
  }
  return out;
}

namespace detail {

// Policy-averaged state values from a Q table.
inline std::vector<double> state_values(const TabularPolicy& pi,
                                        const QTable& q) {
  std::vector<double> v(size_t(q.n_states), 0.0);
  for (int s = 0; s < q.n_states; ++s) {
    double acc = 0.0;
    for (int a = 0; a < q.n_actions; ++a) acc += pi(s, a) * q(s, a);
    v[size_t(s)] = acc;
  }
  return v;
}

inline double bellman_residual(const TabularMdp& m, const TabularPolicy& pi,
                               const QTable& q) {
  QTable t = bellman_apply(m, pi, q);
  double worst = 0.0;
  for (size_t i = 0; i < q.values.size(); ++i)
    worst = std::max(worst, std::abs(t.values[i] - q.values[i]));
  return worst;
}

}  // namespace detail

/**
 * Exact policy evaluation. Solves (I - gamma P_pi) V = r_pi directly when
 * the MDP has at most kDirectSolveLimit state-action pairs, otherwise runs
 * the Bellman contraction. Either way the returned table satisfies
 * ||Q - T_pi Q||_inf <= tol * (1 - gamma).
 */
inline QTable exact_q(const TabularMdp& m, const TabularPolicy& pi,
                      double tol = 1e-10) {
  if (pi.n_states != m.n_states || pi.n_actions != m.n_actions)
    detail::fail("exact_q: policy shape mismatch");
  if (!(tol > 0.0)) detail::fail("exact_q: tol must be positive");
  const int S = m.n_states, A = m.n_actions;
  QTable q = QTable::zeros(S, A);
  if (size_t(S) * A <= size_t(kDirectSolveLimit)) {
    Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd rhs(S);
    for (int s = 0; s < S; ++s) {
      double r_pi = 0.0;
      for (int a = 0; a < A; ++a) {
        double w = pi(s, a);
        r_pi += w * m.r(s, a);
        if (w == 0.0) continue;
        const double* row =
            m.transition.data() + (size_t(s) * A + a) * S;
        for (int s2 = 0; s2 < S; ++s2) sys(s, s2) -= m.gamma * w * row[s2];
      }
      rhs(s) = r_pi;
    }
    Eigen::VectorXd v = sys.partialPivLu().solve(rhs);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double acc = 0.0;
        const double* row = m.transition.data() + (size_t(s) * A + a) * S;
        for (int s2 = 0; s2 < S; ++s2) acc += row[s2] * v(s2);
        q.at(s, a) = m.r(s, a) + m.gamma * acc;
      }
    }
    return q;
  }
  // Contraction path for large models.
  double target = tol * (1.0 - m.gamma);
  for (long iter = 0;; ++iter) {
    QTable next = bellman_apply(m, pi, q);
    double delta = 0.0;
    for (size_t i = 0; i < q.values.size(); ++i)
      delta = std::max(delta, std::abs(next.values[i] - q.values[i]));
    q = std::move(next);
    // ||T q - q|| <= gamma * delta once the step shrank below target.
    if (delta <= target) return q;
    if (iter > 100000000L)
      throw std::runtime_error("exact_q: contraction failed to converge");
  }
}

/** Advantage A(s,a) = Q(s,a) - sum_a' pi(a'|s) Q(s,a'). */
inline QTable advantage_from_q(const QTable& q, const TabularPolicy& pi) {
  if (pi.n_states != q.n_states || pi.n_actions != q.n_actions)
    detail::fail("advantage_from_q: shape mismatch");
  QTable a = QTable::zeros(q.n_states, q.n_actions);
  for (int s = 0; s < q.n_states; ++s) {
    // Shifted summation keeps constant rows at exactly zero advantage.
    double ref = q(s, 0);
    double v = 0.0;
    for (int ac = 0; ac < q.n_actions; ++ac)
      v += pi(s, ac) * (q(s, ac) - ref);
    for (int ac = 0; ac < q.n_actions; ++ac)
      a.at(s, ac) = q(s, ac) - ref - v;
  }
  return a;
}

/** Truncation horizon that leaves at most kOccupancyTailMass of gamma^t. */
inline int default_horizon(double gamma) {
  if (gamma <= 0.0) return 1;
  return int(std::ceil(std::log(kOccupancyTailMass) / std::log(gamma)));
}

/**
 * Discounted state and state-action occupancy,
 * d = (1 - gamma) * sum_t gamma^t d_t truncated at the horizon. The
 * truncated d sums to 1 - gamma^horizon, within 1e-8 of one for the
 * default horizon.
 */
inline OccupancyPair occupancy(const TabularMdp& m, const TabularPolicy& pi,
                               int horizon = -1, bool store_per_step = false) {
  if (pi.n_states != m.n_states || pi.n_actions != m.n_actions)
    detail::fail("occupancy: policy shape mismatch");
  if (horizon < 0) horizon = default_horizon(m.gamma);
  if (horizon < 1) detail::fail("occupancy: horizon must be at least 1");
  const int S = m.n_states, A = m.n_actions;
  OccupancyPair occ;
  occ.horizon = horizon;
  occ.d.assign(size_t(S), 0.0);
  occ.rho.assign(size_t(S) * A, 0.0);
  std::vector<double> cur = m.initial_dist;
  std::vector<double> next(size_t(S), 0.0);
  double scale = 1.0 - m.gamma;
  double disc = 1.0;
  for (int t = 0; t < horizon; ++t) {
    if (store_per_step) occ.per_step.push_back(cur);
    for (int s = 0; s < S; ++s) occ.d[size_t(s)] += scale * disc * cur[size_t(s)];
    if (t + 1 < horizon) {
      std::fill(next.begin(), next.end(), 0.0);
      for (int s = 0; s < S; ++s) {
        double ds = cur[size_t(s)];
        if (ds == 0.0) continue;
        for (int a = 0; a < A; ++a) {
          double w = ds * pi(s, a);
          if (w == 0.0) continue;
          const double* row = m.transition.data() + (size_t(s) * A + a) * S;
          for (int s2 = 0; s2 < S; ++s2) next[size_t(s2)] += w * row[s2];
        }
      }
      cur.swap(next);
      disc *= m.gamma;
    }
  }
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a)
      occ.rho[size_t(s) * A + a] = occ.d[size_t(s)] * pi(s, a);
  return occ;
}

/** Discounted return eta(pi) = E_{s ~ d0} V^pi(s). */
inline double performance(const TabularMdp& m, const TabularPolicy& pi,
                          double tol = 1e-10) {
  QTable q = exact_q(m, pi, tol);
  std::vector<double> v = detail::state_values(pi, q);
  double eta = 0.0;
  for (int s = 0; s < m.n_states; ++s) eta += m.initial_dist[size_t(s)] * v[size_t(s)];
  return eta;
}

/**
 * Per-state TV and both KL directions between two policies. KL(p||q) is
 * +infinity whenever p puts mass where q has exact zeros; 0 log 0 = 0.
 */
inline std::vector<DivergenceRow> policy_divergences(const TabularPolicy& p,
                                                     const TabularPolicy& q) {
  if (p.n_states != q.n_states || p.n_actions != q.n_actions)
    detail::fail("policy_divergences: shape mismatch");
  std::vector<DivergenceRow> out(size_t(p.n_states));
  const double inf = std::numeric_limits<double>::infinity();
  for (int s = 0; s < p.n_states; ++s) {
    DivergenceRow row;
    for (int a = 0; a < p.n_actions; ++a) {
      double pa = p(s, a), qa = q(s, a);
      row.tv += 0.5 * std::abs(pa - qa);
      if (pa > 0.0) row.kl_pq += (qa > 0.0) ? pa * std::log(pa / qa) : inf;
      if (qa > 0.0) row.kl_qp += (pa > 0.0) ? qa * std::log(qa / pa) : inf;
    }
    out[size_t(s)] = row;
  }
  return out;
}

}  // namespace strlab
