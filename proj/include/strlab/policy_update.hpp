#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "strlab/constants.hpp"
#include "strlab/dataset.hpp"
#include "strlab/mdp.hpp"

namespace strlab {

struct LambdaBracket {
  double lo = 1e-4;
  double hi = 1e3;
};

/**
 * Configuration of the KL-ball update. The default bracket suits
 * advantages on a unit value scale; with_v_max scales it to the problem.
 */
struct ConstrainedUpdateConfig {
  double epsilon = 0.05;
  LambdaBracket bracket{};
  double dual_tol = kDefaultDualTol;

  static ConstrainedUpdateConfig with_v_max(double epsilon, double v_max) {
    ConstrainedUpdateConfig c;
    c.epsilon = epsilon;
    c.bracket = {1e-4 * v_max, 1e3 * v_max};
    return c;
  }
};

/** Configuration of the fixed-temperature penalty update. */
struct PenaltyUpdateConfig {
  double alpha = 0.1;  // in (0, 0.48]
  double v_max = 1.0;
};

/** Per-state record of what the update did. */
struct StateUpdateDiagnostics {
  double lambda_star = 0.0;      // temperature actually applied
  double z_value = 1.0;          // normalizer of the exponential tilt
  double kl_achieved = 0.0;      // KL(new || base) at this state
  bool constraint_active = false;
};

struct UpdateResult {
  TabularPolicy policy;
  std::vector<StateUpdateDiagnostics> diag;
};

struct DualSolution {
  double lambda_star = 0.0;
  bool constraint_active = false;
};

namespace detail {

inline void check_constrained_config(const ConstrainedUpdateConfig& c) {
  if (!(c.epsilon > 0.0))
    fail("constrained update: epsilon must be positive");
  if (!(c.bracket.lo > 0.0 && c.bracket.hi > c.bracket.lo))
    fail("constrained update: bracket must satisfy 0 < lo < hi");
  if (!(c.dual_tol > 0.0))
    fail("constrained update: dual_tol must be positive");
}

inline void check_row_finite(const double* adv, int n, int s) {
  for (int a = 0; a < n; ++a)
    if (!std::isfinite(adv[a]))
      fail("update: non-finite advantage at " + sa_str(s, a));
}

// Max advantage over the base policy's support; requires positive mass.
inline double support_max(const double* pi, const double* adv, int n, int s) {
  double m = -HUGE_VAL;
  for (int a = 0; a < n; ++a)
    if (pi[a] > 0.0) m = std::max(m, adv[a]);
  if (m == -HUGE_VAL)
    fail("update: base policy row s=" + std::to_string(s) + " has no mass");
  return m;
}

inline bool constant_on_support(const double* pi, const double* adv, int n) {
  double lo = HUGE_VAL, hi = -HUGE_VAL, scale = 1.0;
  for (int a = 0; a < n; ++a) {
    if (pi[a] <= 0.0) continue;
    lo = std::min(lo, adv[a]);
    hi = std::max(hi, adv[a]);
    scale = std::max(scale, std::abs(adv[a]));
  }
  return hi - lo <= 1e-13 * scale;
}

inline double kl_rows(const double* p, const double* q, int n) {
  double kl = 0.0;
  for (int a = 0; a < n; ++a)
    if (p[a] > 0.0) kl += p[a] * std::log(p[a] / q[a]);
  return kl;
}

// Exponential tilt of one base row: new(a) propto pi(a) * exp(adv(a)/lambda).
// Positive base entries stay positive: underflowed tilts are clamped to
// DBL_MIN before renormalization, which keeps support equality exact while
// changing probabilities by less than 1e-300.
inline StateUpdateDiagnostics tilt_row(const double* pi, const double* adv,
                                       int n, double lambda, double* out) {
  double m = support_max(pi, adv, n, -1);
  double sum = 0.0;
  for (int a = 0; a < n; ++a) {
    if (pi[a] > 0.0) {
      double w = pi[a] * std::exp((adv[a] - m) / lambda);
      if (w == 0.0) w = DBL_MIN;
      out[a] = w;
      sum += w;
    } else {
      out[a] = 0.0;
    }
  }
  for (int a = 0; a < n; ++a) out[a] /= sum;
  StateUpdateDiagnostics diag;
  diag.lambda_star = lambda;
  double log_z = m / lambda + std::log(sum);
  diag.z_value = log_z > 709.0 ? DBL_MAX : std::exp(log_z);
  diag.kl_achieved = kl_rows(out, pi, n);
  return diag;
}

}  // namespace detail

/**
 * Lagrangian dual of the per-state KL-ball problem:
 * g(lambda) = epsilon * lambda + lambda * log sum_a pi(a) exp(adv(a)/lambda),
 * evaluated with a max shift so extreme ratios stay finite. Convex in
 * lambda on (0, inf).
 */
inline double dual_objective(const double* pi_row, const double* adv_row,
                             int n, double epsilon, double lambda) {
  if (!(lambda > 0.0)) detail::fail("dual_objective: lambda must be positive");
  double m = detail::support_max(pi_row, adv_row, n, -1);
  double sum = 0.0;
  for (int a = 0; a < n; ++a)
    if (pi_row[a] > 0.0) sum += pi_row[a] * std::exp((adv_row[a] - m) / lambda);
  return epsilon * lambda + m + lambda * std::log(sum);
}

/**
 * Minimizes the dual over the temperature to dual_tol relative accuracy.
 * The dual's derivative is epsilon minus the divergence of the tilt at
 * that temperature, and the divergence decreases strictly in the
 * temperature for non-constant advantage rows, so an interior minimizer
 * is exactly the root of KL(tilt(lambda) || base) = epsilon. Root
 * finding by bisection on log(lambda) localizes it to full precision,
 * which comparison-based minimization of the (locally flat) dual cannot.
 *
 * Constant advantages on the base support leave the tilt trivial; the
 * top of the bracket is returned with constraint_active = false. If even
 * the most aggressive temperature in the bracket keeps the divergence
 * inside the budget, the ball contains the greedy-on-support policy and
 * the bottom of the bracket is returned, also inactive. When the budget
 * is still exceeded at the top of the bracket, the bracket is too small
 * for the advantage scale and the upper end is expanded geometrically;
 * the expansion always terminates for finite advantages because large
 * temperatures shrink the divergence below any positive budget.
 */
inline DualSolution dual_solve(const double* pi_row, const double* adv_row,
                               int n, const ConstrainedUpdateConfig& cfg,
                               int state_index = -1) {
  detail::check_constrained_config(cfg);
  detail::check_row_finite(adv_row, n, state_index);
  if (detail::constant_on_support(pi_row, adv_row, n))
    return {cfg.bracket.hi, false};
  std::vector<double> scratch(static_cast<size_t>(n));
  auto kl_at = [&](double lambda) {
    return detail::tilt_row(pi_row, adv_row, n, lambda, scratch.data())
        .kl_achieved;
  };
  if (kl_at(cfg.bracket.lo) <= cfg.epsilon)
    return {cfg.bracket.lo, false};  // greedy limit
  double hi = cfg.bracket.hi;
  int rounds = 0;
  while (kl_at(hi) > cfg.epsilon) {
    if (++rounds > 40) return {hi, false};  // unreachable for finite rows
    hi *= 16.0;
  }
  double a = std::log(cfg.bracket.lo), b = std::log(hi);
  while (b - a > cfg.dual_tol) {
    double mid = 0.5 * (a + b);
    (kl_at(std::exp(mid)) > cfg.epsilon ? a : b) = mid;
  }
  return {std::exp(0.5 * (a + b)), true};
}

/**
 * KL-ball update: per state the exact maximizer of expected advantage
 * subject to KL(new || base) <= epsilon, i.e. base tilted by
 * exp(adv / lambda*) with lambda* from the dual. Rows where the advantage
 * is constant on the support are returned bitwise unchanged. Support
 * equality with the base policy is exact.
 */
inline UpdateResult constrained_update(const TabularPolicy& pi_base,
                                       const QTable& advantages,
                                       const ConstrainedUpdateConfig& cfg) {
  detail::check_constrained_config(cfg);
  if (advantages.n_states != pi_base.n_states ||
      advantages.n_actions != pi_base.n_actions)
    detail::fail("constrained_update: advantage shape mismatch");
  const int S = pi_base.n_states, A = pi_base.n_actions;
  UpdateResult res;
  res.policy = pi_base;
  res.diag.assign(size_t(S), {});
  for (int s = 0; s < S; ++s) {
    const double* pi = pi_base.row(s);
    const double* adv = advantages.row(s);
    detail::check_row_finite(adv, A, s);
    if (detail::constant_on_support(pi, adv, A)) {
      res.diag[size_t(s)] = {cfg.bracket.hi, 1.0, 0.0, false};
      continue;  // row already copied
    }
    DualSolution sol = dual_solve(pi, adv, A, cfg, s);
    res.diag[size_t(s)] =
        detail::tilt_row(pi, adv, A, sol.lambda_star, res.policy.row(s));
    res.diag[size_t(s)].constraint_active = sol.constraint_active;
  }
  return res;
}

/**
 * Penalty-form update: base tilted by exp(alpha * adv / v_max). Requires
 * advantages centered under the base policy (|E_base adv| <= 1e-8 per
 * state); for centered advantages bounded by v_max the normalizer lies in
 * [1, e^alpha]. Support equality with the base policy is exact.
 */
inline UpdateResult penalty_update(const TabularPolicy& pi_base,
                                   const QTable& advantages,
                                   const PenaltyUpdateConfig& cfg) {
  if (!(cfg.alpha > 0.0 && cfg.alpha <= 0.48))
    detail::fail("penalty_update: alpha must lie in (0, 0.48]");
  if (!(cfg.v_max > 0.0))
    detail::fail("penalty_update: v_max must be positive");
  if (advantages.n_states != pi_base.n_states ||
      advantages.n_actions != pi_base.n_actions)
    detail::fail("penalty_update: advantage shape mismatch");
  const int S = pi_base.n_states, A = pi_base.n_actions;
  UpdateResult res;
  res.policy = pi_base;
  res.diag.assign(size_t(S), {});
  double lambda = cfg.v_max / cfg.alpha;
  for (int s = 0; s < S; ++s) {
    const double* pi = pi_base.row(s);
    const double* adv = advantages.row(s);
    detail::check_row_finite(adv, A, s);
    double mean = 0.0;
    for (int a = 0; a < A; ++a) mean += pi[a] * adv[a];
    if (std::abs(mean) > 1e-8)
      detail::fail("penalty_update: advantages not centered at s=" +
                   std::to_string(s) + ", residual " + std::to_string(mean));
    res.diag[size_t(s)] = detail::tilt_row(pi, adv, A, lambda, res.policy.row(s));
  }
  return res;
}

/**
 * Renormalizes a policy onto the mask: new(a|s) = 1[mask] pi(a|s) / Z(s).
 * Throws if some state has no policy mass on its masked-in actions.
 */
inline TabularPolicy support_project(const TabularPolicy& pi,
                                     const SupportMask& mask) {
  if (mask.n_states != pi.n_states || mask.n_actions != pi.n_actions)
    detail::fail("support_project: mask shape mismatch");
  TabularPolicy out = pi;
  for (int s = 0; s < pi.n_states; ++s) {
    double z = 0.0;
    for (int a = 0; a < pi.n_actions; ++a)
      if (mask.at(s, a)) z += pi(s, a);
    if (!(z > 0.0))
      detail::fail("support_project: no in-mask mass at s=" +
                   std::to_string(s));
    for (int a = 0; a < pi.n_actions; ++a)
      out.at(s, a) = mask.at(s, a) ? pi(s, a) / z : 0.0;
  }
  return out;
}

/**
 * Weighted imitation of the masked policy: new(a|s) propto
 * 1[mask and beta > 0] pi(a|s) f(s,a). This is the maximizer of the
 * importance-weighted objective whose samples come from beta; with
 * self_normalize the per-state normalizer of the importance ratios is
 * divided out first, which provably cancels (asserted to 1e-12).
 */
inline TabularPolicy is_weighted_projection(const TabularPolicy& beta,
                                            const TabularPolicy& pi,
                                            const QTable& weights,
                                            const SupportMask& mask,
                                            bool self_normalize = false) {
  if (beta.n_states != pi.n_states || beta.n_actions != pi.n_actions)
    detail::fail("is_weighted_projection: behavior shape mismatch");
  if (weights.n_states != pi.n_states || weights.n_actions != pi.n_actions)
    detail::fail("is_weighted_projection: weight shape mismatch");
  if (mask.n_states != pi.n_states || mask.n_actions != pi.n_actions)
    detail::fail("is_weighted_projection: mask shape mismatch");
  for (int s = 0; s < pi.n_states; ++s)
    for (int a = 0; a < pi.n_actions; ++a)
      if (!(weights(s, a) > 0.0) || !std::isfinite(weights(s, a)))
        detail::fail("is_weighted_projection: weight at " +
                     detail::sa_str(s, a) + " must be finite and positive");
  TabularPolicy out = pi;
  for (int s = 0; s < pi.n_states; ++s) {
    double z = 0.0, is_sum = 0.0;
    for (int a = 0; a < pi.n_actions; ++a) {
      bool eff = mask.at(s, a) && beta(s, a) > 0.0;
      double w = eff ? pi(s, a) * weights(s, a) : 0.0;
      out.at(s, a) = w;
      z += w;
      if (eff) is_sum += beta(s, a) * (pi(s, a) / beta(s, a)) * weights(s, a);
    }
    if (!(z > 0.0))
      detail::fail("is_weighted_projection: no in-mask mass at s=" +
                   std::to_string(s));
    for (int a = 0; a < pi.n_actions; ++a) out.at(s, a) /= z;
    if (self_normalize) {
      // The self-normalized route rescales weights by 1/is_sum per state,
      // which cancels in the renormalization.
      for (int a = 0; a < pi.n_actions; ++a) {
        bool eff = mask.at(s, a) && beta(s, a) > 0.0;
        double w = eff ? pi(s, a) * (weights(s, a) / is_sum) : 0.0;
        double alt = w / (z / is_sum);
        if (std::abs(alt - out.at(s, a)) > 1e-12)
          detail::fail("is_weighted_projection: self-normalization mismatch");
      }
    }
  }
  return out;
}

}  // namespace strlab
