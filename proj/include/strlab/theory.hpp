#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "strlab/algorithms.hpp"
#include "strlab/constants.hpp"
#include "strlab/fqe.hpp"
#include "strlab/mdp.hpp"
#include "strlab/policy_update.hpp"

namespace strlab {

/**
 * Outcome of checking one inequality of the form lhs <= rhs on concrete
 * numbers. slack = rhs - lhs; the check passes when the slack is no worse
 * than -tol. applicable records whether the inputs satisfied the claim's
 * hypotheses (a vacuous check still passes but says so in context).
 */
struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool passed = false;
  bool applicable = true;
  std::string context;
};

namespace detail {

inline BoundReport make_report(const std::string& name, double lhs,
                               double rhs, double tol, bool applicable,
                               const std::string& context) {
  BoundReport r;
  r.name = name;
  r.lhs = lhs;
  r.rhs = rhs;
  r.slack = rhs - lhs;
  r.passed = r.slack >= -tol;
  r.applicable = applicable;
  r.context = context;
  return r;
}

// E_{a ~ pi_new(s)} A(s, a) for every state.
inline std::vector<double> expected_adv_rows(const TabularPolicy& pi_new,
                                             const QTable& adv) {
  std::vector<double> out(size_t(adv.n_states), 0.0);
  for (int s = 0; s < adv.n_states; ++s) {
    double acc = 0.0;
    for (int a = 0; a < adv.n_actions; ++a) acc += pi_new(s, a) * adv(s, a);
    out[size_t(s)] = acc;
  }
  return out;
}

}  // namespace detail

/**
 * Identity: the performance gap between two policies equals the
 * occupancy-weighted advantage, eta(new) - eta(old) =
 * (1/(1-gamma)) E_{s ~ d^new, a ~ new} A^old(s, a). Checked as
 * |difference of the two sides| <= tol; occupancies are truncated at the
 * default horizon, contributing ~1e-10 of the value scale.
 */
inline BoundReport check_performance_difference(const TabularMdp& m,
                                                const TabularPolicy& pi_new,
                                                const TabularPolicy& pi_old,
                                                double tol = kPerfTol) {
  double gap = performance(m, pi_new) - performance(m, pi_old);
  QTable adv = advantage_from_q(exact_q(m, pi_old), pi_old);
  OccupancyPair occ = occupancy(m, pi_new);
  std::vector<double> ea = detail::expected_adv_rows(pi_new, adv);
  double weighted = 0.0;
  for (int s = 0; s < m.n_states; ++s) weighted += occ.d[size_t(s)] * ea[size_t(s)];
  weighted /= (1.0 - m.gamma);
  return detail::make_report(
      "performance_difference_identity", std::abs(gap - weighted), tol, 0.0,
      true,
      "gap=" + std::to_string(gap) + " occupancy-weighted=" +
          std::to_string(weighted));
}

/**
 * Surrogate lower bound: for any pair of policies,
 * eta(new) >= eta(old) + (1/(1-gamma)) E_{d^old, new} A^old
 *             - (2 gamma eps / (1-gamma)^2) * max_s TV(new, old)
 * with eps = max_s |E_{a ~ new} A^old(s, a)|.
 */
inline BoundReport check_surrogate_lower_bound(const TabularMdp& m,
                                               const TabularPolicy& pi_new,
                                               const TabularPolicy& pi_old,
                                               double tol = 1e-9) {
  double eta_new = performance(m, pi_new);
  double eta_old = performance(m, pi_old);
  QTable adv = advantage_from_q(exact_q(m, pi_old), pi_old);
  OccupancyPair occ = occupancy(m, pi_old);
  std::vector<double> ea = detail::expected_adv_rows(pi_new, adv);
  double surrogate = 0.0, eps = 0.0;
  for (int s = 0; s < m.n_states; ++s) {
    surrogate += occ.d[size_t(s)] * ea[size_t(s)];
    eps = std::max(eps, std::abs(ea[size_t(s)]));
  }
  surrogate /= (1.0 - m.gamma);
  double tv_max = 0.0;
  for (const DivergenceRow& d : policy_divergences(pi_new, pi_old))
    tv_max = std::max(tv_max, d.tv);
  double penalty =
      2.0 * m.gamma * eps * tv_max / ((1.0 - m.gamma) * (1.0 - m.gamma));
  return detail::make_report(
      "surrogate_lower_bound", eta_old + surrogate - penalty, eta_new, tol,
      true,
      "surrogate=" + std::to_string(surrogate) +
          " penalty=" + std::to_string(penalty) +
          " tv_max=" + std::to_string(tv_max));
}

/**
 * Divergence performance ceiling: a policy whose worst-state divergence
 * from the behavior policy is eps cannot beat it by more than
 * v_max * sqrt(eps) / (sqrt(2) (1-gamma)). The eps used is the measured
 * maximum KL(pi || beta); an infinite divergence makes the ceiling
 * vacuous and is reported as not applicable.
 */
inline BoundReport check_performance_ceiling(const TabularMdp& m,
                                             const TabularPolicy& pi,
                                             const TabularPolicy& beta,
                                             double tol = 1e-9) {
  double eps = 0.0;
  for (const DivergenceRow& d : policy_divergences(pi, beta))
    eps = std::max(eps, d.kl_pq);
  bool applicable = std::isfinite(eps);
  double ceiling =
      performance(m, beta) +
      m.v_max() * std::sqrt(eps) / (std::sqrt(2.0) * (1.0 - m.gamma));
  return detail::make_report(
      "performance_ceiling", performance(m, pi), ceiling, tol, applicable,
      "max_kl=" + std::to_string(eps));
}

/**
 * Trust region of the fixed-temperature tilt: per-state total variation
 * stays within alpha, divergence of the base from the new policy within
 * alpha, and divergence of the new policy from the base within
 * alpha (e^alpha - e^-alpha) / 2. Reported as three bounds on the
 * worst state.
 */
inline std::vector<BoundReport> check_trust_region(const TabularPolicy& base,
                                                   const TabularPolicy& next,
                                                   double alpha,
                                                   double tol = 1e-9) {
  double tv = 0.0, kl_fwd = 0.0, kl_rev = 0.0;
  for (const DivergenceRow& d : policy_divergences(base, next)) {
    tv = std::max(tv, d.tv);
    kl_fwd = std::max(kl_fwd, d.kl_pq);  // KL(base || next)
    kl_rev = std::max(kl_rev, d.kl_qp);  // KL(next || base)
  }
  std::string ctx = "alpha=" + std::to_string(alpha);
  return {
      detail::make_report("trust_region_tv", tv, alpha, tol, true, ctx),
      detail::make_report("trust_region_kl_of_base", kl_fwd, alpha, tol, true,
                          ctx),
      detail::make_report(
          "trust_region_kl_of_next", kl_rev,
          alpha * (std::exp(alpha) - std::exp(-alpha)) / 2.0, tol, true, ctx),
  };
}

/**
 * Monotonicity of exact-evaluation iterations: Q never decreases at any
 * pair (first report), and improves strictly somewhere on every step
 * taken before the iterate reaches the in-support optimum (second
 * report). Steps whose predecessor is already within gap_tol of the
 * optimum are exempt from strictness. Uses the trace's recorded
 * improvement extremes; re-evaluates iterates on eval_mdp only to
 * measure their distance from the optimum.
 */
inline std::vector<BoundReport> check_strict_improvement(
    const TabularMdp& eval_mdp, const IterationTrace& trace,
    const QTable& q_opt, double gap_tol = 1e-3,
    double strict_tol = kStrictImprovementTol) {
  double worst_decrease = 0.0;  // most negative q_improve_min
  double min_strict = HUGE_VAL;
  int n_checked = 0;
  const int S = q_opt.n_states, A = q_opt.n_actions;
  for (size_t i = 1; i < trace.rows.size(); ++i) {
    worst_decrease =
        std::min(worst_decrease, trace.rows[i].q_improve_min);
    TabularPolicy prev_ext =
        detail::extend_rows_uniform(trace.policies[i - 1], eval_mdp.n_states);
    QTable q_prev = exact_q(eval_mdp, prev_ext);
    double gap = -HUGE_VAL;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        gap = std::max(gap, q_opt(s, a) - q_prev(s, a));
    if (gap > gap_tol) {
      min_strict = std::min(min_strict, trace.rows[i].q_improve_max);
      ++n_checked;
    }
  }
  std::vector<BoundReport> out;
  out.push_back(detail::make_report(
      "q_monotone_nondecreasing", -worst_decrease, strict_tol, 0.0, true,
      "worst pointwise decrease " + std::to_string(-worst_decrease)));
  bool applicable = n_checked > 0;
  out.push_back(detail::make_report(
      "q_strict_improvement_before_optimum", strict_tol,
      applicable ? min_strict : HUGE_VAL, 0.0, applicable,
      std::to_string(n_checked) + " pre-optimum steps checked"));
  return out;
}

/**
 * Safe improvement of one exact-evaluation fixed-temperature step:
 * eta(new) - eta(old) >=
 *   (v_max / ((1-gamma) alpha)) E_{d^old} KL(new || old)
 *   - (2 gamma eps / (1-gamma)^2) alpha
 *   - (2 alpha / (1-gamma)) * evaluation_error,
 * with eps = max_s |E_{a ~ new} A^old(s, a)|. The evaluation_error term
 * is zero when the advantage came from exact evaluation. The hypothesis
 * is that new is the exact tilt of old at temperature v_max / alpha;
 * infinite divergence (support mismatch) voids it.
 */
inline BoundReport check_safe_improvement(const TabularMdp& m,
                                          const TabularPolicy& pi_old,
                                          const TabularPolicy& pi_new,
                                          double alpha, double v_max,
                                          double evaluation_error = 0.0,
                                          double tol = 1e-9) {
  double gap = performance(m, pi_new) - performance(m, pi_old);
  QTable adv = advantage_from_q(exact_q(m, pi_old), pi_old);
  OccupancyPair occ = occupancy(m, pi_old);
  std::vector<DivergenceRow> div = policy_divergences(pi_new, pi_old);
  std::vector<double> ea = detail::expected_adv_rows(pi_new, adv);
  double e_kl = 0.0, eps = 0.0;
  bool applicable = true;
  for (int s = 0; s < m.n_states; ++s) {
    if (!std::isfinite(div[size_t(s)].kl_pq)) applicable = false;
    e_kl += occ.d[size_t(s)] * div[size_t(s)].kl_pq;
    eps = std::max(eps, std::abs(ea[size_t(s)]));
  }
  double g = 1.0 - m.gamma;
  double guarantee = v_max / (g * alpha) * e_kl -
                     2.0 * m.gamma * eps / (g * g) * alpha -
                     2.0 * alpha / g * evaluation_error;
  return detail::make_report(
      "safe_improvement", guarantee, gap, tol, applicable,
      "E[KL]=" + std::to_string(e_kl) + " eps=" + std::to_string(eps));
}

/**
 * Evaluation error against its finite-sample ceiling: the
 * occupancy-weighted L1 error of a fitted Q must stay below the bound
 * computed from the round count, sample size, and concentrability.
 */
inline BoundReport check_fqe_error_bound(const QTable& q_hat,
                                         const QTable& q_true,
                                         const std::vector<double>& rho,
                                         double bound, double tol = 1e-9) {
  double err = fqe_error(q_hat, q_true, rho);
  return detail::make_report("fqe_error_bound", err, bound, tol,
                             std::isfinite(bound),
                             "weighted_l1=" + std::to_string(err));
}

}  // namespace strlab
