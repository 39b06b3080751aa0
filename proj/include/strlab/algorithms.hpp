#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "strlab/constants.hpp"
#include "strlab/dataset.hpp"
#include "strlab/mdp.hpp"
#include "strlab/policy_update.hpp"

namespace strlab {

/** Whose advantage function drives the tilt. */
enum class PePolicy { behavior, current };

/** Which policy the tilt is applied to. */
enum class BasePolicy { behavior, projected_current, abm_prior };

enum class UpdateForm { constrained, penalty };

/**
 * One member of the family of exponentially tilted behavior-cloning
 * iterations. Every named variant is the same engine with a different
 * choice of advantage source and tilt base:
 *
 *   awr          advantage of the behavior policy, tilt applied to it
 *   awac         advantage of the current iterate, tilt applied to the
 *                behavior policy
 *   abm          advantage of the current iterate; a first tilt of the
 *                behavior policy builds a prior, a second tilt of that
 *                prior gives the iterate
 *   str          advantage of the current iterate, tilt applied to the
 *                current iterate renormalized onto the support mask
 *
 * The penalty form replaces the per-state divergence budget with a fixed
 * temperature v_max / alpha.
 */
struct VariantSpec {
  std::string name = "custom";
  PePolicy pe = PePolicy::current;
  BasePolicy base = BasePolicy::projected_current;
  UpdateForm form = UpdateForm::constrained;
  ConstrainedUpdateConfig constrained{};
  PenaltyUpdateConfig penalty{};

  static VariantSpec awr(double epsilon) {
    VariantSpec v;
    v.name = "awr";
    v.pe = PePolicy::behavior;
    v.base = BasePolicy::behavior;
    v.constrained.epsilon = epsilon;
    return v;
  }
  static VariantSpec awac(double epsilon) {
    VariantSpec v;
    v.name = "awac";
    v.pe = PePolicy::current;
    v.base = BasePolicy::behavior;
    v.constrained.epsilon = epsilon;
    return v;
  }
  static VariantSpec abm(double epsilon) {
    VariantSpec v;
    v.name = "abm";
    v.pe = PePolicy::current;
    v.base = BasePolicy::abm_prior;
    v.constrained.epsilon = epsilon;
    return v;
  }
  static VariantSpec str(double epsilon) {
    VariantSpec v;
    v.name = "str";
    v.pe = PePolicy::current;
    v.base = BasePolicy::projected_current;
    v.constrained.epsilon = epsilon;
    return v;
  }
  static VariantSpec str_penalty(double alpha, double v_max) {
    VariantSpec v;
    v.name = "str_penalty";
    v.pe = PePolicy::current;
    v.base = BasePolicy::projected_current;
    v.form = UpdateForm::penalty;
    v.penalty.alpha = alpha;
    v.penalty.v_max = v_max;
    return v;
  }
};

/** Per-iteration diagnostics; row 0 describes the starting policy. */
struct IterationRow {
  int iteration = 0;
  double eta_true = 0.0;   // exact performance on the reference model
  double eta_emp = 0.0;    // exact performance on the evaluation model
  double return_trunc_mean = 0.0;
  double return_trunc_se = 0.0;
  double ood_ratio = 0.0;  // mass the iterate puts outside the mask
  double kl_to_beta_mean = 0.0;
  double kl_step_max = 0.0;  // max_s KL(pi_i || pi_{i-1})
  double tv_step_max = 0.0;
  double q_improve_min = 0.0;  // extremes of Q_i - Q_{i-1} over (s, a)
  double q_improve_max = 0.0;
  bool strict_flag = false;    // some pair improved beyond the tolerance
};

struct IterationTrace {
  std::vector<IterationRow> rows;         // n_iterations + 1 entries
  std::vector<TabularPolicy> policies;    // the iterates, same indexing
  bool converged = false;                 // final step stopped moving
  int n_strict_improvements = 0;
};

struct TraceOptions {
  const TabularMdp* reference_mdp = nullptr;  // ground truth for eta_true
  const SupportMask* ood_mask = nullptr;      // mask for the ood column
  // Restrict the ood and divergence-to-behavior columns to states whose
  // mask row is nonempty (states the data says anything about).
  bool restrict_metrics_to_masked_states = true;
  int n_eval_rollouts = 0;
  int rollout_step_limit = 0;
  uint64_t rollout_seed = 0;
  double convergence_tv_tol = 1e-10;
};

namespace detail {

// Policies live on the original states; evaluation models may carry one
// extra absorbing state at the end. Extra rows act uniformly (arbitrary:
// every action there has identical consequences).
inline TabularPolicy extend_rows_uniform(const TabularPolicy& pi,
                                         int n_total) {
  if (n_total == pi.n_states) return pi;
  TabularPolicy out = TabularPolicy::uniform(n_total, pi.n_actions);
  std::copy(pi.probs.begin(), pi.probs.end(), out.probs.begin());
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

/**
 * Applies one tilt of spec.form to the given base. The penalty form
 * recenters the advantage under the base row first: the tilt is invariant
 * to per-state shifts, so this only maintains the centering contract when
 * the advantage was centered under a different policy.
 */
inline UpdateResult apply_variant_update(const TabularPolicy& base,
                                         const QTable& advantage,
                                         const VariantSpec& spec) {
  if (spec.form == UpdateForm::constrained)
    return constrained_update(base, advantage, spec.constrained);
  QTable centered = advantage;
  for (int s = 0; s < base.n_states; ++s) {
    double mean = 0.0;
    for (int a = 0; a < base.n_actions; ++a)
      mean += base(s, a) * advantage(s, a);
    for (int a = 0; a < base.n_actions; ++a) centered.at(s, a) -= mean;
  }
  return penalty_update(base, centered, spec.penalty);
}

/**
 * Runs n_iterations of the variant starting from the behavior policy,
 * evaluating iterates exactly on eval_mdp (which may be the empirical
 * model, one state larger than the policies, or the ground-truth model).
 *
 * The support mask drives the projection for variants that use one and
 * the masked-state restriction of trace metrics. States whose mask row is
 * empty are never updated by projecting variants: with no admissible
 * action there is nothing to renormalize onto, so the iterate keeps the
 * behavior row.
 */
inline IterationTrace run_variant(const TabularMdp& eval_mdp,
                                  const TabularPolicy& behavior,
                                  const SupportMask& support_mask,
                                  const VariantSpec& spec, int n_iterations,
                                  const TraceOptions& opt = {}) {
  const int S = behavior.n_states, A = behavior.n_actions;
  validate_mdp(eval_mdp);
  validate_policy(behavior, S, A);
  if (eval_mdp.n_actions != A ||
      (eval_mdp.n_states != S && eval_mdp.n_states != S + 1))
    detail::fail("run_variant: evaluation model has " +
                 std::to_string(eval_mdp.n_states) + " states for a " +
                 std::to_string(S) + "-state policy");
  if (support_mask.n_states != S || support_mask.n_actions != A)
    detail::fail("run_variant: mask shape mismatch");
  if (n_iterations < 0)
    detail::fail("run_variant: n_iterations must be non-negative");
  if (opt.reference_mdp != nullptr &&
      (opt.reference_mdp->n_states != S ||
       opt.reference_mdp->n_actions != A))
    detail::fail("run_variant: reference model shape mismatch");
  if (opt.ood_mask != nullptr &&
      (opt.ood_mask->n_states != S || opt.ood_mask->n_actions != A))
    detail::fail("run_variant: ood mask shape mismatch");

  IterationTrace trace;
  trace.rows.reserve(size_t(n_iterations) + 1);
  trace.policies.reserve(size_t(n_iterations) + 1);

  TabularPolicy pi_cur = behavior;
  TabularPolicy pi_prev;
  QTable q_prev;
  QTable adv_behavior;  // cached when the advantage source is fixed
  bool have_prev = false;

  for (int it = 0; it <= n_iterations; ++it) {
    TabularPolicy ext_cur =
        detail::extend_rows_uniform(pi_cur, eval_mdp.n_states);
    QTable q_cur = exact_q(eval_mdp, ext_cur);

    IterationRow row;
    row.iteration = it;
    std::vector<double> v = detail::state_values(ext_cur, q_cur);
    row.eta_emp = detail::dot(eval_mdp.initial_dist, v);
    row.eta_true = opt.reference_mdp != nullptr
                       ? performance(*opt.reference_mdp, pi_cur)
                       : std::nan("");
    if (opt.reference_mdp != nullptr && opt.n_eval_rollouts > 0) {
      TruncatedReturn tr = truncated_return(
          *opt.reference_mdp, pi_cur, opt.rollout_step_limit,
          opt.n_eval_rollouts, opt.rollout_seed, uint64_t(it));
      row.return_trunc_mean = tr.mean;
      row.return_trunc_se = tr.se;
    }
    if (opt.ood_mask != nullptr)
      row.ood_ratio = ood_ratio(pi_cur, *opt.ood_mask, 0.0,
                                opt.restrict_metrics_to_masked_states);
    {
      double acc = 0.0;
      int count = 0;
      for (int s = 0; s < S; ++s) {
        if (opt.restrict_metrics_to_masked_states && !support_mask.row_any(s))
          continue;
        acc += detail::kl_rows(pi_cur.row(s), behavior.row(s), A);
        ++count;
      }
      row.kl_to_beta_mean = count > 0 ? acc / count : 0.0;
    }
    if (have_prev) {
      std::vector<DivergenceRow> div = policy_divergences(pi_cur, pi_prev);
      for (int s = 0; s < S; ++s) {
        row.kl_step_max = std::max(row.kl_step_max, div[size_t(s)].kl_pq);
        row.tv_step_max = std::max(row.tv_step_max, div[size_t(s)].tv);
      }
      double lo = HUGE_VAL, hi = -HUGE_VAL;
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
          double d = q_cur(s, a) - q_prev(s, a);
          lo = std::min(lo, d);
          hi = std::max(hi, d);
        }
      row.q_improve_min = lo;
      row.q_improve_max = hi;
      row.strict_flag = hi > kStrictImprovementTol;
      if (row.strict_flag) ++trace.n_strict_improvements;
    }
    trace.rows.push_back(row);
    trace.policies.push_back(pi_cur);
    if (it == n_iterations) break;

    // Advantage of the chosen evaluation policy on the evaluation model,
    // restricted back to the original states.
    QTable adv(QTable::zeros(S, A));
    if (spec.pe == PePolicy::current) {
      QTable full = advantage_from_q(q_cur, ext_cur);
      std::copy(full.values.begin(), full.values.begin() + size_t(S) * A,
                adv.values.begin());
    } else {
      if (it == 0) {
        QTable full = advantage_from_q(q_cur, ext_cur);  // pi_cur == behavior
        adv_behavior = QTable::zeros(S, A);
        std::copy(full.values.begin(), full.values.begin() + size_t(S) * A,
                  adv_behavior.values.begin());
      }
      adv = adv_behavior;
    }

    TabularPolicy base;
    switch (spec.base) {
      case BasePolicy::behavior:
        base = behavior;
        break;
      case BasePolicy::projected_current: {
        base = pi_cur;
        for (int s = 0; s < S; ++s) {
          if (!support_mask.row_any(s)) {
            // No admissible actions recorded: freeze this row by zeroing
            // its advantage so the update's constant-row path keeps it.
            for (int a = 0; a < A; ++a) adv.at(s, a) = 0.0;
            continue;
          }
          double z = 0.0;
          for (int a = 0; a < A; ++a)
            if (support_mask.at(s, a)) z += pi_cur(s, a);
          if (!(z > 0.0))
            detail::fail("run_variant: iterate has no in-mask mass at s=" +
                         std::to_string(s));
          for (int a = 0; a < A; ++a)
            base.at(s, a) = support_mask.at(s, a) ? pi_cur(s, a) / z : 0.0;
        }
        break;
      }
      case BasePolicy::abm_prior:
        base = apply_variant_update(behavior, adv, spec).policy;
        break;
    }

    TabularPolicy pi_next = apply_variant_update(base, adv, spec).policy;
    pi_prev = std::move(pi_cur);
    q_prev = std::move(q_cur);
    have_prev = true;
    pi_cur = std::move(pi_next);
  }

  trace.converged = n_iterations >= 1 &&
                    trace.rows.back().tv_step_max <= opt.convergence_tv_tol;
  return trace;
}

/** Result of exact dynamic programming restricted to a support class. */
struct SupportOptimum {
  QTable q;
  TabularPolicy policy;  // greedy within the mask, ties to lowest index
  double eta = 0.0;
};

/**
 * Best achievable Q and performance over policies whose support stays
 * inside the mask: value iteration with the per-state maximum taken over
 * masked-in actions only, followed by an exact evaluation of the greedy
 * policy. Every state needs at least one admissible action.
 */
inline SupportOptimum support_constrained_optimum(const TabularMdp& mdp,
                                                  const SupportMask& mask) {
  validate_mdp(mdp);
  if (mask.n_states != mdp.n_states || mask.n_actions != mdp.n_actions)
    detail::fail("support_constrained_optimum: mask shape mismatch");
  for (int s = 0; s < mdp.n_states; ++s)
    if (!mask.row_any(s))
      detail::fail("support_constrained_optimum: empty mask row at s=" +
                   std::to_string(s));
  const int S = mdp.n_states, A = mdp.n_actions;
  std::vector<double> v(size_t(S), 0.0), nv(size_t(S), 0.0);
  const double step_tol = 1e-13 * std::max(1.0, mdp.v_max()) *
                          std::max(1e-10, 1.0 - mdp.gamma);
  double prev_step = HUGE_VAL;
  for (long iter = 0; iter < 1000000; ++iter) {
    double step = 0.0;
    for (int s = 0; s < S; ++s) {
      double best = -HUGE_VAL;
      for (int a = 0; a < A; ++a) {
        if (!mask.at(s, a)) continue;
        const double* row =
            mdp.transition.data() + (size_t(s) * A + a) * S;
        double acc = mdp.r(s, a);
        for (int s2 = 0; s2 < S; ++s2) acc += mdp.gamma * row[s2] * v[size_t(s2)];
        best = std::max(best, acc);
      }
      nv[size_t(s)] = best;
      step = std::max(step, std::abs(nv[size_t(s)] - v[size_t(s)]));
    }
    v.swap(nv);
    if (step <= step_tol) break;
    // Rounding noise can hold the step just above the tolerance; once the
    // contraction stops making progress there is nothing left to gain.
    if (step >= prev_step && step <= 1e6 * DBL_EPSILON * (mdp.v_max() + 1.0))
      break;
    prev_step = step;
  }
  SupportOptimum out;
  out.policy = TabularPolicy::zeros(S, A);
  for (int s = 0; s < S; ++s) {
    int best_a = -1;
    double best = -HUGE_VAL;
    for (int a = 0; a < A; ++a) {
      if (!mask.at(s, a)) continue;
      const double* row = mdp.transition.data() + (size_t(s) * A + a) * S;
      double acc = mdp.r(s, a);
      for (int s2 = 0; s2 < S; ++s2) acc += mdp.gamma * row[s2] * v[size_t(s2)];
      if (acc > best) {
        best = acc;
        best_a = a;
      }
    }
    out.policy.at(s, best_a) = 1.0;
  }
  out.q = exact_q(mdp, out.policy);
  std::vector<double> vstar = detail::state_values(out.policy, out.q);
  out.eta = detail::dot(mdp.initial_dist, vstar);
  return out;
}

}  // namespace strlab
