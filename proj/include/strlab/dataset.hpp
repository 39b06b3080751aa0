#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "strlab/mdp.hpp"
#include "strlab/rng.hpp"

namespace strlab {

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool done = false;  // episode ended after this step (terminal or cutoff)
};

/**
 * Offline dataset of transitions plus the metadata needed to rebuild the
 * empirical model: state/action space sizes, discount, collection seed.
 */
struct TransitionDataset {
  std::vector<Transition> records;
  uint64_t seed = 0;
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
};

/** Boolean state-action mask with a record of how it was derived. */
struct SupportMask {
  enum class Source { dataset_counts, policy_threshold };

  int n_states = 0;
  int n_actions = 0;
  std::vector<uint8_t> m;
  Source source = Source::dataset_counts;

  bool at(int s, int a) const { return m[size_t(s) * n_actions + a] != 0; }
  void set(int s, int a, bool v) { m[size_t(s) * n_actions + a] = v ? 1 : 0; }
  bool row_any(int s) const {
    for (int a = 0; a < n_actions; ++a)
      if (at(s, a)) return true;
    return false;
  }

  static SupportMask full(int n_states, int n_actions,
                          Source source = Source::policy_threshold) {
    SupportMask mk;
    mk.n_states = n_states;
    mk.n_actions = n_actions;
    mk.m.assign(size_t(n_states) * n_actions, 1);
    mk.source = source;
    return mk;
  }

  static SupportMask none(int n_states, int n_actions,
                          Source source = Source::policy_threshold) {
    SupportMask mk;
    mk.n_states = n_states;
    mk.n_actions = n_actions;
    mk.m.assign(size_t(n_states) * n_actions, 0);
    mk.source = source;
    return mk;
  }
};

namespace detail {

inline void check_dataset(const TransitionDataset& d) {
  if (d.n_states <= 0 || d.n_actions <= 0)
    fail("dataset: n_states and n_actions must be positive");
  for (size_t i = 0; i < d.records.size(); ++i) {
    const Transition& t = d.records[i];
    if (t.s < 0 || t.s >= d.n_states || t.s_next < 0 || t.s_next >= d.n_states)
      fail("dataset: record " + std::to_string(i) + " has out-of-range state");
    if (t.a < 0 || t.a >= d.n_actions)
      fail("dataset: record " + std::to_string(i) + " has out-of-range action");
    if (!std::isfinite(t.r))
      fail("dataset: record " + std::to_string(i) + " has non-finite reward");
  }
}

}  // namespace detail

/** Visit counts n(s,a) of a dataset. */
inline std::vector<long> pair_counts(const TransitionDataset& d) {
  std::vector<long> n(size_t(d.n_states) * d.n_actions, 0);
  for (const Transition& t : d.records) n[size_t(t.s) * d.n_actions + t.a]++;
  return n;
}

/**
 * Rolls transitions from an MDP under a behavior policy. Episodes start
 * from the MDP's initial distribution and restart after reaching a
 * terminal state or after max_episode_len steps; the done flag marks both
 * kinds of episode end. Deterministic given the seed.
 */
inline TransitionDataset rollout_dataset(const TabularMdp& mdp,
                                         const TabularPolicy& behavior,
                                         long n_transitions,
                                         int max_episode_len, uint64_t seed,
                                         const std::set<int>& terminal_states = {}) {
  validate_policy(behavior, mdp.n_states, mdp.n_actions);
  if (n_transitions < 1)
    detail::fail("rollout_dataset: n_transitions must be at least 1");
  if (max_episode_len < 1)
    detail::fail("rollout_dataset: max_episode_len must be at least 1");
  TransitionDataset out;
  out.seed = seed;
  out.n_states = mdp.n_states;
  out.n_actions = mdp.n_actions;
  out.gamma = mdp.gamma;
  out.records.reserve(size_t(n_transitions));
  CounterRng rng(seed, /*stream=*/1);
  int s = rng.sample(mdp.initial_dist);
  int steps = 0;
  while (long(out.records.size()) < n_transitions) {
    int a = rng.sample(behavior.row(s), mdp.n_actions);
    const double* row =
        mdp.transition.data() + (size_t(s) * mdp.n_actions + a) * mdp.n_states;
    int s2 = rng.sample(row, mdp.n_states);
    ++steps;
    bool done = terminal_states.count(s2) > 0 || steps >= max_episode_len;
    out.records.push_back({s, a, mdp.r(s, a), s2, done});
    if (done) {
      s = rng.sample(mdp.initial_dist);
      steps = 0;
    } else {
      s = s2;
    }
  }
  return out;
}

struct TruncatedReturn {
  double mean = 0.0;
  double se = 0.0;
};

/**
 * Monte Carlo estimate of the undiscounted return summed over at most
 * step_limit steps per episode. Mean and standard error over rollouts;
 * deterministic given seed and stream. n_rollouts = 0 yields {0, 0}.
 */
inline TruncatedReturn truncated_return(const TabularMdp& mdp,
                                        const TabularPolicy& pi,
                                        int step_limit, int n_rollouts,
                                        uint64_t seed, uint64_t stream = 0) {
  validate_policy(pi, mdp.n_states, mdp.n_actions);
  if (n_rollouts < 0)
    detail::fail("truncated_return: n_rollouts must be non-negative");
  if (n_rollouts > 0 && step_limit < 1)
    detail::fail("truncated_return: step_limit must be at least 1");
  TruncatedReturn out;
  if (n_rollouts == 0) return out;
  CounterRng rng(seed, stream);
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n_rollouts; ++i) {
    int s = rng.sample(mdp.initial_dist);
    double g = 0.0;
    for (int t = 0; t < step_limit; ++t) {
      int a = rng.sample(pi.row(s), mdp.n_actions);
      g += mdp.r(s, a);
      const double* row = mdp.transition.data() +
                          (size_t(s) * mdp.n_actions + a) * mdp.n_states;
      s = rng.sample(row, mdp.n_states);
    }
    double delta = g - mean;
    mean += delta / (i + 1);
    m2 += delta * (g - mean);
  }
  out.mean = mean;
  if (n_rollouts > 1)
    out.se = std::sqrt(m2 / (double(n_rollouts) * (n_rollouts - 1)));
  return out;
}

/**
 * Empirical MDP of a dataset. Seen pairs get count-frequency transitions
 * and mean observed rewards. Unseen pairs transition with probability one
 * to an added absorbing sink whose self-loop pays nothing; the entry
 * reward is init_value, so Q at unseen pairs equals init_value under any
 * policy. The sink is the last state of the returned model.
 *
 * The returned initial distribution is the empirical episode-start
 * frequency unless an explicit one (over the original states) is given.
 */
inline TabularMdp empirical_mdp(const TransitionDataset& d,
                                double init_value = 0.0,
                                const std::vector<double>* initial_dist = nullptr) {
  detail::check_dataset(d);
  if (!(init_value >= 0.0))
    detail::fail("empirical_mdp: init_value must be nonnegative");
  const int S = d.n_states, A = d.n_actions;
  const int sink = S;
  TabularMdp m = TabularMdp::zeros(S + 1, A, d.gamma, 0.0);
  std::vector<long> n(size_t(S) * A, 0);
  std::vector<double> r_sum(size_t(S) * A, 0.0);
  std::vector<long> nxt(size_t(S) * A * S, 0);
  for (const Transition& t : d.records) {
    size_t sa = size_t(t.s) * A + t.a;
    n[sa]++;
    r_sum[sa] += t.r;
    nxt[sa * S + t.s_next]++;
  }
  double top = 0.0;
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      size_t sa = size_t(s) * A + a;
      if (n[sa] > 0) {
        for (int s2 = 0; s2 < S; ++s2)
          m.p(s, a, s2) = double(nxt[sa * S + s2]) / double(n[sa]);
        m.r(s, a) = r_sum[sa] / double(n[sa]);
      } else {
        m.p(s, a, sink) = 1.0;
        m.r(s, a) = init_value;
      }
      top = std::max(top, m.r(s, a));
    }
  }
  for (int a = 0; a < A; ++a) m.p(sink, a, sink) = 1.0;
  m.r_max = top;
  if (initial_dist != nullptr) {
    if (initial_dist->size() != size_t(S))
      detail::fail("empirical_mdp: initial_dist has wrong size");
    m.initial_dist.assign(initial_dist->begin(), initial_dist->end());
    m.initial_dist.push_back(0.0);
  } else {
    long episodes = 0;
    bool at_start = true;
    for (const Transition& t : d.records) {
      if (at_start) {
        m.initial_dist[size_t(t.s)] += 1.0;
        ++episodes;
      }
      at_start = t.done;
    }
    if (episodes == 0)
      detail::fail("empirical_mdp: empty dataset and no initial_dist given");
    for (auto& v : m.initial_dist) v /= double(episodes);
  }
  return m;
}

/**
 * Count-based behavior estimate: beta(a|s) = n(s,a) / n(s). States that
 * never appear in the dataset get a uniform row.
 */
inline TabularPolicy estimate_behavior(const TransitionDataset& d) {
  detail::check_dataset(d);
  const int S = d.n_states, A = d.n_actions;
  std::vector<long> n = pair_counts(d);
  TabularPolicy pi;
  pi.n_states = S;
  pi.n_actions = A;
  pi.probs.assign(size_t(S) * A, 0.0);
  for (int s = 0; s < S; ++s) {
    long total = 0;
    for (int a = 0; a < A; ++a) total += n[size_t(s) * A + a];
    for (int a = 0; a < A; ++a)
      pi.at(s, a) = total > 0 ? double(n[size_t(s) * A + a]) / double(total)
                              : 1.0 / A;
  }
  return pi;
}

/** Mask of pairs with at least one dataset visit. */
inline SupportMask support_mask_from_dataset(const TransitionDataset& d) {
  detail::check_dataset(d);
  SupportMask mk;
  mk.n_states = d.n_states;
  mk.n_actions = d.n_actions;
  mk.m.assign(size_t(d.n_states) * d.n_actions, 0);
  mk.source = SupportMask::Source::dataset_counts;
  for (const Transition& t : d.records) mk.set(t.s, t.a, true);
  return mk;
}

/** Mask of pairs where the policy exceeds the threshold. */
inline SupportMask support_mask_from_policy(const TabularPolicy& pi,
                                            double threshold = 0.0) {
  SupportMask mk;
  mk.n_states = pi.n_states;
  mk.n_actions = pi.n_actions;
  mk.m.assign(size_t(pi.n_states) * pi.n_actions, 0);
  mk.source = SupportMask::Source::policy_threshold;
  for (int s = 0; s < pi.n_states; ++s)
    for (int a = 0; a < pi.n_actions; ++a)
      if (pi(s, a) > threshold) mk.set(s, a, true);
  return mk;
}

/** Removes every record matching the predicate; metadata is preserved. */
inline TransitionDataset filter_dataset(
    const TransitionDataset& d,
    const std::function<bool(const Transition&)>& drop) {
  TransitionDataset out;
  out.seed = d.seed;
  out.n_states = d.n_states;
  out.n_actions = d.n_actions;
  out.gamma = d.gamma;
  for (const Transition& t : d.records)
    if (!drop(t)) out.records.push_back(t);
  return out;
}

/**
 * Share of above-threshold policy mass that falls outside the mask:
 * |{(s,a): pi(a|s) > t, not mask}| / |{(s,a): pi(a|s) > t}|.
 * With restrict_to_marked_states, states whose mask row is entirely false
 * (never visited by the dataset) are skipped; an empty denominator then
 * counts as zero.
 */
inline double ood_ratio(const TabularPolicy& pi, const SupportMask& mask,
                        double threshold = 0.0,
                        bool restrict_to_marked_states = false) {
  if (pi.n_states != mask.n_states || pi.n_actions != mask.n_actions)
    detail::fail("ood_ratio: mask shape mismatch");
  if (!(threshold >= 0.0))
    detail::fail("ood_ratio: threshold must be nonnegative");
  long total = 0, out = 0;
  for (int s = 0; s < pi.n_states; ++s) {
    if (restrict_to_marked_states && !mask.row_any(s)) continue;
    for (int a = 0; a < pi.n_actions; ++a) {
      if (pi(s, a) > threshold) {
        ++total;
        if (!mask.at(s, a)) ++out;
      }
    }
  }
  if (total == 0) {
    if (restrict_to_marked_states) return 0.0;
    detail::fail("ood_ratio: policy has no mass above threshold");
  }
  return double(out) / double(total);
}

}  // namespace strlab
