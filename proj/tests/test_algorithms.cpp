#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "strlab/algorithms.hpp"
#include "test_util.hpp"

using namespace strlab;

namespace {

// Plain unrestricted value iteration, written independently of the
// library's masked version.
double global_optimum_eta(const TabularMdp& m, int n_iter,
                          std::vector<double>* v_out = nullptr) {
  std::vector<double> v(size_t(m.n_states), 0.0);
  for (int k = 0; k < n_iter; ++k) {
    std::vector<double> nv(size_t(m.n_states), 0.0);
    for (int s = 0; s < m.n_states; ++s) {
      double best = -HUGE_VAL;
      for (int a = 0; a < m.n_actions; ++a) {
        double acc = m.r(s, a);
        for (int s2 = 0; s2 < m.n_states; ++s2)
          acc += m.gamma * m.p(s, a, s2) * v[size_t(s2)];
        best = std::max(best, acc);
      }
      nv[size_t(s)] = best;
    }
    v = nv;
  }
  double eta = 0.0;
  for (int s = 0; s < m.n_states; ++s) eta += m.initial_dist[size_t(s)] * v[size_t(s)];
  if (v_out) *v_out = v;
  return eta;
}

// Masked value iteration oracle, same shape but loops only allowed pairs.
double masked_optimum_eta(const TabularMdp& m, const SupportMask& mask,
                          int n_iter) {
  std::vector<double> v(size_t(m.n_states), 0.0);
  for (int k = 0; k < n_iter; ++k) {
    std::vector<double> nv(size_t(m.n_states), 0.0);
    for (int s = 0; s < m.n_states; ++s) {
      double best = -HUGE_VAL;
      for (int a = 0; a < m.n_actions; ++a) {
        if (!mask.at(s, a)) continue;
        double acc = m.r(s, a);
        for (int s2 = 0; s2 < m.n_states; ++s2)
          acc += m.gamma * m.p(s, a, s2) * v[size_t(s2)];
        best = std::max(best, acc);
      }
      nv[size_t(s)] = best;
    }
    v = nv;
  }
  double eta = 0.0;
  for (int s = 0; s < m.n_states; ++s) eta += m.initial_dist[size_t(s)] * v[size_t(s)];
  return eta;
}

}  // namespace

TEST_CASE("zero iterations returns only the starting policy", "[algorithms]") {
  CounterRng rng(82001);
  TabularMdp m = testutil::random_mdp(rng, 4, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 4, 3);
  SupportMask mask = SupportMask::full(4, 3);
  IterationTrace t = run_variant(m, beta, mask, VariantSpec::str(0.05), 0);
  REQUIRE(t.rows.size() == 1);
  REQUIRE(t.policies.size() == 1);
  CHECK(std::memcmp(t.policies[0].probs.data(), beta.probs.data(),
                    beta.probs.size() * sizeof(double)) == 0);
  CHECK(t.rows[0].iteration == 0);
  CHECK(t.rows[0].kl_step_max == 0.0);
  CHECK(t.rows[0].q_improve_max == 0.0);
  CHECK_FALSE(t.rows[0].strict_flag);
  CHECK_FALSE(t.converged);
  CHECK(t.n_strict_improvements == 0);
}

TEST_CASE("masked optimum can fall short of the global one", "[algorithms]") {
  // One state, two self-loop actions with different rewards. Masking the
  // good action out caps the achievable value at the bad action's return.
  TabularMdp m = TabularMdp::zeros(1, 2, 0.5);
  m.transition[0] = 1.0;  // (s=0, a=0) -> s=0
  m.transition[1] = 1.0;  // (s=0, a=1) -> s=0
  m.reward[0] = 0.2;
  m.reward[1] = 1.0;
  m.initial_dist[0] = 1.0;
  SupportMask only_bad = SupportMask::full(1, 2);
  only_bad.set(0, 1, false);
  SupportOptimum opt = support_constrained_optimum(m, only_bad);
  CHECK(opt.eta == Catch::Approx(0.2 / 0.5).margin(1e-12));
  CHECK(opt.policy(0, 0) == 1.0);
  std::vector<double> dummy;
  double eta_global = global_optimum_eta(m, 200);
  CHECK(eta_global == Catch::Approx(1.0 / 0.5).margin(1e-9));
  CHECK(opt.eta < eta_global - 1.0);
}

TEST_CASE("masked optimum with a full mask matches value iteration",
          "[algorithms]") {
  CounterRng rng(82002);
  for (int trial = 0; trial < 20; ++trial) {
    int S = 2 + int(rng.next_u64() % 8);
    int A = 2 + int(rng.next_u64() % 4);
    double gamma = 0.5 + 0.4 * rng.next_double();
    TabularMdp m = testutil::random_mdp(rng, S, A, gamma);
    SupportMask full = SupportMask::full(S, A);
    SupportOptimum opt = support_constrained_optimum(m, full);
    double eta_ref = global_optimum_eta(m, 2000);
    CHECK(opt.eta == Catch::Approx(eta_ref).margin(1e-8));
    // The greedy policy must be optimal against its own exact Q.
    for (int s = 0; s < S; ++s) {
      double best = -HUGE_VAL;
      for (int a = 0; a < A; ++a) best = std::max(best, opt.q(s, a));
      for (int a = 0; a < A; ++a)
        if (opt.policy(s, a) == 1.0)
          CHECK(opt.q(s, a) == Catch::Approx(best).margin(1e-9));
    }
  }
}

TEST_CASE("masked optimum matches a masked oracle on random masks",
          "[algorithms]") {
  CounterRng rng(82003);
  for (int trial = 0; trial < 20; ++trial) {
    int S = 2 + int(rng.next_u64() % 6);
    int A = 2 + int(rng.next_u64() % 4);
    TabularMdp m = testutil::random_mdp(rng, S, A, 0.85);
    SupportMask mask = SupportMask::full(S, A);
    for (int s = 0; s < S; ++s) {
      int keep = int(rng.next_u64() % A);
      for (int a = 0; a < A; ++a)
        if (a != keep && rng.next_double() < 0.5) mask.set(s, a, false);
    }
    SupportOptimum opt = support_constrained_optimum(m, mask);
    CHECK(opt.eta == Catch::Approx(masked_optimum_eta(m, mask, 2000))
                         .margin(1e-8));
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        if (opt.policy(s, a) > 0.0) CHECK(mask.at(s, a));
  }
}

TEST_CASE("single-action mask forces the policy", "[algorithms]") {
  CounterRng rng(82004);
  TabularMdp m = testutil::random_mdp(rng, 6, 3, 0.9);
  SupportMask mask = SupportMask::none(6, 3);
  TabularPolicy forced = TabularPolicy::zeros(6, 3);
  for (int s = 0; s < 6; ++s) {
    int a = int(rng.next_u64() % 3);
    mask.set(s, a, true);
    forced.at(s, a) = 1.0;
  }
  SupportOptimum opt = support_constrained_optimum(m, mask);
  QTable q_ref = exact_q(m, forced);
  CHECK(testutil::max_abs_diff(opt.q.values, q_ref.values) <= 1e-9);
  CHECK(opt.eta == Catch::Approx(performance(m, forced)).margin(1e-10));
  CHECK(std::memcmp(opt.policy.probs.data(), forced.probs.data(),
                    forced.probs.size() * sizeof(double)) == 0);
  SupportMask holed = SupportMask::none(6, 3);
  CHECK_THROWS_WITH(support_constrained_optimum(m, holed),
                    Catch::Matchers::ContainsSubstring("s=0"));
}

TEST_CASE("projective iteration reaches the in-support optimum",
          "[algorithms]") {
  CounterRng rng(82005);
  TabularMdp m = testutil::random_mdp(rng, 5, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 5, 3);  // full support
  SupportMask mask = SupportMask::full(5, 3);
  SupportOptimum opt = support_constrained_optimum(m, mask);
  TraceOptions to;
  to.reference_mdp = &m;
  IterationTrace t =
      run_variant(m, beta, mask, VariantSpec::str(0.05), 300, to);
  REQUIRE(t.rows.size() == 301);
  // Exact evaluation: every step may only improve Q pointwise.
  for (size_t i = 1; i < t.rows.size(); ++i)
    CHECK(t.rows[i].q_improve_min >= -1e-8);
  CHECK(t.rows.back().eta_true == Catch::Approx(opt.eta).margin(1e-6));
  CHECK(t.rows.back().eta_emp == Catch::Approx(opt.eta).margin(1e-6));
  CHECK(t.converged);
  CHECK(t.n_strict_improvements >= 1);
  // Improvement is strict until the iterates settle: no strict step may
  // follow a non-strict one.
  bool seen_flat = false;
  for (size_t i = 1; i < t.rows.size(); ++i) {
    if (!t.rows[i].strict_flag) seen_flat = true;
    if (seen_flat) CHECK_FALSE(t.rows[i].strict_flag);
  }
}

TEST_CASE("tiny budget keeps the first iterate near the behavior policy",
          "[algorithms]") {
  CounterRng rng(82006);
  TabularMdp m = testutil::random_mdp(rng, 6, 3, 0.85);
  TabularPolicy beta = testutil::random_policy(rng, 6, 3);
  SupportMask mask = SupportMask::full(6, 3);
  const double eps = 1e-6;
  IterationTrace t = run_variant(m, beta, mask, VariantSpec::awr(eps), 3);
  std::vector<DivergenceRow> div = policy_divergences(t.policies[1], beta);
  for (const DivergenceRow& d : div) {
    CHECK(d.tv <= std::sqrt(eps / 2.0) + 1e-9);
    CHECK(d.kl_pq <= eps + 1e-9);
  }
  // The behavior advantage never changes, so the iteration is idempotent
  // after the first step.
  CHECK(std::memcmp(t.policies[2].probs.data(), t.policies[1].probs.data(),
                    t.policies[1].probs.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(t.policies[3].probs.data(), t.policies[1].probs.data(),
                    t.policies[1].probs.size() * sizeof(double)) == 0);
  CHECK(t.converged);
  CHECK(t.rows[2].tv_step_max == 0.0);
}

TEST_CASE("behavior-anchored iteration stays inside the budget every step",
          "[algorithms]") {
  CounterRng rng(82007);
  TabularMdp m = testutil::random_mdp(rng, 6, 4, 0.85);
  TabularPolicy beta = testutil::random_policy(rng, 6, 4);
  SupportMask mask = SupportMask::full(6, 4);
  const double eps = 0.07;
  IterationTrace t = run_variant(m, beta, mask, VariantSpec::awac(eps), 10);
  for (size_t i = 1; i < t.policies.size(); ++i) {
    std::vector<DivergenceRow> div = policy_divergences(t.policies[i], beta);
    for (const DivergenceRow& d : div) CHECK(d.kl_pq <= eps + 1e-6);
    CHECK(t.rows[i].kl_to_beta_mean <= eps + 1e-6);
  }
}

TEST_CASE("two-stage prior composes two tilts of the behavior policy",
          "[algorithms]") {
  CounterRng rng(82008);
  TabularMdp m = testutil::random_mdp(rng, 5, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 5, 3);
  SupportMask mask = SupportMask::full(5, 3);
  VariantSpec spec = VariantSpec::abm(0.05);
  IterationTrace t = run_variant(m, beta, mask, spec, 1);
  // Replicate the first iteration by hand: the advantage of the starting
  // policy tilts the behavior policy into a prior, then tilts the prior.
  QTable q = exact_q(m, beta);
  QTable adv = advantage_from_q(q, beta);
  TabularPolicy prior = constrained_update(beta, adv, spec.constrained).policy;
  TabularPolicy expect =
      constrained_update(prior, adv, spec.constrained).policy;
  CHECK(testutil::max_abs_diff(t.policies[1].probs, expect.probs) == 0.0);
  // Tilts preserve support, so the iterate stays inside the behavior's.
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a)
      if (beta(s, a) == 0.0) CHECK(t.policies[1](s, a) == 0.0);
}

TEST_CASE("states without support information keep their behavior row",
          "[algorithms]") {
  CounterRng rng(82009);
  TabularMdp m = testutil::random_mdp(rng, 5, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 5, 3);
  SupportMask mask = SupportMask::full(5, 3);
  for (int a = 0; a < 3; ++a) mask.set(2, a, false);  // nothing known at s=2
  IterationTrace t = run_variant(m, beta, mask, VariantSpec::str(0.05), 20);
  for (size_t i = 0; i < t.policies.size(); ++i)
    for (int a = 0; a < 3; ++a)
      CHECK(t.policies[i](2, a) == beta(2, a));
  // Updated states obey the mask from the first step on.
  for (size_t i = 1; i < t.policies.size(); ++i)
    for (int s = 0; s < 5; ++s) {
      if (s == 2) continue;
      for (int a = 0; a < 3; ++a)
        if (!mask.at(s, a)) CHECK(t.policies[i](s, a) == 0.0);
    }
}

namespace {

// Exact expected undiscounted return truncated at `steps`, by backward
// finite-horizon recursion. Independent oracle for the rollout columns.
double truncated_return_oracle(const TabularMdp& m, const TabularPolicy& pi,
                               int steps) {
  std::vector<double> v(size_t(m.n_states), 0.0);
  for (int k = 0; k < steps; ++k) {
    std::vector<double> nv(size_t(m.n_states), 0.0);
    for (int s = 0; s < m.n_states; ++s) {
      double acc = 0.0;
      for (int a = 0; a < m.n_actions; ++a) {
        double q = m.r(s, a);
        for (int s2 = 0; s2 < m.n_states; ++s2)
          q += m.p(s, a, s2) * v[size_t(s2)];
        acc += pi(s, a) * q;
      }
      nv[size_t(s)] = acc;
    }
    v = nv;
  }
  double out = 0.0;
  for (int s = 0; s < m.n_states; ++s)
    out += m.initial_dist[size_t(s)] * v[size_t(s)];
  return out;
}

}  // namespace

TEST_CASE("trace metrics are populated and consistent", "[algorithms]") {
  CounterRng rng(82010);
  TabularMdp m = testutil::random_mdp(rng, 6, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 6, 3);
  SupportMask mask = SupportMask::full(6, 3);
  TraceOptions to;
  to.reference_mdp = &m;
  to.ood_mask = &mask;
  to.n_eval_rollouts = 400;
  to.rollout_step_limit = 40;
  to.rollout_seed = 99;
  IterationTrace t = run_variant(m, beta, mask, VariantSpec::str(0.05), 5, to);
  for (const IterationRow& row : t.rows) {
    CHECK(std::isfinite(row.eta_true));
    // Evaluation and reference model coincide here.
    CHECK(row.eta_emp == Catch::Approx(row.eta_true).margin(1e-9));
    CHECK(row.return_trunc_se > 0.0);
    double expect =
        truncated_return_oracle(m, t.policies[size_t(row.iteration)], 40);
    CHECK(std::abs(row.return_trunc_mean - expect) <=
          3.5 * row.return_trunc_se + 1e-6);
    CHECK(row.ood_ratio == 0.0);  // full mask: nothing can fall outside
    CHECK(std::isfinite(row.kl_to_beta_mean));
    CHECK(row.strict_flag == (row.q_improve_max > 1e-8));
  }
  CHECK(t.rows[0].kl_to_beta_mean == 0.0);
}

TEST_CASE("iteration engine validates shapes", "[algorithms]") {
  CounterRng rng(82011);
  TabularMdp m = testutil::random_mdp(rng, 4, 3, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 4, 3);
  SupportMask mask = SupportMask::full(4, 3);
  CHECK_THROWS_AS(
      run_variant(m, beta, SupportMask::full(5, 3), VariantSpec::str(0.05), 1),
      std::invalid_argument);
  CHECK_THROWS_AS(run_variant(m, beta, mask, VariantSpec::str(0.05), -1),
                  std::invalid_argument);
  TabularMdp wrong = testutil::random_mdp(rng, 6, 3, 0.8);
  CHECK_THROWS_AS(run_variant(wrong, beta, mask, VariantSpec::str(0.05), 1),
                  std::invalid_argument);
  TraceOptions to;
  TabularMdp ref = testutil::random_mdp(rng, 5, 3, 0.8);
  to.reference_mdp = &ref;
  CHECK_THROWS_AS(run_variant(m, beta, mask, VariantSpec::str(0.05), 1, to),
                  std::invalid_argument);
}

TEST_CASE("evaluation model may carry a trailing absorbing state",
          "[algorithms]") {
  CounterRng rng(82012);
  // Roll a dataset, build its empirical model (one sink state larger),
  // and check the engine evaluates policies on it without shape trouble.
  TabularMdp m = testutil::random_mdp(rng, 5, 2, 0.8);
  TabularPolicy beta = testutil::random_policy(rng, 5, 2);
  TransitionDataset d = rollout_dataset(m, beta, 400, 50, 7);
  TabularMdp emp = empirical_mdp(d, 0.0);
  REQUIRE(emp.n_states == 6);
  TabularPolicy beta_hat = estimate_behavior(d);
  SupportMask mask = support_mask_from_dataset(d);
  TraceOptions to;
  to.reference_mdp = &m;
  to.ood_mask = &mask;
  IterationTrace t =
      run_variant(emp, beta_hat, mask, VariantSpec::str(0.05), 8, to);
  REQUIRE(t.rows.size() == 9);
  for (const IterationRow& row : t.rows) {
    CHECK(std::isfinite(row.eta_emp));
    CHECK(std::isfinite(row.eta_true));
  }
  // From the first update on, the iterates place no mass outside the data.
  for (size_t i = 1; i < t.rows.size(); ++i)
    CHECK(t.rows[i].ood_ratio == 0.0);
}
