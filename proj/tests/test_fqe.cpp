#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "strlab/algorithms.hpp"
#include "strlab/fqe.hpp"
#include "test_util.hpp"

using namespace strlab;

namespace {

// Deterministic 6-state, 2-action ring: action 0 steps forward with
// reward depending on the state, action 1 stays put for a flat reward.
TabularMdp ring_mdp(double gamma) {
  const int S = 6;
  TabularMdp m = TabularMdp::zeros(S, 2, gamma);
  for (int s = 0; s < S; ++s) {
    m.transition[(size_t(s) * 2 + 0) * S + (s + 1) % S] = 1.0;
    m.transition[(size_t(s) * 2 + 1) * S + s] = 1.0;
    m.reward[size_t(s) * 2 + 0] = (s == 0) ? 1.0 : 0.1;
    m.reward[size_t(s) * 2 + 1] = 0.25;
  }
  m.initial_dist.assign(size_t(S), 0.0);
  m.initial_dist[0] = 1.0;
  return m;
}

// One record per pair, rewards and successors straight from the model,
// so the empirical model reproduces it exactly.
TransitionDataset exhaustive_dataset(const TabularMdp& m) {
  TransitionDataset d;
  d.n_states = m.n_states;
  d.n_actions = m.n_actions;
  d.gamma = m.gamma;
  d.seed = 0;
  for (int s = 0; s < m.n_states; ++s)
    for (int a = 0; a < m.n_actions; ++a) {
      int s2 = 0;
      for (int c = 0; c < m.n_states; ++c)
        if (m.p(s, a, c) > 0.5) s2 = c;
      d.records.push_back({s, a, m.r(s, a), s2, false});
    }
  return d;
}

}  // namespace

TEST_CASE("tabular features reproduce exact dynamic programming", "[fqe]") {
  TabularMdp m = ring_mdp(0.9);
  TransitionDataset d = exhaustive_dataset(m);
  CounterRng rng(83001);
  TabularPolicy pi = testutil::random_policy(rng, 6, 2);
  FqeConfig cfg;
  cfg.n_iterations = 12;
  cfg.ridge = 0.0;
  cfg.v_max = m.v_max();
  FqeResult res = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  QTable oracle = testutil::bellman_iteration_oracle(m, pi, 12);
  CHECK(testutil::max_abs_diff(res.q.values, oracle.values) <= 1e-8);
  // More rounds converge to the exact evaluation.
  cfg.n_iterations = 600;
  FqeResult res2 = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  QTable exact = exact_q(m, pi);
  CHECK(testutil::max_abs_diff(res2.q.values, exact.values) <= 1e-8);
}

TEST_CASE("zero discount recovers mean rewards", "[fqe]") {
  TabularMdp m = ring_mdp(0.0);
  TransitionDataset d = exhaustive_dataset(m);
  // Duplicate one pair with a different reward to exercise averaging.
  d.records.push_back({0, 0, 0.5, 1, false});
  TabularPolicy pi = TabularPolicy::uniform(6, 2);
  FqeConfig cfg;
  cfg.n_iterations = 1;
  cfg.v_max = 1.0;
  FqeResult res = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  CHECK(res.q(0, 0) == Catch::Approx(0.75).margin(1e-12));
  CHECK(res.q(2, 1) == Catch::Approx(0.25).margin(1e-12));
  cfg.n_iterations = 5;
  FqeResult rep = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  CHECK(testutil::max_abs_diff(res.q.values, rep.q.values) <= 1e-12);
}

TEST_CASE("successive rounds contract at the discount rate", "[fqe]") {
  TabularMdp m = ring_mdp(0.8);
  TransitionDataset d = exhaustive_dataset(m);
  CounterRng rng(83002);
  TabularPolicy pi = testutil::random_policy(rng, 6, 2);
  FeatureMap f = FeatureMap::one_hot(6, 2);
  FqeConfig cfg;
  cfg.v_max = m.v_max();
  std::vector<QTable> iterates;
  for (int k = 0; k <= 8; ++k) {
    cfg.n_iterations = k;
    iterates.push_back(fqe_run(d, pi, f, cfg).q);
  }
  double prev = -1.0;
  for (int k = 1; k <= 8; ++k) {
    double diff = testutil::max_abs_diff(iterates[size_t(k)].values,
                                         iterates[size_t(k) - 1].values);
    if (k > 1) CHECK(diff <= 0.8 * prev + 1e-9);
    prev = diff;
  }
}

TEST_CASE("missing coverage is rejected without ridge", "[fqe]") {
  TabularMdp m = ring_mdp(0.9);
  TransitionDataset d = exhaustive_dataset(m);
  d.records.pop_back();  // drop pair (5, 1)
  TabularPolicy pi = TabularPolicy::uniform(6, 2);
  FeatureMap f = FeatureMap::one_hot(6, 2);
  FqeConfig cfg;
  cfg.n_iterations = 3;
  cfg.v_max = m.v_max();
  CHECK_THROWS_WITH(fqe_run(d, pi, f, cfg),
                    Catch::Matchers::ContainsSubstring("rank"));
  cfg.ridge = 1e-6;
  FqeResult res = fqe_run(d, pi, f, cfg);
  // The unseen pair has no evidence; ridge pins its weight at zero.
  CHECK(res.q(5, 1) == Catch::Approx(0.0).margin(1e-12));
  CHECK(res.q(0, 0) > 0.0);
}

TEST_CASE("error weighting ignores unvisited pairs", "[fqe]") {
  QTable a = QTable::zeros(2, 2);
  QTable b = QTable::zeros(2, 2);
  b.at(0, 0) = 1.0;
  b.at(0, 1) = 3.0;
  b.at(1, 0) = 100.0;
  b.at(1, 1) = -7.0;
  std::vector<double> rho = {0.5, 0.5, 0.0, 0.0};
  CHECK(fqe_error(a, b, rho) == Catch::Approx(2.0).margin(1e-12));
  std::vector<double> zero = {0.0, 0.0, 0.0, 0.0};
  CHECK(fqe_error(a, b, zero) == 0.0);
  std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(fqe_error(a, b, wrong), std::invalid_argument);
}

TEST_CASE("error ceiling endpoints and limits", "[fqe]") {
  CHECK(fqe_bound(0, 0.9, 10.0, 1.0, 0.5) == 10.0);
  // With enormous datasets the statistical term vanishes and only the
  // initialization bias remains.
  long n = 1000000000000L;
  double eps_gb = fqe_generalization_term(10.0, 408.0, 50, 0.05, n, 0.0);
  double bound = fqe_bound(50, 0.9, 10.0, 1.0, eps_gb);
  double floor = std::pow(0.9, 50) * 10.0;
  CHECK(bound >= floor);
  CHECK(bound <= 1.05 * floor);
  // More data can only help.
  double worse = fqe_bound(
      50, 0.9, 10.0, 1.0,
      fqe_generalization_term(10.0, 408.0, 50, 0.05, 1000, 0.0));
  CHECK(worse > bound);
  // More rounds shrink the initialization bias toward the noise floor.
  double b5 = fqe_bound(5, 0.9, 10.0, 1.0, 1e-12);
  double b50 = fqe_bound(50, 0.9, 10.0, 1.0, 1e-12);
  CHECK(b50 < b5);
  CHECK_THROWS_AS(fqe_generalization_term(10.0, 408.0, 0, 0.05, n, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fqe_bound(-1, 0.9, 10.0, 1.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(fqe_bound(5, 1.0, 10.0, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("random features have unit rows and fixed seeds", "[fqe]") {
  FeatureMap f = FeatureMap::random_projection(5, 3, 8, 42);
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 3; ++a) {
      double norm2 = 0.0;
      for (int j = 0; j < 8; ++j) norm2 += f.row(s, a)[j] * f.row(s, a)[j];
      CHECK(norm2 == Catch::Approx(1.0).margin(1e-12));
    }
  FeatureMap g = FeatureMap::random_projection(5, 3, 8, 42);
  CHECK(testutil::max_abs_diff(f.phi, g.phi) == 0.0);
  FeatureMap h = FeatureMap::random_projection(5, 3, 8, 43);
  CHECK(testutil::max_abs_diff(f.phi, h.phi) > 0.0);
  CHECK_THROWS_AS(FeatureMap::random_projection(5, 3, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("aggregated states share their estimates", "[fqe]") {
  // Two states per group; the map has one indicator per (group, action).
  std::vector<int> groups = {0, 0, 1, 1, 2, 2};
  FeatureMap f = FeatureMap::state_aggregation(2, groups);
  CHECK(f.n_features == 6);
  for (int s = 0; s < 6; ++s)
    for (int a = 0; a < 2; ++a) {
      for (int j = 0; j < 6; ++j)
        CHECK(f.row(s, a)[j] == ((j == groups[size_t(s)] * 2 + a) ? 1.0 : 0.0));
    }
  TabularMdp m = ring_mdp(0.9);
  TransitionDataset d = exhaustive_dataset(m);
  TabularPolicy pi = TabularPolicy::uniform(6, 2);
  FqeConfig cfg;
  cfg.n_iterations = 40;
  cfg.v_max = m.v_max();
  FqeResult res = fqe_run(d, pi, f, cfg);
  for (int a = 0; a < 2; ++a) {
    CHECK(res.q(0, a) == Catch::Approx(res.q(1, a)).margin(1e-12));
    CHECK(res.q(2, a) == Catch::Approx(res.q(3, a)).margin(1e-12));
  }
  CHECK_THROWS_AS(FeatureMap::state_aggregation(2, {0, -1}),
                  std::invalid_argument);
}

TEST_CASE("clipping keeps targets inside the value range", "[fqe]") {
  TabularMdp m = ring_mdp(0.9);
  TransitionDataset d = exhaustive_dataset(m);
  // Corrupt one reward far beyond the value scale.
  d.records[0].r = 1e6;
  TabularPolicy pi = TabularPolicy::uniform(6, 2);
  FqeConfig cfg;
  cfg.n_iterations = 30;
  cfg.v_max = m.v_max();
  FqeResult res = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  for (double q : res.q.values) CHECK(q <= cfg.v_max + 1e-9);
  cfg.clip_targets = false;
  FqeResult wild = fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg);
  CHECK(wild.q(0, 0) > cfg.v_max);
}

TEST_CASE("concentrability on a single-state model", "[fqe]") {
  TabularMdp m = TabularMdp::zeros(1, 2, 0.5);
  m.transition[0] = 1.0;
  m.transition[1] = 1.0;
  m.reward[0] = 1.0;
  m.reward[1] = 0.0;
  m.initial_dist[0] = 1.0;
  TransitionDataset d;
  d.n_states = 1;
  d.n_actions = 2;
  d.gamma = 0.5;
  d.records.push_back({0, 0, 1.0, 0, false});
  d.records.push_back({0, 1, 0.0, 0, false});
  TabularPolicy only_a0 = TabularPolicy::zeros(1, 2);
  only_a0.at(0, 0) = 1.0;
  // The policy visits pair (0,0) with mass 1 at every step; the data has
  // frequency 1/2 there, so the ratio is 2 everywhere.
  CHECK(measured_concentrability(m, only_a0, d) ==
        Catch::Approx(2.0).margin(1e-12));
  TabularPolicy only_a1 = TabularPolicy::zeros(1, 2);
  only_a1.at(0, 1) = 1.0;
  TransitionDataset d0;
  d0.n_states = 1;
  d0.n_actions = 2;
  d0.gamma = 0.5;
  d0.records.push_back({0, 0, 1.0, 0, false});
  CHECK(std::isinf(measured_concentrability(m, only_a1, d0)));
  TabularPolicy mixed = TabularPolicy::uniform(1, 2);
  CHECK(measured_concentrability(m, mixed, d) ==
        Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("evaluation error shrinks with exact features and grows with lossy ones",
          "[fqe]") {
  TabularMdp m = ring_mdp(0.9);
  TransitionDataset d = exhaustive_dataset(m);
  CounterRng rng(83003);
  TabularPolicy pi = testutil::random_policy(rng, 6, 2);
  OccupancyPair occ = occupancy(m, pi);
  QTable exact = exact_q(m, pi);
  FqeConfig cfg;
  cfg.n_iterations = 400;
  cfg.v_max = m.v_max();
  double err_tabular =
      fqe_error(fqe_run(d, pi, FeatureMap::one_hot(6, 2), cfg).q, exact,
                occ.rho);
  std::vector<int> one_group(6, 0);
  double err_lumped =
      fqe_error(fqe_run(d, pi, FeatureMap::state_aggregation(2, one_group), cfg).q,
                exact, occ.rho);
  CHECK(err_tabular <= 1e-8);
  CHECK(err_lumped > 1e-3);
}
