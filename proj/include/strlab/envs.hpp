#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "strlab/mdp.hpp"
#include "strlab/rng.hpp"

namespace strlab {

// Grid action indices. Up increases y (the start sits at the bottom).
inline constexpr int kMazeUp = 0;
inline constexpr int kMazeDown = 1;
inline constexpr int kMazeLeft = 2;
inline constexpr int kMazeRight = 3;

/**
 * Grid navigation task. Default: 10x10 grid, start in the bottom-left
 * corner, goal in the top-right, a wall occupying column x=4 from the
 * bottom up to y=7 so the only crossing is along the top rows.
 */
struct MazeSpec {
  int width = 10;
  int height = 10;
  std::vector<std::pair<int, int>> wall_cells = {
      {4, 0}, {4, 1}, {4, 2}, {4, 3}, {4, 4}, {4, 5}, {4, 6}, {4, 7}};
  std::pair<int, int> start_cell = {0, 0};
  std::pair<int, int> goal_cell = {9, 9};
  int step_limit = 25;
  double gamma = 0.9;
  double goal_reward = 1.0;
};

/**
 * Built maze: the model plus the cell-index mapping. States are the
 * width*height grid cells in row-major order (cell (x, y) is state
 * y*width + x) followed by one absorbing state. A move that would land
 * on the goal cell is redirected to the absorbing state and pays
 * goal_reward; every other reward is zero. Moves into walls or off the
 * border are no-ops. Wall cells and the goal cell itself are therefore
 * unreachable states; their rows follow the same movement rule (walls)
 * or feed the absorbing state (goal) purely for uniformity.
 */
struct MazeModel {
  MazeSpec spec;
  TabularMdp mdp;
  int n_cells = 0;
  int absorbing_state = 0;
  int start_state = 0;
  std::vector<char> wall_flag;  // per cell

  int cell_index(int x, int y) const { return y * spec.width + x; }
  int x_of(int cell) const { return cell % spec.width; }
  int y_of(int cell) const { return cell / spec.width; }
  bool is_wall(int x, int y) const {
    return wall_flag[size_t(cell_index(x, y))] != 0;
  }

  /**
   * Start distribution for data collection: uniform over every non-wall
   * cell except the goal. Evaluation keeps the model's own point-mass
   * start; spreading collection starts is what covers the grid at small
   * dataset sizes.
   */
  std::vector<double> collection_start() const {
    std::vector<double> d(size_t(mdp.n_states), 0.0);
    int goal = cell_index(spec.goal_cell.first, spec.goal_cell.second);
    long n_free = 0;
    for (int c = 0; c < n_cells; ++c)
      if (wall_flag[size_t(c)] == 0 && c != goal) ++n_free;
    for (int c = 0; c < n_cells; ++c)
      if (wall_flag[size_t(c)] == 0 && c != goal)
        d[size_t(c)] = 1.0 / double(n_free);
    return d;
  }
};

namespace detail {

inline void maze_fail(const std::string& what) {
  fail("build_maze: " + what);
}

}  // namespace detail

inline MazeModel build_maze(const MazeSpec& spec) {
  if (spec.width < 1 || spec.height < 1)
    detail::maze_fail("grid must be at least 1x1");
  if (!(spec.gamma >= 0.0 && spec.gamma < 1.0))
    detail::maze_fail("gamma must lie in [0, 1)");
  if (!(spec.goal_reward > 0.0))
    detail::maze_fail("goal_reward must be positive");
  if (spec.step_limit < 1) detail::maze_fail("step_limit must be positive");
  auto in_grid = [&](const std::pair<int, int>& c) {
    return c.first >= 0 && c.first < spec.width && c.second >= 0 &&
           c.second < spec.height;
  };
  if (!in_grid(spec.start_cell)) detail::maze_fail("start cell out of grid");
  if (!in_grid(spec.goal_cell)) detail::maze_fail("goal cell out of grid");
  if (spec.start_cell == spec.goal_cell)
    detail::maze_fail("start and goal must differ");

  MazeModel mz;
  mz.spec = spec;
  mz.n_cells = spec.width * spec.height;
  mz.absorbing_state = mz.n_cells;
  mz.start_state =
      spec.start_cell.second * spec.width + spec.start_cell.first;
  mz.wall_flag.assign(size_t(mz.n_cells), 0);
  for (const std::pair<int, int>& w : spec.wall_cells) {
    if (!in_grid(w)) detail::maze_fail("wall cell out of grid");
    if (w == spec.start_cell) detail::maze_fail("wall cell overlaps start");
    if (w == spec.goal_cell) detail::maze_fail("wall cell overlaps goal");
    mz.wall_flag[size_t(w.second * spec.width + w.first)] = 1;
  }
  const int goal = mz.cell_index(spec.goal_cell.first, spec.goal_cell.second);

  const int S = mz.n_cells + 1, A = 4;
  TabularMdp m = TabularMdp::zeros(S, A, spec.gamma, spec.goal_reward);
  const int dx[4] = {0, 0, -1, 1};
  const int dy[4] = {1, -1, 0, 0};
  for (int c = 0; c < mz.n_cells; ++c) {
    if (c == goal) {
      for (int a = 0; a < A; ++a) m.p(c, a, mz.absorbing_state) = 1.0;
      continue;
    }
    int x = mz.x_of(c), y = mz.y_of(c);
    for (int a = 0; a < A; ++a) {
      int nx = x + dx[a], ny = y + dy[a];
      bool blocked = nx < 0 || nx >= spec.width || ny < 0 ||
                     ny >= spec.height || mz.is_wall(nx, ny);
      int target = blocked ? c : mz.cell_index(nx, ny);
      if (target == goal) {
        m.p(c, a, mz.absorbing_state) = 1.0;
        m.r(c, a) = spec.goal_reward;
      } else {
        m.p(c, a, target) = 1.0;
      }
    }
  }
  for (int a = 0; a < A; ++a) m.p(mz.absorbing_state, a, mz.absorbing_state) = 1.0;
  m.initial_dist.assign(size_t(S), 0.0);
  m.initial_dist[size_t(mz.start_state)] = 1.0;
  validate_mdp(m);
  mz.mdp = std::move(m);

  // Reachability sweep from the start; entering the goal counts.
  std::vector<char> seen(size_t(mz.n_cells), 0);
  std::queue<int> frontier;
  seen[size_t(mz.start_state)] = 1;
  frontier.push(mz.start_state);
  bool goal_reached = false;
  while (!frontier.empty() && !goal_reached) {
    int c = frontier.front();
    frontier.pop();
    int x = mz.x_of(c), y = mz.y_of(c);
    for (int a = 0; a < A; ++a) {
      int nx = x + dx[a], ny = y + dy[a];
      if (nx < 0 || nx >= spec.width || ny < 0 || ny >= spec.height) continue;
      if (mz.is_wall(nx, ny)) continue;
      int t = mz.cell_index(nx, ny);
      if (t == goal) {
        goal_reached = true;
        break;
      }
      if (!seen[size_t(t)]) {
        seen[size_t(t)] = 1;
        frontier.push(t);
      }
    }
  }
  if (!goal_reached) detail::maze_fail("goal unreachable from start");
  return mz;
}

/**
 * Random test MDP: every pair transitions to `branching` distinct states
 * drawn uniformly, with flat-Dirichlet weights over them. Rewards are 0
 * with probability reward_sparsity and uniform on [0, 1] otherwise. The
 * initial distribution is uniform. Deterministic given the seed.
 */
inline TabularMdp build_random_mdp(int n_states, int n_actions, int branching,
                                   double reward_sparsity, double gamma,
                                   uint64_t seed) {
  if (n_states < 1 || n_actions < 1)
    detail::fail("build_random_mdp: need at least one state and action");
  if (branching < 1 || branching > n_states)
    detail::fail("build_random_mdp: branching must lie in [1, n_states]");
  if (!(reward_sparsity >= 0.0 && reward_sparsity <= 1.0))
    detail::fail("build_random_mdp: reward_sparsity must lie in [0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0))
    detail::fail("build_random_mdp: gamma must lie in [0, 1)");
  CounterRng rng(seed, /*stream=*/2);
  TabularMdp m = TabularMdp::zeros(n_states, n_actions, gamma, 1.0);
  std::vector<int> pool(static_cast<size_t>(n_states));
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      // Partial shuffle: the first `branching` entries become the targets.
      for (int i = 0; i < n_states; ++i) pool[size_t(i)] = i;
      for (int i = 0; i < branching; ++i) {
        int j = i + int(rng.next_u64() % uint64_t(n_states - i));
        std::swap(pool[size_t(i)], pool[size_t(j)]);
      }
      std::vector<double> w = rng.dirichlet_uniform(branching);
      for (int i = 0; i < branching; ++i)
        m.p(s, a, pool[size_t(i)]) = w[size_t(i)];
      m.r(s, a) = rng.next_double() < reward_sparsity ? 0.0 : rng.next_double();
    }
  }
  m.initial_dist.assign(size_t(n_states), 1.0 / double(n_states));
  validate_mdp(m);
  return m;
}

}  // namespace strlab
