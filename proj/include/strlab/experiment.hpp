#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "strlab/algorithms.hpp"
#include "strlab/dataset.hpp"
#include "strlab/envs.hpp"
#include "strlab/io.hpp"
#include "strlab/theory.hpp"

namespace strlab {

/** Random-model environment parameters. */
struct RandomEnvSpec {
  int n_states = 12;
  int n_actions = 3;
  int branching = 3;
  double reward_sparsity = 0.3;
  double gamma = 0.9;
  uint64_t env_seed = 0;
  int episode_len = 25;  // data-collection episode length
};

/**
 * Optional dataset filter: drop every record taking `action` in the
 * selected grid region. Region is one of lower_half (y < height/2 by
 * integer division), upper_half, everywhere. Grid environments only.
 */
struct OodFilterSpec {
  bool present = false;
  int action = kMazeRight;
  std::string region = "lower_half";
};

/**
 * One experiment, as read from a config file. The variant is stored as
 * name plus budget so the temperature scale can bind to the built
 * environment's value range at run time.
 */
struct ExperimentConfig {
  std::string env_kind = "maze";  // "maze" | "random"
  MazeSpec maze;
  RandomEnvSpec random_env;
  std::string behavior_kind = "uniform";  // "uniform" | "table"
  std::vector<double> behavior_table;     // row-major, states x actions
  long dataset_size = 10000;
  OodFilterSpec ood_filter;
  std::string variant_name = "str";  // awr | awac | abm | str | str_penalty
  double epsilon = 0.05;             // constrained-form divergence budget
  double alpha = 0.1;                // penalty-form step size
  int n_iterations = 60;
  int n_eval_rollouts = 1000;
  std::string collection_start = "uniform_free";  // or "env_start"
  uint64_t seed = 1;
  std::string output_dir = "out";
};

/** Everything a finished run produced, besides the files on disk. */
struct ExperimentResult {
  IterationTrace trace;
  RunSummary summary;
  std::vector<BoundReport> reports;
  bool ok = false;  // every applicable emitted report passed
  std::filesystem::path out_dir;
};

/** The in-support optimum the run is measured against. */
struct OracleResult {
  TabularPolicy policy;
  double eta = 0.0;
  TruncatedReturn truncated;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& what) {
  fail("config: " + what);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_fail(std::string("field '") + key + "' has the wrong type");
  }
  return fallback;  // unreachable
}

inline bool log_enabled() {
  const char* lvl = std::getenv("STRLAB_LOG_LEVEL");
  return lvl != nullptr && std::string(lvl) == "info";
}

inline void log_stage(const std::string& msg) {
  if (log_enabled()) std::cerr << "[strlab] " << msg << "\n";
}

// Runs one pipeline stage, prefixing any failure with the stage name.
template <typename Fn>
void stage(const std::string& name, Fn&& fn) {
  log_stage(name);
  try {
    fn();
  } catch (const std::exception& e) {
    throw std::runtime_error("stage " + name + ": " + e.what());
  }
}

inline int parse_action_name(const nlohmann::json& v) {
  if (v.is_number_integer()) {
    int a = v.get<int>();
    if (a < 0 || a > 3) config_fail("ood_filter.action index out of range");
    return a;
  }
  std::string s = v.get<std::string>();
  if (s == "up") return kMazeUp;
  if (s == "down") return kMazeDown;
  if (s == "left") return kMazeLeft;
  if (s == "right") return kMazeRight;
  config_fail("ood_filter.action must be up/down/left/right or an index");
  return -1;  // unreachable
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (!j.is_object()) detail::config_fail("top level must be an object");

  if (j.contains("env")) {
    const nlohmann::json& env = j.at("env");
    cfg.env_kind = detail::get_or<std::string>(env, "kind", "maze");
    if (cfg.env_kind == "maze") {
      const nlohmann::json m = env.value("maze", nlohmann::json::object());
      cfg.maze.width = detail::get_or(m, "width", cfg.maze.width);
      cfg.maze.height = detail::get_or(m, "height", cfg.maze.height);
      if (m.contains("wall_cells")) {
        cfg.maze.wall_cells.clear();
        for (const nlohmann::json& w : m.at("wall_cells")) {
          if (!w.is_array() || w.size() != 2)
            detail::config_fail("wall_cells entries must be [x, y] pairs");
          cfg.maze.wall_cells.emplace_back(w[0].get<int>(), w[1].get<int>());
        }
      }
      auto cell = [&](const char* key, std::pair<int, int> fallback) {
        if (!m.contains(key)) return fallback;
        const nlohmann::json& c = m.at(key);
        if (!c.is_array() || c.size() != 2)
          detail::config_fail(std::string(key) + " must be an [x, y] pair");
        return std::make_pair(c[0].get<int>(), c[1].get<int>());
      };
      cfg.maze.start_cell = cell("start_cell", cfg.maze.start_cell);
      cfg.maze.goal_cell = cell("goal_cell", cfg.maze.goal_cell);
      cfg.maze.step_limit = detail::get_or(m, "step_limit", cfg.maze.step_limit);
      cfg.maze.gamma = detail::get_or(m, "gamma", cfg.maze.gamma);
      cfg.maze.goal_reward =
          detail::get_or(m, "goal_reward", cfg.maze.goal_reward);
    } else if (cfg.env_kind == "random") {
      const nlohmann::json r = env.value("random", nlohmann::json::object());
      RandomEnvSpec& re = cfg.random_env;
      re.n_states = detail::get_or(r, "n_states", re.n_states);
      re.n_actions = detail::get_or(r, "n_actions", re.n_actions);
      re.branching = detail::get_or(r, "branching", re.branching);
      re.reward_sparsity =
          detail::get_or(r, "reward_sparsity", re.reward_sparsity);
      re.gamma = detail::get_or(r, "gamma", re.gamma);
      re.env_seed = detail::get_or(r, "env_seed", re.env_seed);
      re.episode_len = detail::get_or(r, "episode_len", re.episode_len);
    } else {
      detail::config_fail("env.kind must be 'maze' or 'random'");
    }
  }

  if (j.contains("behavior")) {
    const nlohmann::json& b = j.at("behavior");
    if (b.is_string()) {
      cfg.behavior_kind = b.get<std::string>();
      if (cfg.behavior_kind != "uniform")
        detail::config_fail("behavior string must be 'uniform'");
    } else if (b.is_object() && b.contains("table")) {
      cfg.behavior_kind = "table";
      for (const nlohmann::json& row : b.at("table"))
        for (const nlohmann::json& v : row)
          cfg.behavior_table.push_back(v.get<double>());
    } else {
      detail::config_fail("behavior must be 'uniform' or {\"table\": [[..]]}");
    }
  }

  cfg.dataset_size = detail::get_or<long>(j, "dataset_size", cfg.dataset_size);
  if (cfg.dataset_size < 1) detail::config_fail("dataset_size must be positive");

  if (j.contains("ood_filter") && !j.at("ood_filter").is_null()) {
    const nlohmann::json& f = j.at("ood_filter");
    cfg.ood_filter.present = true;
    if (f.contains("drop_action"))
      cfg.ood_filter.action = detail::parse_action_name(f.at("drop_action"));
    cfg.ood_filter.region =
        detail::get_or<std::string>(f, "where", cfg.ood_filter.region);
    if (cfg.ood_filter.region != "lower_half" &&
        cfg.ood_filter.region != "upper_half" &&
        cfg.ood_filter.region != "everywhere")
      detail::config_fail(
          "ood_filter.where must be lower_half, upper_half or everywhere");
    if (cfg.env_kind != "maze")
      detail::config_fail("ood_filter requires the maze environment");
  }

  if (j.contains("variant")) {
    const nlohmann::json& v = j.at("variant");
    cfg.variant_name = detail::get_or<std::string>(v, "name", cfg.variant_name);
    cfg.epsilon = detail::get_or(v, "epsilon", cfg.epsilon);
    cfg.alpha = detail::get_or(v, "alpha", cfg.alpha);
    if (cfg.variant_name != "awr" && cfg.variant_name != "awac" &&
        cfg.variant_name != "abm" && cfg.variant_name != "str" &&
        cfg.variant_name != "str_penalty")
      detail::config_fail(
          "variant.name must be awr, awac, abm, str or str_penalty");
    if (!(cfg.epsilon > 0.0)) detail::config_fail("epsilon must be positive");
    if (!(cfg.alpha > 0.0 && cfg.alpha <= 0.48))
      detail::config_fail("alpha must lie in (0, 0.48]");
  }

  cfg.n_iterations = detail::get_or(j, "n_iterations", cfg.n_iterations);
  if (cfg.n_iterations < 0)
    detail::config_fail("n_iterations must be non-negative");
  cfg.n_eval_rollouts = detail::get_or(j, "n_eval_rollouts", cfg.n_eval_rollouts);
  if (cfg.n_eval_rollouts < 0)
    detail::config_fail("n_eval_rollouts must be non-negative");
  cfg.collection_start =
      detail::get_or<std::string>(j, "collection_start", cfg.collection_start);
  if (cfg.collection_start != "uniform_free" &&
      cfg.collection_start != "env_start")
    detail::config_fail(
        "collection_start must be uniform_free or env_start");
  cfg.seed = detail::get_or<uint64_t>(j, "seed", cfg.seed);
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", cfg.output_dir);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f = detail::open_in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    detail::fail("config: " + path.string() + " is not valid JSON: " +
                 e.what());
  }
  try {
    return parse_config(j);
  } catch (const nlohmann::json::exception& e) {
    detail::config_fail(std::string("malformed field: ") + e.what());
  }
}

namespace detail {

// Environment, behavior and filter assembled from a config.
struct BuiltEnv {
  TabularMdp mdp;                   // ground truth
  std::optional<MazeModel> maze;    // present for grid environments
  TabularPolicy behavior;
  int episode_len = 25;
  std::vector<double> collection_init;  // start distribution for rollouts
};

inline BuiltEnv build_env(const ExperimentConfig& cfg) {
  BuiltEnv env;
  if (cfg.env_kind == "maze") {
    MazeModel mz = build_maze(cfg.maze);
    env.mdp = mz.mdp;
    env.episode_len = cfg.maze.step_limit;
    env.collection_init = cfg.collection_start == "uniform_free"
                              ? mz.collection_start()
                              : mz.mdp.initial_dist;
    env.maze = std::move(mz);
  } else {
    const RandomEnvSpec& re = cfg.random_env;
    env.mdp = build_random_mdp(re.n_states, re.n_actions, re.branching,
                               re.reward_sparsity, re.gamma, re.env_seed);
    env.episode_len = re.episode_len;
    env.collection_init = env.mdp.initial_dist;
  }
  const int S = env.mdp.n_states, A = env.mdp.n_actions;
  if (cfg.behavior_kind == "uniform") {
    env.behavior = TabularPolicy::uniform(S, A);
  } else {
    if (long(cfg.behavior_table.size()) != long(S) * A)
      config_fail("behavior table must have n_states * n_actions entries");
    env.behavior.n_states = S;
    env.behavior.n_actions = A;
    env.behavior.probs = cfg.behavior_table;
    validate_policy(env.behavior, S, A);
  }
  return env;
}

// Pair-level form of the filter; also applied per record during filtering.
inline std::function<bool(int, int)> drop_pair_predicate(
    const ExperimentConfig& cfg, const BuiltEnv& env) {
  if (!cfg.ood_filter.present) return [](int, int) { return false; };
  const MazeModel& mz = *env.maze;
  const int action = cfg.ood_filter.action;
  const std::string region = cfg.ood_filter.region;
  const int half = mz.spec.height / 2;
  return [&mz, action, region, half](int s, int a) {
    if (a != action) return false;
    if (s >= mz.n_cells) return false;  // absorbing state carries no cells
    int y = mz.y_of(s);
    if (region == "lower_half") return y < half;
    if (region == "upper_half") return y >= half;
    return true;  // everywhere
  };
}

inline VariantSpec make_variant(const ExperimentConfig& cfg, double v_max) {
  if (cfg.variant_name == "awr") return VariantSpec::awr(cfg.epsilon);
  if (cfg.variant_name == "awac") return VariantSpec::awac(cfg.epsilon);
  if (cfg.variant_name == "abm") return VariantSpec::abm(cfg.epsilon);
  if (cfg.variant_name == "str_penalty")
    return VariantSpec::str_penalty(cfg.alpha, v_max);
  return VariantSpec::str(cfg.epsilon);
}

}  // namespace detail

/** What a fully validated config describes, for tooling output. */
struct ConfigCheck {
  int n_states = 0;
  int n_actions = 0;
  double gamma = 0.0;
  double v_max = 0.0;
};

/**
 * Builds the environment and behavior a config describes, so geometry
 * and shape errors surface without running anything.
 */
inline ConfigCheck check_experiment_config(const ExperimentConfig& cfg) {
  detail::BuiltEnv env = detail::build_env(cfg);
  return {env.mdp.n_states, env.mdp.n_actions, env.mdp.gamma,
          env.mdp.v_max()};
}

/**
 * The support-constrained optimum the run is measured against: optimal
 * on the true model among policies confined to the behavior's support
 * minus whatever the filter removes.
 */
inline OracleResult oracle_optimum(const ExperimentConfig& cfg) {
  OracleResult out;
  detail::BuiltEnv env = detail::build_env(cfg);
  std::function<bool(int, int)> dropped = detail::drop_pair_predicate(cfg, env);
  SupportMask ideal = SupportMask::none(env.mdp.n_states, env.mdp.n_actions);
  for (int s = 0; s < env.mdp.n_states; ++s)
    for (int a = 0; a < env.mdp.n_actions; ++a)
      if (env.behavior(s, a) > 0.0 && !dropped(s, a)) ideal.set(s, a, true);
  SupportOptimum opt = support_constrained_optimum(env.mdp, ideal);
  out.policy = opt.policy;
  out.eta = opt.eta;
  out.truncated = truncated_return(env.mdp, opt.policy, env.episode_len,
                                   cfg.n_eval_rollouts, cfg.seed,
                                   /*stream=*/1000);
  return out;
}

/**
 * Runs the full pipeline: build environment, collect data, filter, fit
 * the empirical model and behavior estimate, iterate the variant, check
 * the bounds, and write trace.csv, summary.json, bounds.jsonl,
 * dataset.csv (+ sidecar) and run_metadata.json into the output
 * directory. STRLAB_OUT_DIR overrides the configured directory and
 * STRLAB_LOG_LEVEL=info enables stage logging; no other environment
 * variables are read. Identical config and seed produce byte-identical
 * files. result.ok is true iff every applicable bound report passed.
 */
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult result;

  detail::BuiltEnv env;
  detail::stage("build_env", [&] { env = detail::build_env(cfg); });
  const int S = env.mdp.n_states, A = env.mdp.n_actions;
  const double v_max = env.mdp.v_max();

  TransitionDataset raw, data;
  detail::stage("collect_dataset", [&] {
    TabularMdp collect = env.mdp;
    collect.initial_dist = env.collection_init;
    raw = rollout_dataset(collect, env.behavior, cfg.dataset_size,
                          env.episode_len, cfg.seed);
  });

  long n_dropped = 0;
  detail::stage("apply_filter", [&] {
    std::function<bool(int, int)> dropped =
        detail::drop_pair_predicate(cfg, env);
    data = filter_dataset(raw, [&](const Transition& t) {
      return dropped(t.s, t.a);
    });
    n_dropped = long(raw.records.size() - data.records.size());
    if (data.records.empty())
      detail::fail("filter removed every record");
  });

  TabularMdp emp;
  TabularPolicy beta_hat;
  SupportMask projection_mask, counts_mask;
  detail::stage("build_empirical", [&] {
    emp = empirical_mdp(data, /*init_value=*/0.0, &env.mdp.initial_dist);
    beta_hat = estimate_behavior(data);
    projection_mask = support_mask_from_policy(beta_hat);
    counts_mask = support_mask_from_dataset(data);
  });

  OracleResult oracle;
  detail::stage("oracle", [&] { oracle = oracle_optimum(cfg); });

  VariantSpec spec = detail::make_variant(cfg, v_max);
  spec.constrained = ConstrainedUpdateConfig::with_v_max(cfg.epsilon, v_max);
  detail::stage("run_variant", [&] {
    TraceOptions opt;
    opt.reference_mdp = &env.mdp;
    opt.ood_mask = &counts_mask;
    opt.restrict_metrics_to_masked_states = true;
    opt.n_eval_rollouts = cfg.n_eval_rollouts;
    opt.rollout_step_limit = env.episode_len;
    opt.rollout_seed = cfg.seed;
    result.trace = run_variant(emp, beta_hat, projection_mask, spec,
                               cfg.n_iterations, opt);
  });

  detail::stage("theory_checks", [&] {
    std::vector<BoundReport>& rs = result.reports;
    const TabularPolicy& final_pi = result.trace.policies.back();
    rs.push_back(check_performance_difference(env.mdp, final_pi, env.behavior));
    rs.push_back(check_performance_ceiling(env.mdp, final_pi, env.behavior));
    if (result.trace.policies.size() >= 2)
      rs.push_back(check_surrogate_lower_bound(
          env.mdp, final_pi,
          result.trace.policies[result.trace.policies.size() - 2]));

    // Strict improvement is only promised when the anchor moves with the
    // iterate; fixed-anchor variants may legitimately stall short of the
    // in-support optimum, so the check is not emitted for them.
    if (spec.base == BasePolicy::projected_current) {
      SupportMask emp_mask = SupportMask::none(emp.n_states, emp.n_actions);
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
          if (projection_mask.at(s, a)) emp_mask.set(s, a, true);
      for (int a = 0; a < A; ++a) emp_mask.set(emp.n_states - 1, a, true);
      SupportOptimum emp_opt = support_constrained_optimum(emp, emp_mask);
      for (BoundReport& r :
           check_strict_improvement(emp, result.trace, emp_opt.q))
        rs.push_back(std::move(r));
    }

    if (spec.form == UpdateForm::penalty) {
      for (size_t i = 1; i < result.trace.policies.size(); ++i) {
        const TabularPolicy& prev = result.trace.policies[i - 1];
        const TabularPolicy& next = result.trace.policies[i];
        std::string suffix = " step " + std::to_string(i);
        for (BoundReport& r : check_trust_region(prev, next, cfg.alpha)) {
          r.context += suffix;
          rs.push_back(std::move(r));
        }
        BoundReport safe = check_safe_improvement(
            emp, detail::extend_rows_uniform(prev, emp.n_states),
            detail::extend_rows_uniform(next, emp.n_states), cfg.alpha,
            v_max);
        safe.context += suffix;
        rs.push_back(std::move(safe));
      }
    }

    result.ok = true;
    for (const BoundReport& r : rs)
      if (r.applicable && !r.passed) result.ok = false;

    const IterationRow& last = result.trace.rows.back();
    result.summary.final_eta_true = last.eta_true;
    result.summary.final_eta_emp = last.eta_emp;
    result.summary.eta_opt_support = oracle.eta;
    result.summary.final_return_trunc_mean = last.return_trunc_mean;
    result.summary.final_return_trunc_se = last.return_trunc_se;
    result.summary.return_trunc_opt_mean = oracle.truncated.mean;
    result.summary.converged = result.trace.converged;
    result.summary.n_iterations = int(result.trace.rows.size()) - 1;
    result.summary.n_strict_improvements = result.trace.n_strict_improvements;
  });

  detail::stage("write_outputs", [&] {
    const char* override_dir = std::getenv("STRLAB_OUT_DIR");
    result.out_dir = override_dir != nullptr ? std::filesystem::path(override_dir)
                                             : std::filesystem::path(cfg.output_dir);
    std::filesystem::create_directories(result.out_dir);
    write_trace_csv(result.trace, result.out_dir / "trace.csv");
    write_summary_json(result.summary, result.out_dir / "summary.json");
    write_bound_reports_jsonl(result.reports, result.out_dir / "bounds.jsonl");
    save_dataset(data, result.out_dir / "dataset.csv");

    std::ofstream meta = detail::open_out(result.out_dir / "run_metadata.json");
    meta << "{\n"
         << "  \"env_kind\": \"" << cfg.env_kind << "\",\n"
         << "  \"variant\": \"" << cfg.variant_name << "\",\n"
         << "  \"epsilon\": " << fmt17(cfg.epsilon) << ",\n"
         << "  \"alpha\": " << fmt17(cfg.alpha) << ",\n"
         << "  \"seed\": " << cfg.seed << ",\n"
         << "  \"n_iterations\": " << cfg.n_iterations << ",\n"
         << "  \"n_eval_rollouts\": " << cfg.n_eval_rollouts << ",\n"
         << "  \"dataset_size\": " << cfg.dataset_size << ",\n"
         << "  \"n_records_dropped\": " << n_dropped << ",\n"
         << "  \"collection_start\": \"" << cfg.collection_start << "\",\n"
         << "  \"region_rule\": \"lower_half means cell y < height/2 by "
            "integer division\"\n"
         << "}\n";
  });

  return result;
}

}  // namespace strlab
