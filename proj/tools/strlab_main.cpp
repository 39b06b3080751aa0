// Command-line front end for the experiment pipeline.
//
//   strlab run    --config cfg.json [--seed N] [--out DIR]
//   strlab check  --config cfg.json
//   strlab oracle --config cfg.json
//
// `run` executes the full pipeline and writes trace.csv, summary.json,
// bounds.jsonl, dataset.csv and run_metadata.json into the output
// directory; its exit code is 0 only when every applicable bound report
// passed. `check` validates a config without running. `oracle` prints
// the in-support optimal policy and its returns as JSON on stdout.
//
// STRLAB_OUT_DIR overrides the output directory (it also beats --out);
// STRLAB_LOG_LEVEL=info enables stage logging on stderr.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "strlab/strlab.hpp"

namespace {

int cmd_run(strlab::ExperimentConfig cfg) {
  strlab::ExperimentResult res = strlab::run_experiment(cfg);

  int applicable = 0, passed = 0;
  for (const strlab::BoundReport& r : res.reports) {
    if (!r.applicable) continue;
    ++applicable;
    if (r.passed) ++passed;
  }

  std::cout << "variant " << cfg.variant_name << "  iterations "
            << res.summary.n_iterations << "  converged "
            << (res.summary.converged ? "yes" : "no") << "\n"
            << "final eta " << strlab::fmt17(res.summary.final_eta_true)
            << "  in-support optimum "
            << strlab::fmt17(res.summary.eta_opt_support) << "\n"
            << "final truncated return "
            << strlab::fmt17(res.summary.final_return_trunc_mean) << " (se "
            << strlab::fmt17(res.summary.final_return_trunc_se)
            << ")  optimum "
            << strlab::fmt17(res.summary.return_trunc_opt_mean) << "\n"
            << "bound reports: " << passed << "/" << applicable
            << " applicable checks passed\n"
            << "outputs: " << res.out_dir.string() << "\n";

  if (!res.ok) {
    for (const strlab::BoundReport& r : res.reports)
      if (r.applicable && !r.passed)
        std::cerr << "failed check: " << r.name << " lhs="
                  << strlab::fmt17(r.lhs) << " rhs=" << strlab::fmt17(r.rhs)
                  << (r.context.empty() ? "" : " (" + r.context + ")")
                  << "\n";
    return 2;
  }
  return 0;
}

int cmd_check(const strlab::ExperimentConfig& cfg) {
  strlab::ConfigCheck c = strlab::check_experiment_config(cfg);
  std::cout << "config ok: " << cfg.env_kind << " environment, "
            << c.n_states << " states, " << c.n_actions << " actions, gamma "
            << strlab::fmt17(c.gamma) << ", value ceiling "
            << strlab::fmt17(c.v_max) << ", variant " << cfg.variant_name
            << "\n";
  return 0;
}

int cmd_oracle(const strlab::ExperimentConfig& cfg) {
  strlab::OracleResult o = strlab::oracle_optimum(cfg);
  std::cout << "{\n  \"eta\": " << strlab::fmt17(o.eta)
            << ",\n  \"truncated_return_mean\": "
            << strlab::fmt17(o.truncated.mean)
            << ",\n  \"truncated_return_se\": " << strlab::fmt17(o.truncated.se)
            << ",\n  \"policy\": [\n";
  for (int s = 0; s < o.policy.n_states; ++s) {
    std::cout << "    [";
    for (int a = 0; a < o.policy.n_actions; ++a)
      std::cout << (a > 0 ? ", " : "") << strlab::fmt17(o.policy(s, a));
    std::cout << (s + 1 < o.policy.n_states ? "],\n" : "]\n");
  }
  std::cout << "  ]\n}\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular offline policy iteration laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  uint64_t seed = 0;
  std::string out_dir;

  CLI::App* run = app.add_subcommand("run", "Run an experiment end to end");
  run->add_option("--config", config_path, "Experiment config JSON")
      ->required();
  CLI::Option* seed_opt =
      run->add_option("--seed", seed, "Override the config's seed");
  CLI::Option* out_opt =
      run->add_option("--out", out_dir, "Override the output directory");

  CLI::App* check =
      app.add_subcommand("check", "Validate a config without running it");
  check->add_option("--config", config_path, "Experiment config JSON")
      ->required();

  CLI::App* oracle = app.add_subcommand(
      "oracle", "Print the in-support optimal policy and its return");
  oracle->add_option("--config", config_path, "Experiment config JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    strlab::ExperimentConfig cfg = strlab::load_config(config_path);
    if (run->parsed()) {
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (out_opt->count() > 0) cfg.output_dir = out_dir;
      return cmd_run(std::move(cfg));
    }
    if (check->parsed()) return cmd_check(cfg);
    return cmd_oracle(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
