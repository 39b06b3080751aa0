#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "strlab/algorithms.hpp"
#include "strlab/dataset.hpp"
#include "strlab/theory.hpp"

namespace strlab {

/**
 * Fixed 17-significant-digit rendering. Every float written to an output
 * file goes through this, so identical runs produce identical bytes and
 * parsing the text recovers the exact double.
 */
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  std::filesystem::path p = csv;
  p.replace_extension(".json");
  return p;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("cannot open for writing: " + path.string());
  return f;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open for reading: " + path.string());
  return f;
}

}  // namespace detail

/**
 * Writes the dataset as CSV (header s,a,r,s_next,done) and a JSON sidecar
 * holding seed, n_states, n_actions and gamma. The sidecar sits next to
 * the CSV with its extension replaced by .json.
 */
inline void save_dataset(const TransitionDataset& d,
                         const std::filesystem::path& csv_path) {
  std::ofstream f = detail::open_out(csv_path);
  f << "s,a,r,s_next,done\n";
  for (const Transition& t : d.records)
    f << t.s << ',' << t.a << ',' << fmt17(t.r) << ',' << t.s_next << ','
      << (t.done ? 1 : 0) << '\n';
  std::ofstream side = detail::open_out(detail::sidecar_path(csv_path));
  side << "{\"seed\": " << d.seed << ", \"n_states\": " << d.n_states
       << ", \"n_actions\": " << d.n_actions
       << ", \"gamma\": " << fmt17(d.gamma) << "}\n";
}

// The learning-curve column set is a stable contract; plotting scripts
// key on these names.
inline constexpr const char* kTraceHeader =
    "iteration,eta_true,eta_emp,return_trunc_mean,return_trunc_se,"
    "ood_ratio,kl_to_beta_mean,kl_step_max,tv_step_max,q_improve_min,"
    "q_improve_max,strict_flag";

/** Writes one trace row per iterate, floats in 17-significant-digit form. */
inline void write_trace_csv(const IterationTrace& trace,
                            const std::filesystem::path& path) {
  std::ofstream f = detail::open_out(path);
  f << kTraceHeader << '\n';
  for (const IterationRow& r : trace.rows) {
    f << r.iteration << ',' << fmt17(r.eta_true) << ',' << fmt17(r.eta_emp)
      << ',' << fmt17(r.return_trunc_mean) << ',' << fmt17(r.return_trunc_se)
      << ',' << fmt17(r.ood_ratio) << ',' << fmt17(r.kl_to_beta_mean) << ','
      << fmt17(r.kl_step_max) << ',' << fmt17(r.tv_step_max) << ','
      << fmt17(r.q_improve_min) << ',' << fmt17(r.q_improve_max) << ','
      << (r.strict_flag ? 1 : 0) << '\n';
  }
}

namespace detail {

// JSON has no literal for non-finite numbers; render those as strings so
// every emitted line stays parseable.
inline std::string json_number(double x) {
  if (std::isfinite(x)) return fmt17(x);
  return std::string("\"") + fmt17(x) + "\"";
}

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

}  // namespace detail

/** Headline numbers of one finished run. */
struct RunSummary {
  double final_eta_true = 0.0;
  double final_eta_emp = 0.0;
  double eta_opt_support = 0.0;        // in-support optimum on the oracle model
  double final_return_trunc_mean = 0.0;
  double final_return_trunc_se = 0.0;
  double return_trunc_opt_mean = 0.0;  // the optimum policy's rollout return
  bool converged = false;
  int n_iterations = 0;
  int n_strict_improvements = 0;
};

inline void write_summary_json(const RunSummary& s,
                               const std::filesystem::path& path) {
  std::ofstream f = detail::open_out(path);
  f << "{\n"
    << "  \"final_eta_true\": " << detail::json_number(s.final_eta_true) << ",\n"
    << "  \"final_eta_emp\": " << detail::json_number(s.final_eta_emp) << ",\n"
    << "  \"eta_opt_support\": " << detail::json_number(s.eta_opt_support) << ",\n"
    << "  \"final_return_trunc_mean\": " << detail::json_number(s.final_return_trunc_mean)
    << ",\n"
    << "  \"final_return_trunc_se\": " << detail::json_number(s.final_return_trunc_se)
    << ",\n"
    << "  \"return_trunc_opt_mean\": " << detail::json_number(s.return_trunc_opt_mean)
    << ",\n"
    << "  \"converged\": " << (s.converged ? "true" : "false") << ",\n"
    << "  \"n_iterations\": " << s.n_iterations << ",\n"
    << "  \"n_strict_improvements\": " << s.n_strict_improvements << "\n"
    << "}\n";
}

/** One JSON object per line, one line per checked bound. */
inline void write_bound_reports_jsonl(const std::vector<BoundReport>& reports,
                                      const std::filesystem::path& path) {
  std::ofstream f = detail::open_out(path);
  for (const BoundReport& r : reports) {
    f << "{\"name\": \"" << detail::json_escape(r.name)
      << "\", \"lhs\": " << detail::json_number(r.lhs)
      << ", \"rhs\": " << detail::json_number(r.rhs)
      << ", \"slack\": " << detail::json_number(r.slack)
      << ", \"passed\": " << (r.passed ? "true" : "false")
      << ", \"applicable\": " << (r.applicable ? "true" : "false")
      << ", \"context\": \"" << detail::json_escape(r.context) << "\"}\n";
  }
}

/** Reads a dataset written by save_dataset; values round-trip exactly. */
inline TransitionDataset load_dataset(const std::filesystem::path& csv_path) {
  std::ifstream side = detail::open_in(detail::sidecar_path(csv_path));
  nlohmann::json meta = nlohmann::json::parse(side);
  TransitionDataset d;
  d.seed = meta.at("seed").get<uint64_t>();
  d.n_states = meta.at("n_states").get<int>();
  d.n_actions = meta.at("n_actions").get<int>();
  d.gamma = meta.at("gamma").get<double>();
  std::ifstream f = detail::open_in(csv_path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("s,a,r", 0) != 0)
    detail::fail("load_dataset: missing header in " + csv_path.string());
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    Transition t;
    const char* p = line.c_str();
    char* end = nullptr;
    auto take_int = [&](int& out) {
      out = int(std::strtol(p, &end, 10));
      if (end == p || *end != ',')
        detail::fail("load_dataset: malformed line " + std::to_string(lineno));
      p = end + 1;
    };
    take_int(t.s);
    take_int(t.a);
    t.r = std::strtod(p, &end);
    if (end == p || *end != ',')
      detail::fail("load_dataset: malformed line " + std::to_string(lineno));
    p = end + 1;
    take_int(t.s_next);
    long done = std::strtol(p, &end, 10);
    if (end == p)
      detail::fail("load_dataset: malformed line " + std::to_string(lineno));
    t.done = done != 0;
    d.records.push_back(t);
  }
  detail::check_dataset(d);
  return d;
}

}  // namespace strlab
