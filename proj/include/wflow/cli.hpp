#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "wflow/config.hpp"
#include "wflow/experiments.hpp"
#include "wflow/svg.hpp"
#include "wflow/verify.hpp"

namespace wflow::cli {

/// Exit codes: 0 all runs completed, 1 bad config or usage, 2 some run did not complete.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kIncomplete = 2;

struct Options {
  bool paper_scale = false;
  std::optional<std::string> output_dir;  // overrides the config's output_dir
};

/// File-name stem for a method label: [A-Za-z0-9_-] kept, others replaced,
/// so no path component can escape the output directory.
inline std::string sanitize_label(const std::string& label) {
  std::string s;
  for (char c : label) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    s += ok ? c : '_';
  }
  if (s.empty()) s = "method";
  return s;
}

/// Distinct file stems, one per label, in order.
inline std::vector<std::string> file_stems(const std::vector<MethodTrace>& traces) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& t : traces) {
    std::string base = sanitize_label(t.method.label), s = base;
    for (int k = 2; !seen.insert(s).second; ++k) s = base + "_" + std::to_string(k);
    out.push_back(s);
  }
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << body;
}

inline RunConfig load(const std::string& path, const Options& opt) {
  RunConfig rc = load_run_config(path);
  if (opt.paper_scale) apply_paper_scale(rc.spec);
  if (opt.output_dir) rc.output_dir = *opt.output_dir;
  return rc;
}

inline std::string summary_text(const ComparisonResult& res) {
  std::ostringstream o;
  write_summary(o, res);
  return o.str();
}

}  // namespace detail

inline int cmd_run(const std::string& config_path, const Options& opt, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  try {
    rc = detail::load(config_path, opt);
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }
  try {
    const ComparisonResult res = run_comparison(rc.spec, rc.e_star);
    const std::filesystem::path dir(rc.output_dir);
    std::filesystem::create_directories(dir);
    const auto stems = file_stems(res.traces);
    for (std::size_t i = 0; i < res.traces.size(); ++i) {
      std::ostringstream csv;
      write_trace_csv(csv, res.traces[i], res.diagnostics);
      detail::write_file(dir / ("trace_" + stems[i] + ".csv"), csv.str());
    }
    const std::string summary = detail::summary_text(res);
    detail::write_file(dir / "summary.txt", summary);
    detail::write_file(dir / "gap.svg", svg::gap_chart(res));
    out << summary;
    return res.all_completed() ? kOk : kIncomplete;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

inline int cmd_sweep(const std::string& config_path, const Options& opt, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  try {
    rc = detail::load(config_path, opt);
    if (rc.spec.gap_levels.empty()) throw ConfigError(config_path, 0, "sweep needs a non-empty 'gap_levels' list");
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kConfigError;
  }
  try {
    const ComparisonResult res = run_comparison(rc.spec, rc.e_star);
    const auto rows = sweep_table(res, rc.spec.gap_levels);
    const std::filesystem::path dir(rc.output_dir);
    std::filesystem::create_directories(dir);
    std::ostringstream csv;
    write_sweep_csv(csv, rows);
    detail::write_file(dir / "sweep.csv", csv.str());
    detail::write_file(dir / "sweep.svg", svg::sweep_chart(res.name, rows));
    const std::string summary = detail::summary_text(res);
    detail::write_file(dir / "summary.txt", summary);
    out << summary << csv.str();
    return res.all_completed() ? kOk : kIncomplete;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

inline int cmd_verify(const verify::Options& opt, std::ostream& out) {
  const bool ok = verify::report(out, verify::run_suite(opt));
  out << (ok ? "all checks passed\n" : "some checks FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace wflow::cli
