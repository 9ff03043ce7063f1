#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "wflow/experiments.hpp"

namespace wflow {

/// Parse or validation failure tied to a line of the config file.
struct ConfigError : std::runtime_error {
  std::size_t line;
  ConfigError(const std::string& source, std::size_t ln, const std::string& msg)
      : std::runtime_error(source + ":" + std::to_string(ln) + ": " + msg), line(ln) {}
};

// ---------------------------------------------------------------------------
// A TOML subset: [table] / [a.b] headers, key = value, strings, numbers,
// booleans and single-line arrays of those. `#` starts a comment.
// ---------------------------------------------------------------------------

struct ConfigValue {
  using Scalar = std::variant<double, std::string, bool>;
  std::variant<Scalar, std::vector<Scalar>> data;
  std::size_t line = 0;
};

class ConfigDoc {
 public:
  static ConfigDoc parse(std::istream& in, std::string source = "<config>") {
    ConfigDoc doc;
    doc.source_ = std::move(source);
    std::string raw, table;
    std::size_t ln = 0;
    while (std::getline(in, raw)) {
      ++ln;
      const std::string line = trim(strip_comment(raw));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) doc.fail(ln, "malformed table header");
        table = trim(line.substr(1, line.size() - 2));
        if (!valid_key(table, true)) doc.fail(ln, "invalid table name '" + table + "'");
        if (!doc.tables_.insert(table).second) doc.fail(ln, "duplicate table [" + table + "]");
        doc.table_lines_[table] = ln;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) doc.fail(ln, "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (!valid_key(key, false)) doc.fail(ln, "invalid key '" + key + "'");
      const std::string full = table.empty() ? key : table + "." + key;
      if (doc.values_.count(full)) doc.fail(ln, "duplicate key '" + key + "'");
      ConfigValue v = doc.parse_value(trim(line.substr(eq + 1)), ln);
      v.line = ln;
      doc.values_[full] = std::move(v);
    }
    return doc;
  }

  static ConfigDoc load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(path, 0, "cannot open config file");
    return parse(f, path);
  }

  const std::string& source() const { return source_; }

  [[noreturn]] void fail(std::size_t ln, const std::string& msg) const { throw ConfigError(source_, ln, msg); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  bool has_table(const std::string& t) const { return tables_.count(t) > 0; }

  /// Names of [prefix.X] tables.
  std::vector<std::string> subtables(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& t : tables_)
      if (t.rfind(prefix + ".", 0) == 0) out.push_back(t.substr(prefix.size() + 1));
    return out;
  }

  std::size_t table_line(const std::string& t) const {
    auto it = table_lines_.find(t);
    return it == table_lines_.end() ? 0 : it->second;
  }

  std::optional<double> number(const std::string& key) const {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->data);
    if (!s || !std::holds_alternative<double>(*s)) fail(v->line, "'" + leaf(key) + "' must be a number");
    return std::get<double>(*s);
  }

  std::optional<long long> integer(const std::string& key) const {
    auto x = number(key);
    if (!x) return std::nullopt;
    if (std::floor(*x) != *x || std::abs(*x) > 9e15) fail(find(key)->line, "'" + leaf(key) + "' must be an integer");
    return static_cast<long long>(*x);
  }

  std::optional<std::string> string(const std::string& key) const {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    const auto* s = std::get_if<ConfigValue::Scalar>(&v->data);
    if (!s || !std::holds_alternative<std::string>(*s)) fail(v->line, "'" + leaf(key) + "' must be a string");
    return std::get<std::string>(*s);
  }

  std::optional<std::vector<double>> numbers(const std::string& key) const {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    const auto* a = std::get_if<std::vector<ConfigValue::Scalar>>(&v->data);
    if (!a) fail(v->line, "'" + leaf(key) + "' must be an array of numbers");
    std::vector<double> out;
    for (const auto& s : *a) {
      if (!std::holds_alternative<double>(s)) fail(v->line, "'" + leaf(key) + "' must be an array of numbers");
      out.push_back(std::get<double>(s));
    }
    return out;
  }

  std::optional<std::vector<std::string>> strings(const std::string& key) const {
    const auto* v = find(key);
    if (!v) return std::nullopt;
    const auto* a = std::get_if<std::vector<ConfigValue::Scalar>>(&v->data);
    if (!a) fail(v->line, "'" + leaf(key) + "' must be an array of strings");
    std::vector<std::string> out;
    for (const auto& s : *a) {
      if (!std::holds_alternative<std::string>(s)) fail(v->line, "'" + leaf(key) + "' must be an array of strings");
      out.push_back(std::get<std::string>(s));
    }
    return out;
  }

  std::size_t line_of(const std::string& key) const {
    const auto* v = find(key);
    return v ? v->line : 0;
  }

  /// Throws on the first key (in file order) that was never looked up.
  void reject_unused() const {
    const std::pair<const std::string, ConfigValue>* first = nullptr;
    for (const auto& kv : values_)
      if (!used_.count(kv.first) && (!first || kv.second.line < first->second.line)) first = &kv;
    if (first) {
      const auto dot = first->first.rfind('.');
      const std::string where = dot == std::string::npos ? "" : " in [" + first->first.substr(0, dot) + "]";
      fail(first->second.line, "unknown key '" + leaf(first->first) + "'" + where);
    }
  }

 private:
  const ConfigValue* find(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  static std::string leaf(const std::string& key) {
    const auto dot = key.rfind('.');
    return dot == std::string::npos ? key : key.substr(dot + 1);
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
      if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
  }

  static bool valid_key(const std::string& k, bool dotted) {
    if (k.empty()) return false;
    for (char c : k)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || (dotted && c == '.'))) return false;
    return k.front() != '.' && k.back() != '.';
  }

  ConfigValue::Scalar parse_scalar(const std::string& s, std::size_t ln) const {
    if (s.empty()) fail(ln, "missing value");
    if (s.front() == '"') {
      if (s.size() < 2 || s.back() != '"') fail(ln, "unterminated string");
      std::string out;
      for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        if (s[i] == '\\' && i + 2 < s.size()) {
          const char c = s[++i];
          out += c == 'n' ? '\n' : c == 't' ? '\t' : c;
        } else if (s[i] == '"') {
          fail(ln, "unexpected quote in string");
        } else {
          out += s[i];
        }
      }
      return out;
    }
    if (s == "true") return true;
    if (s == "false") return false;
    std::string num;
    for (char c : s)
      if (c != '_') num += c;
    if (num == "inf" || num == "+inf") return std::numeric_limits<double>::infinity();
    double x = 0.0;
    const char* b = num.data();
    const char* e = b + num.size();
    if (*b == '+') ++b;
    const auto [p, ec] = std::from_chars(b, e, x);
    if (ec != std::errc() || p != e) fail(ln, "cannot parse value '" + s + "'");
    return x;
  }

  ConfigValue parse_value(const std::string& s, std::size_t ln) const {
    ConfigValue v;
    if (!s.empty() && s.front() == '[') {
      if (s.back() != ']') fail(ln, "unterminated array (arrays must fit on one line)");
      std::vector<ConfigValue::Scalar> items;
      const std::string body = trim(s.substr(1, s.size() - 2));
      std::string cur;
      bool in_str = false;
      for (std::size_t i = 0; i <= body.size(); ++i) {
        if (i == body.size() || (body[i] == ',' && !in_str)) {
          const std::string item = trim(cur);
          if (!item.empty())
            items.push_back(parse_scalar(item, ln));
          else if (i != body.size())
            fail(ln, "empty array element");
          cur.clear();
          continue;
        }
        if (body[i] == '"') in_str = !in_str;
        cur += body[i];
      }
      v.data = std::move(items);
    } else {
      v.data = parse_scalar(s, ln);
    }
    return v;
  }

  std::string source_;
  std::map<std::string, ConfigValue> values_;
  std::set<std::string> tables_;
  std::map<std::string, std::size_t> table_lines_;
  mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

struct RunConfig {
  ExperimentSpec spec;
  std::string output_dir = "out";
  std::optional<double> e_star;
};

/// Full-dimension settings of the three experiment families.
inline void apply_paper_scale(ExperimentSpec& s) {
  auto& p = s.problem;
  switch (p.kind) {
    case ProblemKind::quadratic_potential:
      p.dim = 500, p.eig_min = 1e-5, p.eig_max = 1.0, p.b_variance = 100.0, s.particles = 100;
      break;
    case ProblemKind::logsumexp_potential:
      p.dim = 200, p.terms = 1000, p.h = 20.0, s.particles = 100;
      break;
    case ProblemKind::blob_kl_quadratic:
      p.dim = 20, p.eig_min = 1e-4, p.eig_max = 1.0, p.b_variance = 10.0, p.epsilon = 1.0, s.particles = 1600;
      break;
    case ProblemKind::blob_kl_logsumexp:
      p.dim = 10, p.terms = 200, p.h = 10.0, p.epsilon = 1.0, s.particles = 1600;
      break;
    case ProblemKind::two_layer_net:
      p.dim = 1, p.samples = 500, s.particles = 200;
      break;
  }
}

namespace detail {

inline std::optional<Family> parse_family(const std::string& s) {
  if (s == "wgf") return Family::wgf;
  if (s == "hb") return Family::heavy_ball;
  if (s == "vaf") return Family::vaf;
  if (s == "kalman") return Family::kalman;
  if (s == "stein") return Family::stein;
  if (s == "bregman") return Family::bregman;
  return std::nullopt;
}

inline AffineLogCoeffs coeffs_from(const ConfigDoc& doc, const std::string& key) {
  auto v = doc.numbers(key);
  if (!v) doc.fail(0, "custom schedule needs '" + key + "'");
  if (v->size() != 3) doc.fail(doc.line_of(key), "'" + key + "' must be [c0, c1, c2] for c0 + c1 t + c2 log t");
  return {(*v)[0], (*v)[1], (*v)[2]};
}

}  // namespace detail

/// Builds a RunConfig from a parsed document. Unknown keys are errors.
inline RunConfig run_config_from(const ConfigDoc& doc) {
  RunConfig rc;
  ExperimentSpec& s = rc.spec;
  auto take_size = [&](const std::string& key, auto& dst, long long min) {
    if (auto v = doc.integer(key)) {
      if (*v < min) doc.fail(doc.line_of(key), "'" + key + "' must be >= " + std::to_string(min));
      dst = static_cast<std::remove_reference_t<decltype(dst)>>(*v);
    }
  };
  auto take_num = [&](const std::string& key, double& dst) {
    if (auto v = doc.number(key)) dst = *v;
  };

  if (auto v = doc.string("name")) s.name = *v;
  if (auto v = doc.string("output_dir")) rc.output_dir = *v;
  take_size("seed", s.init_seed, 0);
  take_size("particles", s.particles, 1);
  take_size("threads", s.threads, 0);
  if (auto v = doc.number("e_star")) rc.e_star = *v;
  if (auto v = doc.strings("diagnostics")) {
    for (const auto& d : *v)
      if (std::find(known_diagnostics().begin(), known_diagnostics().end(), d) == known_diagnostics().end())
        doc.fail(doc.line_of("diagnostics"), "unknown diagnostic '" + d + "'");
    s.diagnostics = *v;
  }
  if (auto v = doc.numbers("gap_levels")) {
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!((*v)[i] > 0.0)) doc.fail(doc.line_of("gap_levels"), "gap levels must be positive");
      if (i > 0 && !((*v)[i] < (*v)[i - 1])) doc.fail(doc.line_of("gap_levels"), "gap levels must be strictly decreasing");
    }
    s.gap_levels = *v;
  }

  // [problem]
  if (auto v = doc.string("problem.kind")) {
    auto k = parse_problem_kind(*v);
    if (!k) doc.fail(doc.line_of("problem.kind"), "unknown problem kind '" + *v + "'");
    s.problem.kind = *k;
  } else {
    doc.fail(doc.table_line("problem"), "missing required key 'kind' in [problem]");
  }
  take_size("problem.dim", s.problem.dim, 1);
  take_num("problem.eig_min", s.problem.eig_min);
  take_num("problem.eig_max", s.problem.eig_max);
  take_num("problem.b_variance", s.problem.b_variance);
  take_size("problem.terms", s.problem.terms, 1);
  take_num("problem.h", s.problem.h);
  take_num("problem.epsilon", s.problem.epsilon);
  take_size("problem.samples", s.problem.samples, 1);
  take_size("problem.seed", s.problem.seed, 0);

  // [integrator]
  auto& ic = s.integrator;
  ic.t_start = 1e-2;
  take_num("integrator.rtol", ic.rtol);
  take_num("integrator.atol", ic.atol);
  take_num("integrator.t_start", ic.t_start);
  take_num("integrator.t_end", ic.t_end);
  take_size("integrator.max_steps", ic.max_steps, 1);
  if (auto v = doc.number("integrator.initial_step")) ic.initial_step = *v;
  take_size("integrator.record_count", s.record_count, 1);
  if (auto v = doc.number("integrator.record_every")) {
    if (doc.has("integrator.record_count"))
      doc.fail(doc.line_of("integrator.record_every"), "give either record_every or record_count, not both");
    if (!(*v > 0.0)) doc.fail(doc.line_of("integrator.record_every"), "'record_every' must be > 0");
    s.record_count = static_cast<std::size_t>(std::max(1.0, std::round((ic.t_end - ic.t_start) / *v)));
  }
  if (!(ic.rtol > 0.0) || !(ic.atol > 0.0)) doc.fail(doc.table_line("integrator"), "rtol and atol must be > 0");
  if (!(ic.t_start < ic.t_end)) doc.fail(doc.table_line("integrator"), "t_start must be < t_end");

  // methods
  auto names = doc.strings("methods");
  if (!names) doc.fail(0, "missing required key 'methods'");
  if (names->empty()) doc.fail(doc.line_of("methods"), "method list is empty");
  for (const auto& sub : doc.subtables("method"))
    if (std::find(names->begin(), names->end(), sub) == names->end())
      doc.fail(doc.table_line("method." + sub), "[method." + sub + "] does not match any entry of 'methods'");
  for (const auto& name : *names) {
    const std::string pre = "method." + name + ".";
    const std::size_t ln = doc.has_table("method." + name) ? doc.table_line("method." + name) : doc.line_of("methods");
    MethodSpec m;
    if (auto preset = method_preset(name)) m = *preset;
    m.label = name;
    if (auto f = doc.string(pre + "flow")) {
      auto fam = detail::parse_family(*f);
      if (!fam) doc.fail(doc.line_of(pre + "flow"), "unknown flow '" + *f + "'");
      m.family = *fam;
      if (m.family == Family::bregman && !doc.has(pre + "schedule")) m.schedule = "mirror";
    } else if (!method_preset(name)) {
      doc.fail(ln, "method '" + name + "' is not a preset; give [method." + name + "] flow = ...");
    }
    if (auto f = doc.string(pre + "form")) {
      if (*f == "damped")
        m.form = Form::damped;
      else if (*f == "undamped")
        m.form = Form::undamped;
      else
        doc.fail(doc.line_of(pre + "form"), "form must be \"damped\" or \"undamped\"");
    }
    take_num(pre + "a", m.a);
    take_num(pre + "lambda", m.lambda);
    take_num(pre + "stein_bandwidth", m.bandwidth);
    take_num(pre + "mirror_r", m.mirror_r);
    take_num(pre + "dilation_power", m.dilation_power);
    if (auto v = doc.number(pre + "t_end")) m.t_end = *v;
    if (auto v = doc.string(pre + "schedule")) {
      if (*v != "nesterov" && *v != "exponential" && *v != "mirror" && *v != "custom")
        doc.fail(doc.line_of(pre + "schedule"), "unknown schedule '" + *v + "'");
      m.schedule = *v;
    }
    if (m.schedule == "custom" && (m.family == Family::vaf || m.family == Family::bregman)) {
      m.custom_alpha = detail::coeffs_from(doc, pre + "alpha");
      m.custom_beta = detail::coeffs_from(doc, pre + "beta");
      m.custom_gamma = detail::coeffs_from(doc, pre + "gamma");
    }
    if ((m.family == Family::heavy_ball || m.family == Family::kalman || m.family == Family::stein) && !(m.a > 0.0))
      doc.fail(doc.has(pre + "a") ? doc.line_of(pre + "a") : ln, "method '" + name + "' needs a > 0");
    if (m.family == Family::kalman && !(m.lambda >= 0.0)) doc.fail(doc.line_of(pre + "lambda"), "lambda must be >= 0");
    if (m.family == Family::stein && !(m.bandwidth > 0.0))
      doc.fail(doc.line_of(pre + "stein_bandwidth"), "stein_bandwidth must be > 0");
    if (!(m.dilation_power > 0.0)) doc.fail(doc.line_of(pre + "dilation_power"), "dilation_power must be > 0");
    if (m.t_end && !(*m.t_end > ic.t_start)) doc.fail(doc.line_of(pre + "t_end"), "t_end must exceed t_start");
    s.methods.push_back(std::move(m));
  }

  doc.reject_unused();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    doc.fail(0, e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from(ConfigDoc::load(path)); }

}  // namespace wflow
