#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wflow/experiments.hpp"

namespace wflow::svg {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = true;
};

namespace detail {

inline constexpr double kWidth = 800, kHeight = 500;
inline constexpr double kLeft = 80, kRight = 170, kTop = 40, kBottom = 60;

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return palette[i % (sizeof palette / sizeof *palette)];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;  // in transformed units

  double map(double v) const { return log ? std::log10(v) : v; }
  bool usable(double v) const { return std::isfinite(v) && (!log || v > 0.0); }
  double frac(double v) const { return (map(v) - lo) / (hi - lo); }

  std::vector<double> ticks() const {
    std::vector<double> t;
    if (log) {
      const int a = static_cast<int>(std::ceil(lo - 1e-9)), b = static_cast<int>(std::floor(hi + 1e-9));
      const int stride = std::max(1, (b - a) / 8 + 1);
      for (int k = a; k <= b; k += stride) t.push_back(std::pow(10.0, k));
    } else {
      for (int k = 0; k <= 5; ++k) t.push_back(lo + (hi - lo) * k / 5.0);
    }
    return t;
  }
};

inline Axis fit_axis(const std::vector<Series>& series, bool log, bool use_x) {
  Axis ax;
  ax.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!ax.usable(s.x[i]) || !ax.usable(s.y[i])) continue;
      const double v = use_x ? s.x[i] : s.y[i];
      lo = std::min(lo, ax.map(v));
      hi = std::max(hi, ax.map(v));
    }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (log) {
    lo = std::floor(lo);
    hi = std::ceil(hi);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  ax.lo = lo;
  ax.hi = hi;
  return ax;
}

}  // namespace detail

/// Static line chart with a fixed 800×500 viewBox: one polyline per series,
/// in input order. Points that are non-finite or non-positive on a log axis
/// are skipped.
inline std::string line_chart(const std::vector<Series>& series, const ChartSpec& spec) {
  using namespace detail;
  std::vector<Series> gate(series);
  // x and y must both be usable on their own axes
  Axis ax, ay;
  ax.log = spec.log_x;
  ay.log = spec.log_y;
  for (auto& s : gate) {
    Series k{s.label, {}, {}};
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      if (ax.usable(s.x[i]) && ay.usable(s.y[i])) k.x.push_back(s.x[i]), k.y.push_back(s.y[i]);
    s = std::move(k);
  }
  ax = fit_axis(gate, spec.log_x, true);
  ay = fit_axis(gate, spec.log_y, false);

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + pw * ax.frac(v); };
  auto py = [&](double v) { return kTop + ph * (1.0 - ay.frac(v)); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" width=\"" << kWidth
    << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
    << "</text>\n";
  o << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (double t : ax.ticks()) {
    const double x = kLeft + pw * (ax.map(t) - ax.lo) / (ax.hi - ax.lo);
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(x) << "\" y2=\"" << num(kTop + ph + 5)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(x) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">" << tick_label(t)
      << "</text>\n";
  }
  for (double t : ay.ticks()) {
    const double y = kTop + ph * (1.0 - (ay.map(t) - ay.lo) / (ay.hi - ay.lo));
    o << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft) << "\" y2=\"" << num(y)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << tick_label(t)
      << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 15) << "\" text-anchor=\"middle\">"
    << escape(spec.x_label) << (spec.log_x ? " (log)" : "") << "</text>\n";
  o << "<text x=\"18\" y=\"" << num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << num(kTop + ph / 2) << ")\">" << escape(spec.y_label) << (spec.log_y ? " (log)" : "") << "</text>\n";

  for (std::size_t k = 0; k < gate.size(); ++k) {
    const auto& s = gate[k];
    o << "<polyline fill=\"none\" stroke=\"" << color(k) << "\" stroke-width=\"1.5\" data-label=\"" << escape(s.label)
      << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    o << "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(k);
    o << "<line x1=\"" << num(kLeft + pw + 15) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(kLeft + pw + 40)
      << "\" y2=\"" << num(ly) << "\" stroke=\"" << color(k) << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << num(kLeft + pw + 46) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Log-scale gap against t, one line per method.
inline std::string gap_chart(const ComparisonResult& res) {
  std::vector<Series> s;
  for (const auto& tr : res.traces) {
    Series k{tr.method.label, {}, {}};
    for (const auto& r : tr.rows) k.x.push_back(r.t), k.y.push_back(r.gap);
    s.push_back(std::move(k));
  }
  return line_chart(s, {res.name + ": optimality gap", "t", "E - E*", false, true});
}

/// Log-log total steps against gap level; unreached levels are left out.
inline std::string sweep_chart(const std::string& title, const std::vector<SweepRow>& rows) {
  std::vector<Series> s;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : rows) {
    auto [it, fresh] = slot.try_emplace(r.method, s.size());
    if (fresh) s.push_back({r.method, {}, {}});
    s[it->second].x.push_back(r.gap_level);
    s[it->second].y.push_back(r.total_steps);
  }
  return line_chart(s, {title + ": steps to reach gap", "gap level", "total steps", true, true});
}

}  // namespace wflow::svg
