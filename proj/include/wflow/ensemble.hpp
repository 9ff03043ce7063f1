#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wflow/format.hpp"
#include "wflow/rng.hpp"
#include "wflow/types.hpp"

namespace wflow {

/// Uniformly weighted point cloud (1/N)·Σ δ_{x_i}.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;
  explicit EmpiricalMeasure(Matrix points) : points_(std::move(points)) {
    if (points_.rows() < 1 || points_.cols() < 1)
      throw std::invalid_argument("empirical measure needs N >= 1 points of dimension d >= 1");
    if (!points_.allFinite())
      throw std::invalid_argument("empirical measure has non-finite entries");
  }

  const Matrix& points() const { return points_; }
  Index size() const { return points_.rows(); }
  Index dim() const { return points_.cols(); }

  /// Mean of the points.
  Vector mean() const { return points_.colwise().mean().transpose(); }

 private:
  Matrix points_;
};

/// Particle approximation (1/N)·Σ δ_{(X_i, V_i)} of a phase-space measure at
/// a given time. Immutable after construction.
class PhaseEnsemble {
 public:
  PhaseEnsemble() = default;
  PhaseEnsemble(Matrix positions, Matrix velocities, double time = 0.0)
      : positions_(std::move(positions)), velocities_(std::move(velocities)), time_(time) {
    if (positions_.rows() < 1 || positions_.cols() < 1)
      throw std::invalid_argument("phase ensemble needs N >= 1 particles of dimension d >= 1");
    if (positions_.rows() != velocities_.rows() || positions_.cols() != velocities_.cols())
      throw std::invalid_argument("positions and velocities must have identical shape");
    if (!std::isfinite(time_))
      throw std::invalid_argument("phase ensemble time must be finite");
    if (!positions_.allFinite() || !velocities_.allFinite())
      throw std::invalid_argument("phase ensemble has non-finite entries");
  }

  const Matrix& positions() const { return positions_; }
  const Matrix& velocities() const { return velocities_; }
  double time() const { return time_; }
  Index size() const { return positions_.rows(); }
  Index dim() const { return positions_.cols(); }

  PhaseEnsemble with_time(double t) const { return {positions_, velocities_, t}; }

 private:
  Matrix positions_;
  Matrix velocities_;
  double time_ = 0.0;
};

/// X_i(0), V_i(0) i.i.d. N(0, I_d) from PCG32(seed). All n·d position
/// entries are drawn first (particle-major), then the velocities.
inline PhaseEnsemble init_gaussian(Index n, Index d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("init_gaussian: n and d must be >= 1");
  Pcg32 rng(seed);
  Matrix x(n, d), v(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) x(i, k) = rng.normal();
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) v(i, k) = rng.normal();
  return {std::move(x), std::move(v), 0.0};
}

inline EmpiricalMeasure x_marginal(const PhaseEnsemble& e) { return EmpiricalMeasure(e.positions()); }

/// (1/N)·Σ ½‖scale·V_i‖².
inline double kinetic_energy(const PhaseEnsemble& e, double scale) {
  const Vector per = e.velocities().rowwise().squaredNorm();
  return 0.5 * scale * scale * order_free_sum(per) / static_cast<double>(e.size());
}

// Snapshot CSV: header `particle,coord,x,v`, one row per (particle, coordinate).
inline void write_snapshot_csv(std::ostream& out, const PhaseEnsemble& e) {
  out << "particle,coord,x,v\n";
  for (Index i = 0; i < e.size(); ++i)
    for (Index k = 0; k < e.dim(); ++k)
      out << i << ',' << k << ',' << fmt17(e.positions()(i, k)) << ','
          << fmt17(e.velocities()(i, k)) << '\n';
}

inline PhaseEnsemble read_snapshot_csv(std::istream& in, double time = 0.0) {
  std::string line;
  if (!std::getline(in, line) || line != "particle,coord,x,v")
    throw std::invalid_argument("snapshot CSV: expected header 'particle,coord,x,v'");
  struct Row {
    long particle, coord;
    double x, v;
  };
  std::vector<Row> rows;
  long max_p = -1, max_c = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Row r{};
    char c1 = 0, c2 = 0;
    if (!(ss >> r.particle >> c1 >> r.coord >> c2) || c1 != ',' || c2 != ',')
      throw std::invalid_argument("snapshot CSV line " + std::to_string(lineno) + ": malformed");
    std::string rest;
    std::getline(ss, rest);
    const auto comma = rest.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("snapshot CSV line " + std::to_string(lineno) + ": malformed");
    r.x = std::stod(rest.substr(0, comma));
    r.v = std::stod(rest.substr(comma + 1));
    if (r.particle < 0 || r.coord < 0)
      throw std::invalid_argument("snapshot CSV line " + std::to_string(lineno) + ": negative index");
    max_p = std::max(max_p, r.particle);
    max_c = std::max(max_c, r.coord);
    rows.push_back(r);
  }
  if (max_p < 0) throw std::invalid_argument("snapshot CSV: no rows");
  const Index n = max_p + 1, d = max_c + 1;
  if (static_cast<Index>(rows.size()) != n * d)
    throw std::invalid_argument("snapshot CSV: expected one row per (particle, coord)");
  Matrix x(n, d), v(n, d);
  std::vector<char> seen(static_cast<std::size_t>(n * d), 0);
  for (const auto& r : rows) {
    auto& s = seen[static_cast<std::size_t>(r.particle * d + r.coord)];
    if (s) throw std::invalid_argument("snapshot CSV: duplicate (particle, coord)");
    s = 1;
    x(r.particle, r.coord) = r.x;
    v(r.particle, r.coord) = r.v;
  }
  return {std::move(x), std::move(v), time};
}

}  // namespace wflow
