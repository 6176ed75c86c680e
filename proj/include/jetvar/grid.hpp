#pragma once

// Uniform tensor grids over a box in the base, sampled sections on them, and
// the finite-difference stencils shared by the holonomy check and the
// discrete action functionals.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetvar/symexpr.hpp"

namespace jetvar {

class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform grid on [lower_i, upper_i] with points_i nodes per axis.
class Grid {
 public:
  Grid() = default;

  Grid(std::vector<double> lower, std::vector<double> upper, std::vector<int> points)
      : lower_(std::move(lower)), upper_(std::move(upper)), points_(std::move(points)) {
    if (lower_.size() != upper_.size() || lower_.size() != points_.size() || lower_.empty())
      throw GridError("grid axes disagree in count");
    for (std::size_t a = 0; a < lower_.size(); ++a) {
      if (!(upper_[a] > lower_[a])) throw GridError("empty box along axis " + std::to_string(a));
      if (points_[a] < 2) throw GridError("grid needs at least 2 points per axis");
    }
  }

  /// Same resolution on every axis of the box.
  static Grid uniform(std::vector<double> lower, std::vector<double> upper, int points) {
    std::vector<int> n(lower.size(), points);
    return Grid(std::move(lower), std::move(upper), std::move(n));
  }

  int dim() const { return static_cast<int>(points_.size()); }
  int points(int axis) const { return points_[static_cast<std::size_t>(axis)]; }
  double lower(int axis) const { return lower_[static_cast<std::size_t>(axis)]; }
  double upper(int axis) const { return upper_[static_cast<std::size_t>(axis)]; }
  double spacing(int axis) const { return (upper(axis) - lower(axis)) / (points(axis) - 1); }

  double max_spacing() const {
    double h = 0.0;
    for (int a = 0; a < dim(); ++a) h = std::max(h, spacing(a));
    return h;
  }

  std::size_t size() const {
    std::size_t s = 1;
    for (int n : points_) s *= static_cast<std::size_t>(n);
    return s;
  }

  /// Row-major node index: axis 0 varies slowest.
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = dim() - 1; a > axis; --a) s *= static_cast<std::size_t>(points(a));
    return s;
  }

  int index_along(std::size_t node, int axis) const {
    return static_cast<int>((node / stride(axis)) % static_cast<std::size_t>(points(axis)));
  }

  double coordinate(std::size_t node, int axis) const { return lower(axis) + index_along(node, axis) * spacing(axis); }

  bool interior(std::size_t node, int margin) const {
    for (int a = 0; a < dim(); ++a) {
      int i = index_along(node, a);
      if (i < margin || i > points(a) - 1 - margin) return false;
    }
    return true;
  }

  /// Every other node; requires odd resolutions.
  Grid coarsened() const {
    std::vector<int> n;
    for (int p : points_) {
      if (p % 2 == 0) throw GridError("coarsening needs an odd number of points per axis");
      n.push_back((p + 1) / 2);
    }
    return Grid(lower_, upper_, n);
  }

  /// Composite trapezoidal weight of a node (product over axes).
  double trapezoid_weight(std::size_t node) const {
    double w = 1.0;
    for (int a = 0; a < dim(); ++a) {
      int i = index_along(node, a);
      double h = spacing(a);
      w *= (i == 0 || i == points(a) - 1) ? 0.5 * h : h;
    }
    return w;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::vector<double> lower_, upper_;
  std::vector<int> points_;
};

/// First derivative along one axis: fourth-order five-point central stencil
/// in the interior, fourth-order one-sided stencils on the two boundary
/// layers.  Requires at least five points along the axis.
inline std::vector<double> differentiate(const Grid& grid, std::span<const double> f, int axis) {
  const int n = grid.points(axis);
  if (n < 5) throw GridError("grid too small for the derivative stencil (need >= 5 points per axis)");
  const double inv = 1.0 / (12.0 * grid.spacing(axis));
  const std::size_t s = grid.stride(axis);
  std::vector<double> out(f.size());
  for (std::size_t node = 0; node < f.size(); ++node) {
    int i = grid.index_along(node, axis);
    auto at = [&](int k) { return f[node + static_cast<std::size_t>(k - i) * s]; };
    double d;
    if (i >= 2 && i <= n - 3)
      d = -at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2);
    else if (i == 0)
      d = -25.0 * at(0) + 48.0 * at(1) - 36.0 * at(2) + 16.0 * at(3) - 3.0 * at(4);
    else if (i == 1)
      d = -3.0 * at(0) - 10.0 * at(1) + 18.0 * at(2) - 6.0 * at(3) + at(4);
    else if (i == n - 1)
      d = 25.0 * at(n - 1) - 48.0 * at(n - 2) + 36.0 * at(n - 3) - 16.0 * at(n - 4) + 3.0 * at(n - 5);
    else
      d = 3.0 * at(n - 1) + 10.0 * at(n - 2) - 18.0 * at(n - 3) + 6.0 * at(n - 4) - at(n - 5);
    out[node] = d * inv;
  }
  return out;
}

/// Samples of chart coordinates at the grid nodes, one array per component.
class DiscreteSection {
 public:
  DiscreteSection() = default;
  DiscreteSection(Grid grid, std::vector<Symbol> components)
      : grid_(std::move(grid)), components_(std::move(components)),
        values_(components_.size(), std::vector<double>(grid_.size(), 0.0)) {}

  const Grid& grid() const { return grid_; }
  const std::vector<Symbol>& components() const { return components_; }

  std::ptrdiff_t find(Symbol s) const {
    for (std::size_t i = 0; i < components_.size(); ++i)
      if (components_[i] == s) return static_cast<std::ptrdiff_t>(i);
    return -1;
  }

  std::size_t index_of(Symbol s) const {
    auto i = find(s);
    if (i < 0) throw GridError("section has no component '" + s.name() + "'");
    return static_cast<std::size_t>(i);
  }

  std::span<const double> values(std::size_t c) const { return values_[c]; }
  std::span<double> values(std::size_t c) { return values_[c]; }
  std::span<const double> values(Symbol s) const { return values_[index_of(s)]; }
  std::span<double> values(Symbol s) { return values_[index_of(s)]; }

  /// Fills every component by evaluating closed forms in the base coordinates.
  void fill(const std::vector<Symbol>& base, const Bindings& closed_form) {
    std::vector<CompiledExpr> compiled;
    for (auto c : components_) {
      auto it = closed_form.find(c);
      if (it == closed_form.end()) throw GridError("no closed form for component '" + c.name() + "'");
      compiled.emplace_back(it->second, base);
    }
    std::vector<double> x(base.size());
    for (std::size_t node = 0; node < grid_.size(); ++node) {
      for (int a = 0; a < grid_.dim(); ++a) x[static_cast<std::size_t>(a)] = grid_.coordinate(node, a);
      for (std::size_t c = 0; c < components_.size(); ++c) values_[c][node] = compiled[c](x);
    }
  }

  /// Restriction to the coarsened grid (every other node).
  DiscreteSection coarsened() const {
    DiscreteSection out(grid_.coarsened(), components_);
    const Grid& cg = out.grid_;
    for (std::size_t node = 0; node < cg.size(); ++node) {
      std::size_t fine = 0;
      for (int a = 0; a < cg.dim(); ++a) fine += static_cast<std::size_t>(2 * cg.index_along(node, a)) * grid_.stride(a);
      for (std::size_t c = 0; c < components_.size(); ++c) out.values_[c][node] = values_[c][fine];
    }
    return out;
  }

  bool has_nan() const {
    for (const auto& v : values_)
      for (double d : v)
        if (!std::isfinite(d)) return true;
    return false;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& v : values_)
      for (double d : v) m = std::max(m, std::abs(d));
    return m;
  }

 private:
  Grid grid_;
  std::vector<Symbol> components_;
  std::vector<std::vector<double>> values_;
};

}  // namespace jetvar
