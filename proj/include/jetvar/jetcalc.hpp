#pragma once

// Multi-indices, jet charts for J^k(pi), total derivatives, prolongation of
// closed-form sections and the grid holonomy check.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetvar/grid.hpp"
#include "jetvar/symexpr.hpp"

namespace jetvar {

class JetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tuple of derivative orders, one slot per base coordinate.
class MultiIndex {
 public:
  MultiIndex() = default;
  explicit MultiIndex(std::vector<int> orders) : orders_(std::move(orders)) {
    for (int o : orders_)
      if (o < 0) throw JetError("negative multi-index entry");
  }

  static MultiIndex zero(int m) { return MultiIndex(std::vector<int>(static_cast<std::size_t>(m), 0)); }

  /// 1_i: the unit index in slot i (0-based).
  static MultiIndex unit(int m, int i) {
    if (i < 0 || i >= m) throw JetError("unit index slot out of range");
    auto z = zero(m);
    z.orders_[static_cast<std::size_t>(i)] = 1;
    return z;
  }

  int dim() const { return static_cast<int>(orders_.size()); }
  int operator[](int i) const { return orders_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& orders() const { return orders_; }

  int order() const { return std::accumulate(orders_.begin(), orders_.end(), 0); }

  long factorial() const {
    long f = 1;
    for (int o : orders_)
      for (int k = 2; k <= o; ++k) f *= k;
    return f;
  }

  MultiIndex operator+(const MultiIndex& o) const {
    if (o.dim() != dim()) throw JetError("multi-index dimension mismatch");
    auto r = *this;
    for (std::size_t i = 0; i < orders_.size(); ++i) r.orders_[i] += o.orders_[i];
    return r;
  }

  MultiIndex raised(int i) const { return *this + unit(dim(), i); }

  /// Lowest slot with a non-zero entry, or -1 for the zero index.
  int first_nonzero() const {
    for (int i = 0; i < dim(); ++i)
      if (orders_[static_cast<std::size_t>(i)] > 0) return i;
    return -1;
  }

  MultiIndex lowered(int i) const {
    if ((*this)[i] == 0) throw JetError("cannot lower a zero slot");
    auto r = *this;
    r.orders_[static_cast<std::size_t>(i)] -= 1;
    return r;
  }

  std::string to_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < orders_.size(); ++i) s += (i ? "," : "") + std::to_string(orders_[i]);
    return s + "]";
  }

  friend auto operator<=>(const MultiIndex&, const MultiIndex&) = default;

 private:
  std::vector<int> orders_;
};

/// All multi-indices of length m with |I| = r, in descending lexicographic
/// order: for m = 2, r = 2 this is (2,0), (1,1), (0,2).
inline std::vector<MultiIndex> multi_indices(int m, int r) {
  std::vector<MultiIndex> out;
  std::vector<int> cur(static_cast<std::size_t>(m), 0);
  auto rec = [&](auto&& self, int slot, int left) -> void {
    if (slot == m - 1) {
      cur[static_cast<std::size_t>(slot)] = left;
      out.emplace_back(cur);
      return;
    }
    for (int k = left; k >= 0; --k) {
      cur[static_cast<std::size_t>(slot)] = k;
      self(self, slot + 1, left - k);
    }
  };
  if (m > 0) rec(rec, 0, r);
  return out;
}

inline long binomial(long n, long k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/// n(ij) = |1_i + 1_j|! / (1_i + 1_j)!  (1 on the diagonal, 2 off it).
/// Indices are 0-based.
inline Rational weight(int i, int j, int m) {
  if (i < 0 || j < 0 || i >= m || j >= m) throw JetError("weight index out of range");
  MultiIndex I = MultiIndex::unit(m, i) + MultiIndex::unit(m, j);
  return Rational(2 / I.factorial());
}

/// Coordinate naming shared by charts: "u" for the field itself and
/// "u[2,0]" for its derivative coordinates.
inline std::string jet_name(const std::string& field, const MultiIndex& I) {
  return I.order() == 0 ? field : field + I.to_string();
}

struct JetCoord {
  int field;
  MultiIndex index;
};

/// Coordinates (x^i, u^a_I), 0 <= |I| <= k, one symbol per distinct multi-index.
class JetChart {
 public:
  JetChart() = default;

  JetChart(std::vector<std::string> base, std::vector<std::string> fields, int order)
      : base_names_(std::move(base)), field_names_(std::move(fields)), order_(order) {
    if (base_names_.empty()) throw JetError("chart needs at least one base coordinate");
    if (field_names_.empty()) throw JetError("chart needs at least one field");
    if (order_ < 0 || order_ > 4) throw JetError("jet order must be between 0 and 4");
    for (const auto& b : base_names_) base_.push_back(Symbol::intern(b, SymbolKind::base_coordinate));
    for (int r = 0; r <= order_; ++r)
      for (int a = 0; a < n(); ++a)
        for (const auto& I : multi_indices(m(), r)) {
          auto s = Symbol::intern(jet_name(field_names_[static_cast<std::size_t>(a)], I), SymbolKind::jet_coordinate);
          jets_.push_back(s);
          decode_.emplace(s, JetCoord{a, I});
        }
  }

  int m() const { return static_cast<int>(base_names_.size()); }
  int n() const { return static_cast<int>(field_names_.size()); }
  int order() const { return order_; }
  const std::vector<std::string>& base_names() const { return base_names_; }
  const std::vector<std::string>& field_names() const { return field_names_; }

  const std::vector<Symbol>& base() const { return base_; }
  Symbol base(int i) const { return base_.at(static_cast<std::size_t>(i)); }

  /// Fiber coordinates ordered by order, then field, then multi-index.
  const std::vector<Symbol>& jets() const { return jets_; }

  std::vector<Symbol> symbols() const {
    auto all = base_;
    all.insert(all.end(), jets_.begin(), jets_.end());
    return all;
  }

  /// Closed-form symbol count: m + n * sum_{r<=k} C(m+r-1, r).
  static long expected_symbol_count(int m, int n, int k) {
    long c = 0;
    for (int r = 0; r <= k; ++r) c += binomial(m + r - 1, r);
    return m + n * c;
  }

  Symbol jet(int field, const MultiIndex& I) const {
    if (I.dim() != m()) throw JetError("multi-index arity " + std::to_string(I.dim()) + " != base dimension " + std::to_string(m()));
    if (I.order() > order_) throw JetError("multi-index order exceeds chart order");
    if (field < 0 || field >= n()) throw JetError("field index out of range");
    return Symbol::intern(jet_name(field_names_[static_cast<std::size_t>(field)], I), SymbolKind::jet_coordinate);
  }

  std::optional<JetCoord> decode(Symbol s) const {
    auto it = decode_.find(s);
    if (it == decode_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<int> base_index(Symbol s) const {
    for (std::size_t i = 0; i < base_.size(); ++i)
      if (base_[i] == s) return static_cast<int>(i);
    return std::nullopt;
  }

  bool contains(Symbol s) const { return base_index(s).has_value() || decode_.count(s) > 0; }

  JetChart with_order(int k) const { return JetChart(base_names_, field_names_, k); }

 private:
  std::vector<std::string> base_names_;
  std::vector<std::string> field_names_;
  int order_ = 0;
  std::vector<Symbol> base_;
  std::vector<Symbol> jets_;
  std::map<Symbol, JetCoord> decode_;
};

/// D_j e = de/dx^j + sum_a sum_I u^a_{I+1_j} de/du^a_I.  The input must live on
/// `chart`; the result lives on the chart of one order higher.
inline Expr total_derivative(const Expr& e, int j, const JetChart& chart) {
  if (j < 0 || j >= chart.m()) throw JetError("total derivative direction out of range");
  Expr result;
  for (auto s : free_symbols(e)) {
    if (auto bi = chart.base_index(s)) {
      if (*bi == j) result += partial(e, s);
      continue;
    }
    auto jc = chart.decode(s);
    if (!jc) throw JetError("symbol '" + s.name() + "' is not a coordinate of the jet chart");
    if (jc->index.order() + 1 > 4) throw JetError("total derivative would exceed jet order 4");
    auto raised = Symbol::intern(jet_name(chart.field_names()[static_cast<std::size_t>(jc->field)], jc->index.raised(j)),
                                 SymbolKind::jet_coordinate);
    result += Expr(raised) * partial(e, s);
  }
  return result;
}

/// Iterated total derivative D_I.
inline Expr total_derivative(const Expr& e, const MultiIndex& I, const JetChart& chart) {
  if (I.order() == 0) return e;
  for (auto s : free_symbols(e))
    if (!chart.contains(s)) throw JetError("symbol '" + s.name() + "' is not a coordinate of the jet chart");
  auto top = chart.with_order(4);
  Expr r = e;
  for (int j = 0; j < I.dim(); ++j)
    for (int t = 0; t < I[j]; ++t) r = total_derivative(r, j, top);
  return r;
}

/// Closed-form section x -> u^a(x), one expression per field in the base coordinates.
struct SectionData {
  std::vector<Expr> fields;
};

/// j^k(phi): every jet coordinate u^a_I with |I| <= k bound to d^I phi^a / dx^I.
inline Bindings prolong(const SectionData& phi, const JetChart& chart, int k) {
  if (k < 0 || k > 4) throw JetError("prolongation order must be between 0 and 4");
  if (static_cast<int>(phi.fields.size()) != chart.n()) throw JetError("section field count does not match chart");
  std::set<Symbol> base(chart.base().begin(), chart.base().end());
  for (const auto& f : phi.fields)
    for (auto s : free_symbols(f))
      if (!base.count(s)) throw JetError("section depends on non-base symbol '" + s.name() + "'");
  auto target = chart.with_order(k);
  Bindings out;
  for (int r = 0; r <= k; ++r)
    for (int a = 0; a < chart.n(); ++a)
      for (const auto& I : multi_indices(chart.m(), r)) {
        if (r == 0) {
          out[target.jet(a, I)] = phi.fields[static_cast<std::size_t>(a)];
          continue;
        }
        int j = I.first_nonzero();
        out[target.jet(a, I)] = partial(out.at(target.jet(a, I.lowered(j))), chart.base(j));
      }
  return out;
}

struct HolonomyReport {
  bool holonomic = false;
  double max_residual = 0.0;
  std::string worst;  ///< "u[1] - D_x u" style label of the worst residual
};

/// Grid holonomy check: max over interior nodes of |u_{I+1_j} - D_j u_I| for
/// every pair of components present in the section, D_j by finite differences.
inline HolonomyReport is_holonomic(const DiscreteSection& section, const JetChart& chart, double tol = 1e-6) {
  const Grid& g = section.grid();
  if (g.dim() != chart.m()) throw JetError("grid dimension does not match chart base dimension");
  for (int a = 0; a < g.dim(); ++a)
    if (g.points(a) < 5) throw JetError("grid too small for the holonomy stencil (need >= 5 points per axis)");
  HolonomyReport rep;
  auto up = chart.with_order(4);
  for (std::size_t c = 0; c < section.components().size(); ++c) {
    auto jc = up.decode(section.components()[c]);
    if (!jc || jc->index.order() >= 4) continue;
    for (int j = 0; j < chart.m(); ++j) {
      auto target = section.find(up.jet(jc->field, jc->index.raised(j)));
      if (target < 0) continue;
      auto d = differentiate(g, section.values(c), j);
      auto tv = section.values(static_cast<std::size_t>(target));
      for (std::size_t node = 0; node < g.size(); ++node) {
        if (!g.interior(node, 2)) continue;
        double r = std::abs(tv[node] - d[node]);
        if (!(r <= rep.max_residual)) {
          rep.max_residual = r;
          rep.worst = section.components()[static_cast<std::size_t>(target)].name() + " - D_" +
                      chart.base_names()[static_cast<std::size_t>(j)] + " " + section.components()[c].name();
        }
      }
    }
  }
  rep.holonomic = rep.max_residual <= tol;
  return rep;
}

}  // namespace jetvar
