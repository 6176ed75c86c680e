#pragma once

// Exterior forms with symbolic coefficients, and the field-equation
// extractor: for a top-degree form Theta on a fibered chart, every vertical
// coordinate direction Z gives one equation psi^*( i(Z) dTheta ) = 0 along a
// generic section psi, with D[x](z) placeholders standing for the section's
// first base derivatives.

#include <algorithm>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jetvar/jetcalc.hpp"
#include "jetvar/symexpr.hpp"

namespace jetvar {

class FormError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Increasing list of coordinate differentials dz^{k1} ^ ... ^ dz^{kr}.
using Basis = std::vector<Symbol>;

class DiffForm {
 public:
  DiffForm() = default;

  static DiffForm function(const Expr& f) {
    DiffForm w;
    w.degree_ = 0;
    if (!f.is_zero()) w.terms_.emplace(Basis{}, f);
    return w;
  }

  static DiffForm differential(Symbol s) {
    DiffForm w;
    w.degree_ = 1;
    w.terms_.emplace(Basis{s}, Expr(1));
    return w;
  }

  int degree() const { return degree_; }
  bool is_zero() const { return terms_.empty(); }
  const std::map<Basis, Expr>& terms() const { return terms_; }

  Expr coefficient(const Basis& b) const {
    auto it = terms_.find(b);
    return it == terms_.end() ? Expr() : it->second;
  }

  /// Adds c * dz^{list}; the list may be unsorted and is normalized with sign.
  void add_term(std::vector<Symbol> list, const Expr& c) {
    if (c.is_zero()) return;
    if (terms_.empty()) degree_ = static_cast<int>(list.size());
    if (static_cast<int>(list.size()) != degree_) throw FormError("mixed degrees in a form");
    int sign = 1;
    // insertion sort tracks the permutation parity
    for (std::size_t i = 1; i < list.size(); ++i)
      for (std::size_t j = i; j > 0 && list[j] < list[j - 1]; --j) {
        std::swap(list[j], list[j - 1]);
        sign = -sign;
      }
    for (std::size_t i = 1; i < list.size(); ++i)
      if (list[i] == list[i - 1]) return;
    Expr v = sign > 0 ? c : -c;
    auto [it, inserted] = terms_.try_emplace(list, v);
    if (!inserted) {
      it->second += v;
      if (it->second.is_zero()) terms_.erase(it);
    }
  }

  friend DiffForm operator+(const DiffForm& a, const DiffForm& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    if (a.degree_ != b.degree_) throw FormError("adding forms of different degree");
    DiffForm r = a;
    for (const auto& [k, c] : b.terms_) r.add_term(k, c);
    return r;
  }

  friend DiffForm operator-(const DiffForm& a) {
    DiffForm r;
    r.degree_ = a.degree_;
    for (const auto& [k, c] : a.terms_) r.terms_.emplace(k, -c);
    return r;
  }

  friend DiffForm operator-(const DiffForm& a, const DiffForm& b) { return a + (-b); }

  friend DiffForm operator*(const Expr& f, const DiffForm& w) {
    DiffForm r;
    r.degree_ = w.degree_;
    if (f.is_zero()) return r;
    for (const auto& [k, c] : w.terms_) {
      Expr v = f * c;
      if (!v.is_zero()) r.terms_.emplace(k, v);
    }
    return r;
  }

  friend bool operator==(const DiffForm& a, const DiffForm& b) {
    if (a.is_zero() && b.is_zero()) return true;
    return a.degree_ == b.degree_ && a.terms_ == b.terms_;
  }

 private:
  int degree_ = 0;
  std::map<Basis, Expr> terms_;
};

inline DiffForm wedge(const DiffForm& a, const DiffForm& b) {
  DiffForm r;
  if (a.is_zero() || b.is_zero()) return r;
  for (const auto& [ka, ca] : a.terms())
    for (const auto& [kb, cb] : b.terms()) {
      std::vector<Symbol> list = ka;
      list.insert(list.end(), kb.begin(), kb.end());
      r.add_term(std::move(list), ca * cb);
    }
  return r;
}

/// Exterior derivative.
inline DiffForm d(const DiffForm& w) {
  DiffForm r;
  for (const auto& [k, c] : w.terms())
    for (auto s : free_symbols(c)) {
      std::vector<Symbol> list{s};
      list.insert(list.end(), k.begin(), k.end());
      r.add_term(std::move(list), partial(c, s));
    }
  return r;
}

/// Interior product with the coordinate vector field d/dv.
inline DiffForm contract(Symbol v, const DiffForm& w) {
  if (w.degree() == 0) throw FormError("cannot contract a 0-form");
  DiffForm r;
  for (const auto& [k, c] : w.terms()) {
    auto it = std::find(k.begin(), k.end(), v);
    if (it == k.end()) continue;
    auto pos = it - k.begin();
    std::vector<Symbol> rest = k;
    rest.erase(rest.begin() + pos);
    r.add_term(std::move(rest), pos % 2 == 0 ? c : -c);
  }
  return r;
}

/// d^m x = dx^1 ^ ... ^ dx^m in the given coordinate order.
inline DiffForm volume_form(const std::vector<Symbol>& base) {
  DiffForm r = DiffForm::function(1);
  for (auto s : base) r = wedge(r, DiffForm::differential(s));
  return r;
}

/// d^{m-1}x_i = i(d/dx^i) d^m x.
inline DiffForm hyperplane_form(const std::vector<Symbol>& base, int i) {
  return contract(base.at(static_cast<std::size_t>(i)), volume_form(base));
}

/// Coefficient f of a base top form f d^m x.
inline Expr top_coefficient(const DiffForm& w, const std::vector<Symbol>& base) {
  if (w.is_zero()) return Expr();
  if (w.degree() != static_cast<int>(base.size())) throw FormError("form is not of top degree on the base");
  auto vol = volume_form(base);
  const auto& [vk, vc] = *vol.terms().begin();  // vc is +1 or -1
  for (const auto& [k, c] : w.terms())
    if (k != vk) throw FormError("form still carries non-base differentials");
  return w.coefficient(vk) * vc;
}

/// Pullback along a map given by coordinate expressions: z -> phi(z), dz -> d(phi(z)).
inline DiffForm pullback(const DiffForm& w, const Bindings& map) {
  DiffForm r;
  for (const auto& [k, c] : w.terms()) {
    DiffForm term = DiffForm::function(substitute(c, map));
    for (auto s : k) {
      auto it = map.find(s);
      DiffForm ds;
      if (it == map.end()) {
        ds = DiffForm::differential(s);
      } else {
        for (auto t : free_symbols(it->second)) ds = ds + partial(it->second, t) * DiffForm::differential(t);
      }
      term = wedge(term, ds);
      if (term.is_zero()) break;
    }
    r = r + term;
  }
  return r;
}

/// Pullback by a closed-form section of the bundle over the base: every
/// non-base symbol of the form must be supplied as an expression in the base.
inline DiffForm pullback_by_section(const DiffForm& w, const std::vector<Symbol>& base, const Bindings& section) {
  std::set<Symbol> bs(base.begin(), base.end());
  for (const auto& [k, c] : w.terms()) {
    auto check = [&](Symbol s) {
      if (!bs.count(s) && !section.count(s)) throw FormError("section has no component for '" + s.name() + "'");
    };
    for (auto s : k) check(s);
    for (auto s : free_symbols(c)) check(s);
  }
  for (const auto& [s, e] : section)
    for (auto t : free_symbols(e))
      if (!bs.count(t)) throw FormError("section component '" + s.name() + "' depends on non-base symbol '" + t.name() + "'");
  return pullback(w, section);
}

// ---------------------------------------------------------------------------
// Derivative placeholders D[x](z)

namespace detail {
struct PlaceholderRegistry {
  std::mutex mutex;
  std::map<Symbol, std::pair<Symbol, Symbol>> decode;  // placeholder -> (base, coordinate)
  static PlaceholderRegistry& instance() {
    static PlaceholderRegistry r;
    return r;
  }
};
}  // namespace detail

/// Symbol standing for the first derivative d z / d x of a section component.
inline Symbol derivative_placeholder(Symbol base, Symbol z) {
  auto s = Symbol::intern("D[" + base.name() + "](" + z.name() + ")", SymbolKind::auxiliary);
  auto& reg = detail::PlaceholderRegistry::instance();
  std::lock_guard lock(reg.mutex);
  reg.decode.emplace(s, std::make_pair(base, z));
  return s;
}

/// (base, coordinate) of a placeholder symbol.
inline std::optional<std::pair<Symbol, Symbol>> decode_placeholder(Symbol s) {
  auto& reg = detail::PlaceholderRegistry::instance();
  std::lock_guard lock(reg.mutex);
  auto it = reg.decode.find(s);
  if (it == reg.decode.end()) return std::nullopt;
  return it->second;
}

/// Pullback along a generic section: z stays, dz -> sum_j D[x^j](z) dx^j.
inline DiffForm pullback_generic(const DiffForm& w, const std::vector<Symbol>& base) {
  std::set<Symbol> bs(base.begin(), base.end());
  DiffForm r;
  for (const auto& [k, c] : w.terms()) {
    DiffForm term = DiffForm::function(c);
    for (auto s : k) {
      DiffForm ds;
      if (bs.count(s)) {
        ds = DiffForm::differential(s);
      } else {
        for (auto b : base) ds = ds + Expr(derivative_placeholder(b, s)) * DiffForm::differential(b);
      }
      term = wedge(term, ds);
      if (term.is_zero()) break;
    }
    r = r + term;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Fibered charts and PDE systems

/// Chart of a bundle over the base: a jet block (x^i, u^a_I) of some order
/// plus extra fiber coordinates (momenta).
class FiberedChart {
 public:
  FiberedChart() = default;
  FiberedChart(JetChart jets, std::vector<Symbol> extra) : jets_(std::move(jets)), extra_(std::move(extra)) {
    for (auto s : extra_)
      if (jets_.contains(s)) throw FormError("extra fiber coordinate duplicates a jet coordinate");
  }
  /// Chart with a truncated jet block: only jet coordinates up to `max_order`.
  FiberedChart(JetChart jets, int max_order, std::vector<Symbol> extra)
      : FiberedChart(jets.with_order(max_order), std::move(extra)) {}

  const JetChart& jets() const { return jets_; }
  const std::vector<Symbol>& base() const { return jets_.base(); }
  const std::vector<Symbol>& extra() const { return extra_; }

  std::vector<Symbol> fiber() const {
    auto f = jets_.jets();
    f.insert(f.end(), extra_.begin(), extra_.end());
    return f;
  }

  std::vector<Symbol> symbols() const {
    auto s = base();
    auto f = fiber();
    s.insert(s.end(), f.begin(), f.end());
    return s;
  }

  bool contains(Symbol s) const {
    return jets_.contains(s) || std::find(extra_.begin(), extra_.end(), s) != extra_.end();
  }

 private:
  JetChart jets_;
  std::vector<Symbol> extra_;
};

enum class EquationTag { identity, constraint, holonomy, dynamical };

inline const char* to_string(EquationTag t) {
  switch (t) {
    case EquationTag::identity: return "identity";
    case EquationTag::constraint: return "constraint";
    case EquationTag::holonomy: return "holonomy";
    case EquationTag::dynamical: return "dynamical";
  }
  return "?";
}

struct FieldEquation {
  Symbol direction;  ///< vertical coordinate direction that produced the equation
  Expr lhs;          ///< the equation reads lhs = 0
  EquationTag tag = EquationTag::identity;
};

struct PDESystem {
  std::vector<FieldEquation> equations;

  std::vector<FieldEquation> tagged(EquationTag t) const {
    std::vector<FieldEquation> out;
    for (const auto& e : equations)
      if (e.tag == t) out.push_back(e);
    return out;
  }

  std::size_t count(EquationTag t) const { return tagged(t).size(); }
};

/// Replaces every placeholder D[x^j](u^a_I) of a jet coordinate by u^a_{I+1_j}.
inline Expr holonomic_substitution(const Expr& e, const JetChart& chart) {
  Bindings b;
  auto top = chart.with_order(4);
  for (auto s : free_symbols(e)) {
    auto ph = decode_placeholder(s);
    if (!ph) continue;
    auto jc = top.decode(ph->second);
    auto bi = chart.base_index(ph->first);
    if (!jc || !bi) continue;
    if (jc->index.order() >= 4) throw JetError("holonomic substitution beyond jet order 4");
    b[s] = Expr(top.jet(jc->field, jc->index.raised(*bi)));
  }
  return substitute(e, b);
}

inline bool has_placeholders(const Expr& e) {
  for (auto s : free_symbols(e))
    if (decode_placeholder(s)) return true;
  return false;
}

inline bool mentions_momenta(const Expr& e) {
  for (auto s : free_symbols(e)) {
    if (s.kind() == SymbolKind::momentum) return true;
    if (auto ph = decode_placeholder(s); ph && ph->second.kind() == SymbolKind::momentum) return true;
  }
  return false;
}

inline EquationTag classify(const Expr& lhs, const JetChart& chart) {
  if (lhs.is_zero()) return EquationTag::identity;
  if (!has_placeholders(lhs)) return EquationTag::constraint;
  if (!mentions_momenta(lhs) && holonomic_substitution(lhs, chart).is_zero()) return EquationTag::holonomy;
  return EquationTag::dynamical;
}

/// Expands psi^*( i(d/dz^A) dTheta ) = 0 for every fiber coordinate z^A.
inline PDESystem extract_field_equations(const DiffForm& theta, const FiberedChart& chart) {
  const auto& base = chart.base();
  if (!theta.is_zero() && theta.degree() != static_cast<int>(base.size()))
    throw FormError("field equations need a form of top degree " + std::to_string(base.size()) + ", got degree " +
                    std::to_string(theta.degree()));
  DiffForm dtheta = d(theta);
  PDESystem sys;
  for (auto z : chart.fiber()) {
    FieldEquation eq;
    eq.direction = z;
    if (!dtheta.is_zero()) eq.lhs = top_coefficient(pullback_generic(contract(z, dtheta), base), base);
    eq.tag = classify(eq.lhs, chart.jets());
    sys.equations.push_back(std::move(eq));
  }
  return sys;
}

inline std::string to_string(const DiffForm& w) {
  if (w.is_zero()) return "0";
  std::string out;
  bool first = true;
  for (const auto& [k, c] : w.terms()) {
    if (!first) out += " + ";
    first = false;
    std::string coeff = to_string(c);
    bool compound = c.term_count() > 1;
    out += compound ? "(" + coeff + ")" : coeff;
    for (std::size_t i = 0; i < k.size(); ++i) out += (i ? "^d" : " d") + k[i].name();
  }
  return out;
}

}  // namespace jetvar
