#pragma once

// Immutable symbolic expressions over chart coordinates.
//
// Every Expr is kept in canonical form at all times: an expanded sum of
// monomials with exact rational coefficients.  A monomial is a sorted product
// of atoms raised to non-zero integer powers.  Atoms are symbols, elementary
// function applications (sin, cos, exp, ln) of canonical arguments, and
// opaque canonical sums, the latter only ever carrying negative exponents
// (positive powers of sums are always expanded).

#include <gmpxx.h>

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace jetvar {

using Rational = mpq_class;

class SymbolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SymbolKind { base_coordinate, jet_coordinate, momentum, auxiliary };

inline const char* to_string(SymbolKind k) {
  switch (k) {
    case SymbolKind::base_coordinate: return "base-coordinate";
    case SymbolKind::jet_coordinate: return "jet-coordinate";
    case SymbolKind::momentum: return "momentum";
    case SymbolKind::auxiliary: return "auxiliary";
  }
  return "?";
}

namespace detail {
struct SymbolData {
  std::string name;
  SymbolKind kind;
};

struct SymbolRegistry {
  std::mutex mutex;
  std::map<std::string, std::unique_ptr<SymbolData>, std::less<>> table;

  static SymbolRegistry& instance() {
    static SymbolRegistry r;
    return r;
  }
};
}  // namespace detail

/// Interned coordinate symbol.  Two symbols with the same name are the same
/// symbol; the kind is fixed by whoever creates the name first.
class Symbol {
 public:
  Symbol() = default;

  static Symbol intern(std::string_view name, SymbolKind kind) {
    if (name.empty()) throw SymbolError("empty symbol name");
    auto& reg = detail::SymbolRegistry::instance();
    std::lock_guard lock(reg.mutex);
    auto it = reg.table.find(name);
    if (it != reg.table.end()) {
      if (it->second->kind != kind)
        throw SymbolError("symbol '" + std::string(name) + "' already declared as " +
                          to_string(it->second->kind));
      return Symbol(it->second.get());
    }
    auto data = std::make_unique<detail::SymbolData>(detail::SymbolData{std::string(name), kind});
    const auto* raw = data.get();
    reg.table.emplace(std::string(name), std::move(data));
    return Symbol(raw);
  }

  static std::optional<Symbol> lookup(std::string_view name) {
    auto& reg = detail::SymbolRegistry::instance();
    std::lock_guard lock(reg.mutex);
    auto it = reg.table.find(name);
    if (it == reg.table.end()) return std::nullopt;
    return Symbol(it->second.get());
  }

  bool valid() const { return d_ != nullptr; }
  const std::string& name() const { return d_->name; }
  SymbolKind kind() const { return d_->kind; }

  friend bool operator==(Symbol a, Symbol b) { return a.d_ == b.d_; }
  friend std::strong_ordering operator<=>(Symbol a, Symbol b) {
    if (a.d_ == b.d_) return std::strong_ordering::equal;
    if (!a.d_) return std::strong_ordering::less;
    if (!b.d_) return std::strong_ordering::greater;
    int c = a.d_->name.compare(b.d_->name);
    return c < 0 ? std::strong_ordering::less : std::strong_ordering::greater;
  }

 private:
  explicit Symbol(const detail::SymbolData* d) : d_(d) {}
  const detail::SymbolData* d_ = nullptr;
};

enum class Func { sin, cos, exp, ln };

inline const char* to_string(Func f) {
  switch (f) {
    case Func::sin: return "sin";
    case Func::cos: return "cos";
    case Func::exp: return "exp";
    case Func::ln: return "ln";
  }
  return "?";
}

namespace detail {
struct ExprData;
struct AtomData;
using Atom = std::shared_ptr<const AtomData>;
}  // namespace detail

class Expr {
 public:
  Expr();
  Expr(int v);  // NOLINT(google-explicit-constructor)
  Expr(const Rational& v);  // NOLINT
  Expr(Symbol s);  // NOLINT

  bool is_zero() const;
  bool is_constant() const;
  /// Value of a constant expression; throws otherwise.
  Rational constant_value() const;
  std::size_t term_count() const;

  const detail::ExprData& data() const { return *d_; }

  friend bool operator==(const Expr& a, const Expr& b);
  friend std::strong_ordering operator<=>(const Expr& a, const Expr& b);

 private:
  friend struct ExprAccess;
  explicit Expr(std::shared_ptr<const detail::ExprData> d) : d_(std::move(d)) {}
  std::shared_ptr<const detail::ExprData> d_;
};

namespace detail {

enum class AtomKind { symbol = 0, func = 1, sum = 2 };

struct AtomData {
  AtomKind kind;
  Symbol sym;
  Func fn = Func::sin;
  Expr arg;
};

struct Factor {
  Atom atom;
  int exp;
};

using Monomial = std::vector<Factor>;

inline int compare_expr(const ExprData& a, const ExprData& b);

inline int compare_atom(const AtomData& a, const AtomData& b) {
  if (&a == &b) return 0;
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind) ? -1 : 1;
  switch (a.kind) {
    case AtomKind::symbol: {
      auto c = a.sym <=> b.sym;
      return c < 0 ? -1 : (c > 0 ? 1 : 0);
    }
    case AtomKind::func:
      if (a.fn != b.fn) return static_cast<int>(a.fn) < static_cast<int>(b.fn) ? -1 : 1;
      return compare_expr(a.arg.data(), b.arg.data());
    case AtomKind::sum:
      return compare_expr(a.arg.data(), b.arg.data());
  }
  return 0;
}

inline int compare_monomial(const Monomial& a, const Monomial& b) {
  std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    int c = compare_atom(*a[i].atom, *b[i].atom);
    if (c != 0) return c;
    if (a[i].exp != b[i].exp) return a[i].exp < b[i].exp ? -1 : 1;
  }
  if (a.size() == b.size()) return 0;
  return a.size() < b.size() ? -1 : 1;
}

struct MonoLess {
  bool operator()(const Monomial& a, const Monomial& b) const { return compare_monomial(a, b) < 0; }
};

using TermMap = std::map<Monomial, Rational, MonoLess>;

struct ExprData {
  TermMap terms;
};

inline int compare_expr(const ExprData& a, const ExprData& b) {
  if (&a == &b) return 0;
  auto ia = a.terms.begin();
  auto ib = b.terms.begin();
  for (; ia != a.terms.end() && ib != b.terms.end(); ++ia, ++ib) {
    int c = compare_monomial(ia->first, ib->first);
    if (c != 0) return c;
    int v = cmp(ia->second, ib->second);
    if (v != 0) return v < 0 ? -1 : 1;
  }
  if (ia == a.terms.end() && ib == b.terms.end()) return 0;
  return ia == a.terms.end() ? -1 : 1;
}

inline const std::shared_ptr<const ExprData>& zero_data() {
  static const auto z = std::make_shared<const ExprData>();
  return z;
}

}  // namespace detail

struct ExprAccess {
  static Expr make(detail::TermMap terms) {
    auto d = std::make_shared<detail::ExprData>();
    d->terms = std::move(terms);
    return Expr(std::shared_ptr<const detail::ExprData>(std::move(d)));
  }
};

inline Expr::Expr() : d_(detail::zero_data()) {}

inline Expr::Expr(const Rational& v) : d_(detail::zero_data()) {
  if (v != 0) {
    detail::TermMap t;
    t.emplace(detail::Monomial{}, v);
    *this = ExprAccess::make(std::move(t));
  }
}

inline Expr::Expr(int v) : Expr(Rational(v)) {}

inline Expr::Expr(Symbol s) : d_(detail::zero_data()) {
  if (!s.valid()) throw SymbolError("invalid symbol");
  auto atom = std::make_shared<const detail::AtomData>(detail::AtomData{detail::AtomKind::symbol, s, Func::sin, Expr()});
  detail::TermMap t;
  t.emplace(detail::Monomial{{atom, 1}}, Rational(1));
  *this = ExprAccess::make(std::move(t));
}

inline bool Expr::is_zero() const { return d_->terms.empty(); }

inline bool Expr::is_constant() const {
  return d_->terms.empty() || (d_->terms.size() == 1 && d_->terms.begin()->first.empty());
}

inline Rational Expr::constant_value() const {
  if (d_->terms.empty()) return 0;
  if (!is_constant()) throw EvaluationError("expression is not constant");
  return d_->terms.begin()->second;
}

inline std::size_t Expr::term_count() const { return d_->terms.size(); }

inline bool operator==(const Expr& a, const Expr& b) { return detail::compare_expr(*a.d_, *b.d_) == 0; }

inline std::strong_ordering operator<=>(const Expr& a, const Expr& b) {
  int c = detail::compare_expr(*a.d_, *b.d_);
  return c < 0 ? std::strong_ordering::less : (c > 0 ? std::strong_ordering::greater : std::strong_ordering::equal);
}

// ---------------------------------------------------------------------------
// Arithmetic

namespace detail {

inline Monomial multiply_monomials(const Monomial& a, const Monomial& b) {
  Monomial out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    int c = compare_atom(*a[i].atom, *b[j].atom);
    if (c < 0) {
      out.push_back(a[i++]);
    } else if (c > 0) {
      out.push_back(b[j++]);
    } else {
      int e = a[i].exp + b[j].exp;
      if (e != 0) out.push_back({a[i].atom, e});
      ++i;
      ++j;
    }
  }
  for (; i < a.size(); ++i) out.push_back(a[i]);
  for (; j < b.size(); ++j) out.push_back(b[j]);
  return out;
}

inline void accumulate(TermMap& acc, const Monomial& m, const Rational& c) {
  if (c == 0) return;
  auto [it, inserted] = acc.try_emplace(m, c);
  if (!inserted) {
    it->second += c;
    if (it->second == 0) acc.erase(it);
  }
}

inline Expr atom_power(Atom atom, int exp) {
  if (exp == 0) return Expr(1);
  TermMap t;
  t.emplace(Monomial{{std::move(atom), exp}}, Rational(1));
  return ExprAccess::make(std::move(t));
}

inline Expr monomial_expr(const Monomial& m, const Rational& c) {
  if (c == 0) return Expr();
  TermMap t;
  t.emplace(m, c);
  return ExprAccess::make(std::move(t));
}

}  // namespace detail

inline Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  detail::TermMap t = a.data().terms;
  for (const auto& [m, c] : b.data().terms) detail::accumulate(t, m, c);
  return ExprAccess::make(std::move(t));
}

inline Expr operator-(const Expr& a) {
  detail::TermMap t;
  for (const auto& [m, c] : a.data().terms) t.emplace(m, -c);
  return ExprAccess::make(std::move(t));
}

inline Expr operator-(const Expr& a, const Expr& b) {
  if (b.is_zero()) return a;
  detail::TermMap t = a.data().terms;
  for (const auto& [m, c] : b.data().terms) detail::accumulate(t, m, -c);
  return ExprAccess::make(std::move(t));
}

inline Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_zero() || b.is_zero()) return Expr();
  detail::TermMap t;
  for (const auto& [ma, ca] : a.data().terms)
    for (const auto& [mb, cb] : b.data().terms)
      detail::accumulate(t, detail::multiply_monomials(ma, mb), ca * cb);
  return ExprAccess::make(std::move(t));
}

inline Expr& operator+=(Expr& a, const Expr& b) { return a = a + b; }
inline Expr& operator-=(Expr& a, const Expr& b) { return a = a - b; }
inline Expr& operator*=(Expr& a, const Expr& b) { return a = a * b; }

inline Expr inverse(const Expr& e) {
  const auto& terms = e.data().terms;
  if (terms.empty()) throw EvaluationError("division by zero");
  if (terms.size() == 1) {
    const auto& [m, c] = *terms.begin();
    detail::Monomial inv;
    inv.reserve(m.size());
    for (const auto& f : m) inv.push_back({f.atom, -f.exp});
    return detail::monomial_expr(inv, Rational(1) / c);
  }
  // 1/(c*s) with s normalized to a leading coefficient of one.
  Rational lead = terms.begin()->second;
  Expr normalized = e * Expr(Rational(1) / lead);
  auto atom = std::make_shared<const detail::AtomData>(
      detail::AtomData{detail::AtomKind::sum, Symbol(), Func::sin, normalized});
  return detail::atom_power(atom, -1) * Expr(Rational(1) / lead);
}

inline Expr operator/(const Expr& a, const Expr& b) { return a * inverse(b); }

inline Expr pow(const Expr& base, int k) {
  if (k == 0) return Expr(1);
  if (k < 0) return pow(inverse(base), -k);
  const auto& terms = base.data().terms;
  if (terms.size() == 1) {
    const auto& [m, c] = *terms.begin();
    detail::Monomial out;
    for (const auto& f : m) out.push_back({f.atom, f.exp * k});
    Rational ck = 1;
    for (int i = 0; i < k; ++i) ck *= c;
    return detail::monomial_expr(out, ck);
  }
  Expr result(1);
  Expr sq = base;
  while (k > 0) {
    if (k & 1) result = result * sq;
    k >>= 1;
    if (k > 0) sq = sq * sq;
  }
  return result;
}

inline Expr apply(Func f, const Expr& arg) {
  if (arg.is_constant()) {
    Rational v = arg.constant_value();
    if (v == 0) {
      switch (f) {
        case Func::sin: return Expr();
        case Func::cos: return Expr(1);
        case Func::exp: return Expr(1);
        case Func::ln: throw EvaluationError("ln of non-positive constant");
      }
    }
    if (f == Func::ln && v == 1) return Expr();
    if (f == Func::ln && v < 0) throw EvaluationError("ln of non-positive constant");
  }
  auto atom = std::make_shared<const detail::AtomData>(detail::AtomData{detail::AtomKind::func, Symbol(), f, arg});
  return detail::atom_power(atom, 1);
}

inline Expr sin(const Expr& a) { return apply(Func::sin, a); }
inline Expr cos(const Expr& a) { return apply(Func::cos, a); }
inline Expr exp(const Expr& a) { return apply(Func::exp, a); }
inline Expr ln(const Expr& a) { return apply(Func::ln, a); }

// ---------------------------------------------------------------------------
// Structure queries

namespace detail {
inline void collect_symbols(const ExprData& d, std::set<Symbol>& out) {
  for (const auto& [m, c] : d.terms)
    for (const auto& f : m) {
      if (f.atom->kind == AtomKind::symbol)
        out.insert(f.atom->sym);
      else
        collect_symbols(f.atom->arg.data(), out);
    }
}

inline bool depends_on(const ExprData& d, Symbol s);

inline bool atom_depends_on(const AtomData& a, Symbol s) {
  if (a.kind == AtomKind::symbol) return a.sym == s;
  return depends_on(a.arg.data(), s);
}

inline bool depends_on(const ExprData& d, Symbol s) {
  for (const auto& [m, c] : d.terms)
    for (const auto& f : m)
      if (atom_depends_on(*f.atom, s)) return true;
  return false;
}

inline bool has_functions(const ExprData& d) {
  for (const auto& [m, c] : d.terms)
    for (const auto& f : m) {
      if (f.atom->kind == AtomKind::func) return true;
      if (f.atom->kind == AtomKind::sum && has_functions(f.atom->arg.data())) return true;
    }
  return false;
}

inline bool is_polynomial(const ExprData& d) {
  for (const auto& [m, c] : d.terms)
    for (const auto& f : m)
      if (f.atom->kind != AtomKind::symbol || f.exp < 0) return false;
  return true;
}
}  // namespace detail

inline std::set<Symbol> free_symbols(const Expr& e) {
  std::set<Symbol> out;
  detail::collect_symbols(e.data(), out);
  return out;
}

inline bool depends_on(const Expr& e, Symbol s) { return detail::depends_on(e.data(), s); }
inline bool has_functions(const Expr& e) { return detail::has_functions(e.data()); }
inline bool is_polynomial(const Expr& e) { return detail::is_polynomial(e.data()); }

/// Total degree of a polynomial in the given symbol set (other atoms count 0).
inline int degree_in(const Expr& e, const std::set<Symbol>& syms) {
  int best = 0;
  for (const auto& [m, c] : e.data().terms) {
    int d = 0;
    for (const auto& f : m)
      if (f.atom->kind == detail::AtomKind::symbol && syms.count(f.atom->sym)) d += f.exp;
      else if (f.atom->kind != detail::AtomKind::symbol) {
        std::set<Symbol> inner;
        detail::collect_symbols(f.atom->arg.data(), inner);
        for (auto s : inner)
          if (syms.count(s)) return -1;  // non-polynomial dependence
      }
    best = std::max(best, d);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Differentiation and substitution

inline Expr partial(const Expr& e, Symbol s);

namespace detail {
inline Expr atom_as_expr(const Atom& a) { return atom_power(a, 1); }

inline Expr atom_derivative(const AtomData& a, Symbol s) {
  switch (a.kind) {
    case AtomKind::symbol: return a.sym == s ? Expr(1) : Expr();
    case AtomKind::sum: return partial(a.arg, s);
    case AtomKind::func: {
      Expr inner = partial(a.arg, s);
      if (inner.is_zero()) return Expr();
      switch (a.fn) {
        case Func::sin: return apply(Func::cos, a.arg) * inner;
        case Func::cos: return -(apply(Func::sin, a.arg) * inner);
        case Func::exp: return apply(Func::exp, a.arg) * inner;
        case Func::ln: return inner * inverse(a.arg);
      }
    }
  }
  return Expr();
}
}  // namespace detail

/// Exact partial derivative with respect to a chart symbol.
inline Expr partial(const Expr& e, Symbol s) {
  Expr result;
  for (const auto& [m, c] : e.data().terms) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!detail::atom_depends_on(*m[i].atom, s)) continue;
      Expr da = detail::atom_derivative(*m[i].atom, s);
      if (da.is_zero()) continue;
      detail::Monomial rest = m;
      rest[i].exp -= 1;
      if (rest[i].exp == 0) rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(i));
      result += detail::monomial_expr(rest, c * m[i].exp) * da;
    }
  }
  return result;
}

/// Partial derivative by symbol name; the name must already be declared.
inline Expr partial(const Expr& e, std::string_view name) {
  auto s = Symbol::lookup(name);
  if (!s) throw SymbolError("unknown symbol '" + std::string(name) + "'");
  return partial(e, *s);
}

using Bindings = std::map<Symbol, Expr>;

inline Expr substitute(const Expr& e, const Bindings& b);

namespace detail {
inline bool touches(const ExprData& d, const Bindings& b) {
  for (const auto& [m, c] : d.terms)
    for (const auto& f : m) {
      if (f.atom->kind == AtomKind::symbol) {
        if (b.count(f.atom->sym)) return true;
      } else if (touches(f.atom->arg.data(), b)) {
        return true;
      }
    }
  return false;
}

inline Expr substitute_atom(const AtomData& a, const Bindings& b) {
  switch (a.kind) {
    case AtomKind::symbol: {
      auto it = b.find(a.sym);
      return it != b.end() ? it->second : Expr(a.sym);
    }
    case AtomKind::func: return apply(a.fn, substitute(a.arg, b));
    case AtomKind::sum: return substitute(a.arg, b);
  }
  return Expr();
}
}  // namespace detail

/// Simultaneous substitution; unbound symbols pass through.
inline Expr substitute(const Expr& e, const Bindings& b) {
  if (b.empty() || !detail::touches(e.data(), b)) return e;
  Expr result;
  for (const auto& [m, c] : e.data().terms) {
    Expr term(c);
    detail::Monomial untouched;
    for (const auto& f : m) {
      bool hit = f.atom->kind == detail::AtomKind::symbol ? b.count(f.atom->sym) > 0
                                                          : detail::touches(f.atom->arg.data(), b);
      if (hit)
        term = term * pow(detail::substitute_atom(*f.atom, b), f.exp);
      else
        untouched.push_back(f);
    }
    result += term * detail::monomial_expr(untouched, 1);
  }
  return result;
}

/// Rebuilds the canonical form from the expression's structure.
inline Expr canon(const Expr& e) {
  Expr result;
  for (const auto& [m, c] : e.data().terms) {
    Expr term(c);
    for (const auto& f : m) {
      Expr a;
      switch (f.atom->kind) {
        case detail::AtomKind::symbol: a = Expr(f.atom->sym); break;
        case detail::AtomKind::func: a = apply(f.atom->fn, canon(f.atom->arg)); break;
        case detail::AtomKind::sum: a = canon(f.atom->arg); break;
      }
      term = term * pow(a, f.exp);
    }
    result += term;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

using NumericPoint = std::map<Symbol, double>;
using RationalPoint = std::map<Symbol, Rational>;

namespace detail {
inline double apply_numeric(Func f, double v) {
  switch (f) {
    case Func::sin: return std::sin(v);
    case Func::cos: return std::cos(v);
    case Func::exp: return std::exp(v);
    case Func::ln:
      if (!(v > 0.0)) throw EvaluationError("domain error: ln of non-positive value");
      return std::log(v);
  }
  return 0.0;
}

template <class Lookup>
double eval_with(const ExprData& d, const Lookup& lookup) {
  double sum = 0.0;
  for (const auto& [m, c] : d.terms) {
    double term = c.get_d();
    for (const auto& f : m) {
      double base = 0.0;
      switch (f.atom->kind) {
        case AtomKind::symbol: base = lookup(f.atom->sym); break;
        case AtomKind::func: base = apply_numeric(f.atom->fn, eval_with(f.atom->arg.data(), lookup)); break;
        case AtomKind::sum: base = eval_with(f.atom->arg.data(), lookup); break;
      }
      if (f.exp < 0 && base == 0.0) throw EvaluationError("division by zero during evaluation");
      term *= f.exp == 1 ? base : std::pow(base, f.exp);
    }
    sum += term;
  }
  return sum;
}
}  // namespace detail

inline double eval(const Expr& e, const NumericPoint& point) {
  return detail::eval_with(e.data(), [&](Symbol s) {
    auto it = point.find(s);
    if (it == point.end()) throw EvaluationError("unbound symbol '" + s.name() + "'");
    return it->second;
  });
}

inline Rational eval_exact(const Expr& e, const RationalPoint& point) {
  Rational sum = 0;
  for (const auto& [m, c] : e.data().terms) {
    Rational term = c;
    for (const auto& f : m) {
      Rational base;
      switch (f.atom->kind) {
        case detail::AtomKind::symbol: {
          auto it = point.find(f.atom->sym);
          if (it == point.end()) throw EvaluationError("unbound symbol '" + f.atom->sym.name() + "'");
          base = it->second;
          break;
        }
        case detail::AtomKind::func:
          throw EvaluationError("exact evaluation of elementary function");
        case detail::AtomKind::sum: base = eval_exact(f.atom->arg, point); break;
      }
      if (f.exp < 0 && base == 0) throw EvaluationError("division by zero during evaluation");
      Rational p = 1;
      for (int i = 0; i < std::abs(f.exp); ++i) p *= base;
      term *= f.exp < 0 ? Rational(1) / p : p;
    }
    sum += term;
  }
  return sum;
}

/// Evaluates through the exact rational path and rounds once at the end.
inline double eval(const Expr& e, const RationalPoint& point) {
  if (has_functions(e)) {
    NumericPoint np;
    for (const auto& [s, v] : point) np[s] = v.get_d();
    return eval(e, np);
  }
  return eval_exact(e, point).get_d();
}

// ---------------------------------------------------------------------------
// Equivalence

namespace detail {
/// Numerator/denominator pair of a function-free expression.
inline std::pair<Expr, Expr> to_fraction(const Expr& e) {
  Expr num;
  Expr den(1);
  for (const auto& [m, c] : e.data().terms) {
    Expr tn(c);
    Expr td(1);
    for (const auto& f : m) {
      if (f.atom->kind == AtomKind::symbol) {
        if (f.exp > 0)
          tn = tn * atom_power(f.atom, f.exp);
        else
          td = td * atom_power(f.atom, -f.exp);
      } else {
        auto [sn, sd] = to_fraction(f.atom->arg);
        int k = std::abs(f.exp);
        if (f.exp > 0) {
          tn = tn * pow(sn, k);
          td = td * pow(sd, k);
        } else {
          tn = tn * pow(sd, k);
          td = td * pow(sn, k);
        }
      }
    }
    if (td == den) {
      num = num + tn;
    } else {
      num = num * td + tn * den;
      den = den * td;
    }
  }
  return {num, den};
}
}  // namespace detail

struct EquivalenceResult {
  bool equal = false;
  bool exact = true;    ///< decided symbolically (no sampling)
  int samples = 0;      ///< sampled points on the randomized path
};

inline EquivalenceResult check_equivalence(const Expr& a, const Expr& b, int samples = 64,
                                           std::uint64_t seed = 0x5eed5eedULL) {
  Expr diff = a - b;
  if (diff.is_zero()) return {true, true, 0};
  if (!has_functions(diff)) {
    auto [num, den] = detail::to_fraction(diff);
    return {num.is_zero(), true, 0};
  }
  auto syms = free_symbols(diff);
  std::mt19937_64 rng(seed);
  int accepted = 0;
  int attempts = 0;
  while (accepted < samples && attempts < samples * 8) {
    ++attempts;
    NumericPoint p;
    for (auto s : syms) {
      // Rational sample k/32 in (0, 2]; positive values keep ln arguments in range more often.
      auto k = static_cast<long>(rng() % 64) + 1;
      p[s] = static_cast<double>(k) / 32.0;
    }
    double va = 0.0, vb = 0.0;
    try {
      va = eval(a, p);
      vb = eval(b, p);
    } catch (const EvaluationError&) {
      continue;
    }
    if (!std::isfinite(va) || !std::isfinite(vb)) continue;
    if (std::abs(va - vb) > 1e-9 * (1.0 + std::abs(va) + std::abs(vb))) return {false, false, accepted + 1};
    ++accepted;
  }
  return {accepted == samples, false, accepted};
}

inline bool equivalent(const Expr& a, const Expr& b) { return check_equivalence(a, b).equal; }

// ---------------------------------------------------------------------------
// Printing

namespace detail {
inline std::string rational_string(const Rational& r) {
  Rational c = r;
  c.canonicalize();
  return c.get_str();
}
}  // namespace detail

inline std::string to_string(const Expr& e);

namespace detail {
inline std::string atom_string(const AtomData& a) {
  switch (a.kind) {
    case AtomKind::symbol: return a.sym.name();
    case AtomKind::func: return std::string(jetvar::to_string(a.fn)) + "(" + jetvar::to_string(a.arg) + ")";
    case AtomKind::sum: return "(" + jetvar::to_string(a.arg) + ")";
  }
  return "?";
}

inline std::string monomial_string(const Monomial& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) out += "*";
    out += atom_string(*m[i].atom);
    if (m[i].exp > 1)
      out += "^" + std::to_string(m[i].exp);
    else if (m[i].exp < 0)
      out += "^(" + std::to_string(m[i].exp) + ")";
  }
  return out;
}
}  // namespace detail

/// Deterministic linear notation, re-parseable by the model reader.
inline std::string to_string(const Expr& e) {
  const auto& terms = e.data().terms;
  if (terms.empty()) return "0";
  std::string out;
  bool first = true;
  for (const auto& [m, c] : terms) {
    bool neg = c < 0;
    Rational mag = neg ? Rational(-c) : c;
    if (first)
      out += neg ? "-" : "";
    else
      out += neg ? " - " : " + ";
    first = false;
    if (m.empty()) {
      out += detail::rational_string(mag);
    } else {
      if (mag != 1) out += detail::rational_string(mag) + "*";
      out += detail::monomial_string(m);
    }
  }
  return out;
}

inline std::ostream& operator<<(std::ostream& os, const Expr& e) { return os << to_string(e); }

// ---------------------------------------------------------------------------
// Compiled evaluation for grid sweeps

/// Flattened evaluator with symbols resolved to slot indices.
class CompiledExpr {
 public:
  CompiledExpr() = default;

  CompiledExpr(const Expr& e, const std::vector<Symbol>& slots) {
    std::map<Symbol, int> index;
    for (std::size_t i = 0; i < slots.size(); ++i) index[slots[i]] = static_cast<int>(i);
    root_ = build(e.data(), index);
  }

  double operator()(std::span<const double> values) const { return run(root_, values); }

 private:
  struct Node {
    enum class Op { constant, slot, sum, product, power, func } op = Op::constant;
    double value = 0.0;
    int slot = -1;
    int exponent = 1;
    Func fn = Func::sin;
    std::vector<Node> children;
  };

  static Node build(const detail::ExprData& d, const std::map<Symbol, int>& index) {
    Node sum;
    sum.op = Node::Op::sum;
    for (const auto& [m, c] : d.terms) {
      Node prod;
      prod.op = Node::Op::product;
      prod.value = c.get_d();
      for (const auto& f : m) {
        Node base;
        switch (f.atom->kind) {
          case detail::AtomKind::symbol: {
            auto it = index.find(f.atom->sym);
            if (it == index.end()) throw EvaluationError("unbound symbol '" + f.atom->sym.name() + "'");
            base.op = Node::Op::slot;
            base.slot = it->second;
            break;
          }
          case detail::AtomKind::func: {
            base.op = Node::Op::func;
            base.fn = f.atom->fn;
            base.children.push_back(build(f.atom->arg.data(), index));
            break;
          }
          case detail::AtomKind::sum: base = build(f.atom->arg.data(), index); break;
        }
        if (f.exp != 1) {
          Node p;
          p.op = Node::Op::power;
          p.exponent = f.exp;
          p.children.push_back(std::move(base));
          prod.children.push_back(std::move(p));
        } else {
          prod.children.push_back(std::move(base));
        }
      }
      sum.children.push_back(std::move(prod));
    }
    return sum;
  }

  static double run(const Node& n, std::span<const double> v) {
    switch (n.op) {
      case Node::Op::constant: return n.value;
      case Node::Op::slot: return v[static_cast<std::size_t>(n.slot)];
      case Node::Op::sum: {
        double s = 0.0;
        for (const auto& c : n.children) s += run(c, v);
        return s;
      }
      case Node::Op::product: {
        double p = n.value;
        for (const auto& c : n.children) p *= run(c, v);
        return p;
      }
      case Node::Op::power: {
        double b = run(n.children[0], v);
        if (n.exponent < 0 && b == 0.0) throw EvaluationError("division by zero during evaluation");
        if (n.exponent == 2) return b * b;
        return std::pow(b, n.exponent);
      }
      case Node::Op::func: return detail::apply_numeric(n.fn, run(n.children[0], v));
    }
    return 0.0;
  }

  Node root_;
};

}  // namespace jetvar
