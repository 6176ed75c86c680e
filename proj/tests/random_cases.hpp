#pragma once

// Seeded generators of random expressions, forms and maps for property tests.

#include <algorithm>
#include <random>
#include <vector>

#include "jetvar/forms.hpp"
#include "jetvar/symexpr.hpp"

namespace cases {

using namespace jetvar;

inline constexpr int kCases = 200;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Rational coefficient() {
    int num = uniform(-5, 5);
    if (num == 0) num = 1;
    return Rational(num, uniform(1, 4));
  }

  Expr monomial(const std::vector<Symbol>& syms, int max_deg) {
    Expr m(coefficient());
    int deg = uniform(0, max_deg);
    for (int k = 0; k < deg; ++k) m *= Expr(syms[static_cast<std::size_t>(uniform(0, static_cast<int>(syms.size()) - 1))]);
    return m;
  }

  Expr polynomial(const std::vector<Symbol>& syms, int terms = 3, int max_deg = 3) {
    Expr p;
    int n = uniform(1, terms);
    for (int k = 0; k < n; ++k) p += monomial(syms, max_deg);
    return p;
  }

  /// Polynomial, sometimes with sin/cos/exp of a linear argument or a
  /// reciprocal of a positive sum.
  Expr expression(const std::vector<Symbol>& syms) {
    Expr e = polynomial(syms);
    int kind = uniform(0, 4);
    Expr lin = monomial(syms, 1) + Expr(Rational(1, 2));
    if (kind == 1) e += sin(lin) * monomial(syms, 1);
    if (kind == 2) e += cos(lin) * exp(monomial(syms, 1));
    if (kind == 3) {
      Expr s = Expr(2);
      for (auto v : syms) s += Expr(v) * Expr(v);
      e += inverse(s) * monomial(syms, 1);
    }
    return e;
  }

  DiffForm form(const std::vector<Symbol>& syms, int degree) {
    DiffForm w;
    if (degree == 0) return DiffForm::function(expression(syms));
    int terms = uniform(1, 3);
    for (int t = 0; t < terms; ++t) {
      std::vector<Symbol> pick = syms;
      std::shuffle(pick.begin(), pick.end(), rng_);
      pick.resize(static_cast<std::size_t>(degree));
      DiffForm term = DiffForm::function(expression(syms));
      for (auto s : pick) term = wedge(term, DiffForm::differential(s));
      w = w + term;
    }
    return w;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline bool forms_equivalent(const DiffForm& a, const DiffForm& b) {
  DiffForm diff = a - b;
  for (const auto& [k, c] : diff.terms())
    if (!equivalent(c, Expr())) return false;
  return true;
}

}  // namespace cases
