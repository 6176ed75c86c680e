#include <gtest/gtest.h>

#include <cmath>

#include "jetvar/symexpr.hpp"

using namespace jetvar;

namespace {

Symbol sym(const char* n) { return Symbol::intern(n, SymbolKind::auxiliary); }

}  // namespace

TEST(Symbol, InternReturnsSameHandle) {
  auto a = sym("a"), a2 = sym("a");
  EXPECT_EQ(a, a2);
  EXPECT_EQ(a.name(), "a");
  EXPECT_EQ(a.kind(), SymbolKind::auxiliary);
}

TEST(Symbol, KindClashIsAnError) {
  sym("clash");
  EXPECT_THROW(Symbol::intern("clash", SymbolKind::momentum), SymbolError);
}

TEST(Symbol, LookupUnknown) {
  EXPECT_FALSE(Symbol::lookup("never_interned_name").has_value());
  sym("looked");
  EXPECT_TRUE(Symbol::lookup("looked").has_value());
}

TEST(Expr, ArithmeticCanonicalizes) {
  Expr x(sym("x")), y(sym("y"));
  EXPECT_EQ(x + y, y + x);
  EXPECT_EQ(x * y, y * x);
  EXPECT_TRUE((x - x).is_zero());
  EXPECT_EQ((x + y) * (x - y), x * x - y * y);
  EXPECT_EQ(pow(x + y, 2), x * x + Expr(2) * x * y + y * y);
  EXPECT_EQ(Expr(Rational(1, 2)) + Expr(Rational(1, 2)), Expr(1));
}

TEST(Expr, ConstantsAndTermCount) {
  Expr x(sym("x"));
  EXPECT_TRUE(Expr(3).is_constant());
  EXPECT_EQ(Expr(3).constant_value(), Rational(3));
  EXPECT_FALSE(x.is_constant());
  EXPECT_EQ((x + Expr(1)).term_count(), 2u);
}

TEST(Expr, InverseOfMonomialAndSum) {
  Expr x(sym("x")), y(sym("y"));
  EXPECT_EQ(x * inverse(x), Expr(1));
  Expr s = x + y;
  EXPECT_EQ(inverse(s) * inverse(s), pow(s, -2));
  EXPECT_TRUE(equivalent(s * inverse(s), Expr(1)));
  EXPECT_EQ(Expr(4) / Expr(8), Expr(Rational(1, 2)));
  EXPECT_THROW(inverse(Expr()), EvaluationError);
}

TEST(Expr, PartialDerivatives) {
  auto xs = sym("x");
  Expr x(xs), y(sym("y"));
  EXPECT_EQ(partial(pow(x, 3) * y, xs), Expr(3) * x * x * y);
  EXPECT_EQ(partial(sin(x * y), xs), y * cos(x * y));
  EXPECT_EQ(partial(cos(x), xs), -sin(x));
  EXPECT_EQ(partial(exp(Expr(2) * x), xs), Expr(2) * exp(Expr(2) * x));
  EXPECT_EQ(partial(ln(x), xs), inverse(x));
  EXPECT_TRUE(partial(y, xs).is_zero());
}

TEST(Expr, QuotientRule) {
  auto xs = sym("x");
  Expr x(xs), y(sym("y"));
  Expr f = inverse(x + y);
  EXPECT_TRUE(equivalent(partial(f, xs), -inverse(pow(x + y, 2))));
}

TEST(Expr, Substitution) {
  auto xs = sym("x"), ys = sym("y");
  Expr x(xs), y(ys);
  Bindings b{{xs, y + Expr(1)}};
  EXPECT_EQ(substitute(x * x, b), y * y + Expr(2) * y + Expr(1));
  EXPECT_EQ(substitute(sin(x), b), sin(y + Expr(1)));
  EXPECT_EQ(substitute(y, b), y);
}

TEST(Expr, FreeSymbolsAndDependence) {
  auto xs = sym("x"), ys = sym("y");
  Expr e = sin(Expr(xs)) + Expr(3);
  auto fs = free_symbols(e);
  EXPECT_EQ(fs.size(), 1u);
  EXPECT_TRUE(depends_on(e, xs));
  EXPECT_FALSE(depends_on(e, ys));
  EXPECT_TRUE(has_functions(e));
  EXPECT_FALSE(is_polynomial(e));
  EXPECT_TRUE(is_polynomial(Expr(xs) * Expr(ys)));
}

TEST(Expr, DegreeIn) {
  auto xs = sym("x"), ys = sym("y");
  Expr e = pow(Expr(xs), 3) * Expr(ys) + Expr(ys);
  EXPECT_EQ(degree_in(e, {xs}), 3);
  EXPECT_EQ(degree_in(e, {xs, ys}), 4);
}

TEST(Expr, NumericAndExactEvaluation) {
  auto xs = sym("x"), ys = sym("y");
  Expr e = Expr(xs) * Expr(xs) + Expr(Rational(1, 3)) * Expr(ys);
  EXPECT_NEAR(eval(e, NumericPoint{{xs, 2.0}, {ys, 3.0}}), 5.0, 1e-15);
  EXPECT_EQ(eval_exact(e, RationalPoint{{xs, Rational(1, 2)}, {ys, Rational(3)}}), Rational(5, 4));
  EXPECT_NEAR(eval(sin(Expr(xs)), NumericPoint{{xs, 0.5}}), std::sin(0.5), 1e-15);
  EXPECT_THROW(eval(e, NumericPoint{{xs, 1.0}}), EvaluationError);
}

TEST(Expr, LogOfNonPositiveIsAnError) {
  auto xs = sym("x");
  EXPECT_THROW(eval(ln(Expr(xs)), NumericPoint{{xs, -1.0}}), EvaluationError);
}

TEST(Expr, EquivalenceBeyondStructure) {
  Expr x(sym("x"));
  Expr a = pow(sin(x), 2) + pow(cos(x), 2);
  EXPECT_NE(a, Expr(1));
  EXPECT_TRUE(equivalent(a, Expr(1)));
  EXPECT_FALSE(equivalent(x, x + Expr(Rational(1, 1000000))));
}

TEST(Expr, CanonIsIdempotent) {
  Expr x(sym("x")), y(sym("y"));
  Expr e = inverse(x + y) * (x + y) + sin(x) * x;
  EXPECT_EQ(canon(canon(e)), canon(e));
}

TEST(Expr, Printing) {
  Expr x(sym("x"));
  EXPECT_EQ(to_string(Expr()), "0");
  EXPECT_EQ(to_string(Expr(Rational(-3, 4))), "-3/4");
  EXPECT_EQ(to_string(x), "x");
  EXPECT_NE(to_string(x * x).find('^'), std::string::npos);
}

TEST(CompiledExpr, MatchesEval) {
  auto xs = sym("x"), ys = sym("y");
  Expr e = sin(Expr(xs)) * exp(Expr(ys)) + inverse(Expr(xs) + Expr(2)) - pow(Expr(ys), 3);
  CompiledExpr c(e, {xs, ys});
  double v[2] = {0.3, -0.7};
  EXPECT_NEAR(c(v), eval(e, NumericPoint{{xs, 0.3}, {ys, -0.7}}), 1e-14);
}

TEST(CompiledExpr, UnknownSymbolRejected) {
  auto xs = sym("x"), ys = sym("y");
  EXPECT_ANY_THROW(CompiledExpr(Expr(xs) * Expr(ys), {xs}));
}
