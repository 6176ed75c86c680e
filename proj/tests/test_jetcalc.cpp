#include <gtest/gtest.h>

#include "jetvar/jetcalc.hpp"
#include "oracle.hpp"

using namespace jetvar;

TEST(MultiIndex, Basics) {
  MultiIndex I({2, 1});
  EXPECT_EQ(I.order(), 3);
  EXPECT_EQ(I.factorial(), 2);
  EXPECT_EQ(I.raised(1), MultiIndex({2, 2}));
  EXPECT_EQ(I.lowered(0), MultiIndex({1, 1}));
  EXPECT_EQ(I.first_nonzero(), 0);
  EXPECT_EQ(MultiIndex::unit(3, 2), MultiIndex({0, 0, 1}));
  EXPECT_THROW(MultiIndex({-1, 0}), JetError);
}

TEST(MultiIndex, Enumeration) {
  EXPECT_EQ(multi_indices(2, 2).size(), 3u);
  EXPECT_EQ(multi_indices(3, 2).size(), 6u);
  EXPECT_EQ(multi_indices(3, 3).size(), 10u);
  EXPECT_EQ(multi_indices(1, 4).size(), 1u);
}

TEST(MultiIndex, Weights) {
  EXPECT_EQ(weight(0, 0, 2), Rational(1));
  EXPECT_EQ(weight(0, 1, 2), Rational(2));
  EXPECT_EQ(weight(1, 0, 3), Rational(2));
}

TEST(JetChart, Naming) {
  JetChart c1({"x"}, {"u"}, 2);
  EXPECT_EQ(c1.jet(0, MultiIndex({2})).name(), "u[2]");
  EXPECT_EQ(c1.jet(0, MultiIndex({0})).name(), "u");
  JetChart c2({"x", "y"}, {"u", "v"}, 2);
  EXPECT_EQ(c2.jet(1, MultiIndex({1, 1})).name(), "v[1,1]");
  auto jc = c2.decode(c2.jet(1, MultiIndex({0, 2})));
  ASSERT_TRUE(jc);
  EXPECT_EQ(jc->field, 1);
  EXPECT_EQ(jc->index, MultiIndex({0, 2}));
  EXPECT_EQ(*c2.base_index(c2.base(1)), 1);
}

TEST(JetChart, SymbolCounts) {
  const std::vector<std::string> bases{"x", "y", "z"}, fields{"u", "v", "w"};
  for (int m = 1; m <= 3; ++m)
    for (int n = 1; n <= 3; ++n)
      for (int k = 0; k <= 4; ++k) {
        JetChart c({bases.begin(), bases.begin() + m}, {fields.begin(), fields.begin() + n}, k);
        EXPECT_EQ(static_cast<long>(c.symbols().size()), JetChart::expected_symbol_count(m, n, k));
      }
  EXPECT_EQ(JetChart::expected_symbol_count(2, 1, 3), 2 + 10);
}

TEST(JetChart, Rejects) {
  EXPECT_THROW(JetChart({}, {"u"}, 1), JetError);
  EXPECT_THROW(JetChart({"x"}, {"u"}, 5), JetError);
}

TEST(TotalDerivative, MatchesOracle) {
  JetChart c({"x", "t"}, {"u"}, 3);
  auto u10 = c.jet(0, MultiIndex({1, 0})), u01 = c.jet(0, MultiIndex({0, 1}));
  Expr e = Expr(u10) * Expr(u01) + pow(Expr(u10), 3) * Expr(c.base(0)) + sin(Expr(c.jet(0, MultiIndex({2, 0}))));
  for (int j = 0; j < 2; ++j)
    EXPECT_EQ(total_derivative(e, j, c), oracle::total_derivative(e, j, {"x", "t"}, {"u"}));
}

TEST(TotalDerivative, Commute) {
  JetChart c({"x", "y"}, {"u"}, 4);
  Expr e = pow(Expr(c.jet(0, MultiIndex({1, 1}))), 2) * Expr(c.base(1)) + Expr(c.jet(0, MultiIndex({0, 0})));
  EXPECT_EQ(total_derivative(total_derivative(e, 0, c), 1, c), total_derivative(total_derivative(e, 1, c), 0, c));
  EXPECT_EQ(total_derivative(e, MultiIndex({1, 1}), c), total_derivative(total_derivative(e, 0, c), 1, c));
}

TEST(TotalDerivative, OrderOverflow) {
  JetChart c({"x"}, {"u"}, 4);
  EXPECT_THROW(total_derivative(Expr(c.jet(0, MultiIndex({4}))), 0, c), JetError);
}

TEST(Prolong, PolynomialSection) {
  JetChart c({"x", "y"}, {"u"}, 3);
  Expr x(c.base(0)), y(c.base(1));
  SectionData phi{{x * x * y + pow(y, 3)}};
  auto j = prolong(phi, c, 3);
  EXPECT_EQ(j.at(c.jet(0, MultiIndex({1, 0}))), Expr(2) * x * y);
  EXPECT_EQ(j.at(c.jet(0, MultiIndex({0, 2}))), Expr(6) * y);
  EXPECT_EQ(j.at(c.jet(0, MultiIndex({2, 1}))), Expr(2));
  EXPECT_EQ(j.at(c.jet(0, MultiIndex({0, 3}))), Expr(6));
  EXPECT_EQ(j.size(), 10u);
}

TEST(Prolong, RejectsForeignSymbols) {
  JetChart c({"x"}, {"u"}, 2);
  auto q = Symbol::intern("q_not_base", SymbolKind::auxiliary);
  EXPECT_THROW(prolong(SectionData{{Expr(q)}}, c, 2), JetError);
  EXPECT_THROW(prolong(SectionData{{Expr(1), Expr(2)}}, c, 2), JetError);
}

TEST(Holonomy, SampledProlongationIsHolonomic) {
  JetChart c({"x"}, {"u"}, 3);
  Expr x(c.base(0));
  auto j = prolong(SectionData{{sin(Expr(2) * x)}}, c, 3);
  auto g = Grid::uniform({0.0}, {1.0}, 201);
  DiscreteSection s(g, c.jets());
  s.fill(c.base(), j);
  auto rep = is_holonomic(s, c);
  EXPECT_TRUE(rep.holonomic) << rep.max_residual;
  s.values(c.jet(0, MultiIndex({1})))[100] += 1e-3;
  auto bad = is_holonomic(s, c);
  EXPECT_FALSE(bad.holonomic);
  EXPECT_NE(bad.worst.find("u[1]"), std::string::npos);
}
