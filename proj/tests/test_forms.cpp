#include <gtest/gtest.h>

#include "jetvar/forms.hpp"

using namespace jetvar;

namespace {

struct Coords {
  Symbol x = Symbol::intern("x", SymbolKind::base_coordinate);
  Symbol y = Symbol::intern("y", SymbolKind::base_coordinate);
  Symbol u = Symbol::intern("u", SymbolKind::jet_coordinate);
  DiffForm dx = DiffForm::differential(x), dy = DiffForm::differential(y), du = DiffForm::differential(u);
};

}  // namespace

TEST(DiffForm, WedgeIsAlternating) {
  Coords c;
  EXPECT_TRUE(wedge(c.dx, c.dx).is_zero());
  EXPECT_EQ(wedge(c.dx, c.dy), -wedge(c.dy, c.dx));
  EXPECT_EQ(wedge(c.dx, c.dy).degree(), 2);
}

TEST(DiffForm, AddTermSortsWithSign) {
  Coords c;
  DiffForm w;
  w.add_term({c.y, c.x}, Expr(3));
  EXPECT_EQ(w, Expr(-3) * wedge(c.dx, c.dy));
  DiffForm z;
  z.add_term({c.x, c.x}, Expr(1));
  EXPECT_TRUE(z.is_zero());
}

TEST(DiffForm, MixedDegreesRejected) {
  Coords c;
  EXPECT_THROW(c.dx + wedge(c.dx, c.dy), FormError);
}

TEST(ExteriorDerivative, OfFunctionsAndOneForms) {
  Coords c;
  Expr x(c.x), y(c.y), u(c.u);
  auto df = d(DiffForm::function(x * x * y));
  EXPECT_EQ(df, Expr(2) * x * y * c.dx + x * x * c.dy);
  auto w = (x * u) * c.dy;
  EXPECT_EQ(d(w), wedge(u * c.dx, c.dy) + wedge(x * c.du, c.dy));
  EXPECT_TRUE(d(d(w)).is_zero());
}

TEST(Contract, InteriorProduct) {
  Coords c;
  auto w = wedge(wedge(c.du, c.dx), c.dy);
  EXPECT_EQ(contract(c.u, w), wedge(c.dx, c.dy));
  EXPECT_EQ(contract(c.x, w), -wedge(c.du, c.dy));
  EXPECT_TRUE(contract(c.u, wedge(c.dx, c.dy)).is_zero());
}

TEST(VolumeForms, HyperplaneForms) {
  Coords c;
  std::vector<Symbol> base{c.x, c.y};
  EXPECT_EQ(volume_form(base), wedge(c.dx, c.dy));
  // dx ^ d^{m-1}x_0 = d^m x and dy ^ d^{m-1}x_1 = d^m x
  EXPECT_EQ(wedge(c.dx, hyperplane_form(base, 0)), volume_form(base));
  EXPECT_EQ(wedge(c.dy, hyperplane_form(base, 1)), volume_form(base));
  EXPECT_EQ(top_coefficient(Expr(5) * volume_form(base), base), Expr(5));
}

TEST(Pullback, SubstitutesAndDifferentiates) {
  Coords c;
  Expr x(c.x), y(c.y);
  std::vector<Symbol> base{c.x, c.y};
  auto w = wedge(c.du, c.dy);
  auto pb = pullback_by_section(w, base, {{c.u, x * x * y}});
  EXPECT_EQ(pb, Expr(2) * x * y * volume_form(base));
}

TEST(Pullback, SectionMustCoverForm) {
  Coords c;
  std::vector<Symbol> base{c.x, c.y};
  EXPECT_THROW(pullback_by_section(wedge(c.du, c.dy), base, {}), FormError);
  EXPECT_THROW(pullback_by_section(wedge(c.du, c.dy), base, {{c.u, Expr(c.u)}}), FormError);
}

TEST(Pullback, GenericUsesPlaceholders) {
  Coords c;
  std::vector<Symbol> base{c.x, c.y};
  auto pb = pullback_generic(wedge(c.du, c.dy), base);
  auto ph = derivative_placeholder(c.x, c.u);
  EXPECT_EQ(ph.name(), "D[x](u)");
  EXPECT_EQ(pb, Expr(ph) * volume_form(base));
  auto dec = decode_placeholder(ph);
  ASSERT_TRUE(dec);
  EXPECT_EQ(dec->first, c.x);
  EXPECT_EQ(dec->second, c.u);
}

TEST(FieldEquations, FirstOrderWaveLagrangian) {
  JetChart j({"x", "y"}, {"u"}, 1);
  auto u10 = j.jet(0, MultiIndex({1, 0})), u01 = j.jet(0, MultiIndex({0, 1}));
  std::vector<Symbol> base = j.base();
  auto vol = volume_form(base);
  Expr L = Expr(Rational(1, 2)) * (Expr(u10) * Expr(u10) - Expr(u01) * Expr(u01));
  auto du = DiffForm::differential(j.jet(0, MultiIndex({0, 0})));
  // Poincare-Cartan form of a first-order Lagrangian
  DiffForm theta = (L - Expr(u10) * partial(L, u10) - Expr(u01) * partial(L, u01)) * vol +
                   partial(L, u10) * wedge(du, hyperplane_form(base, 0)) +
                   partial(L, u01) * wedge(du, hyperplane_form(base, 1));
  auto sys = extract_field_equations(theta, FiberedChart(j, {}));
  ASSERT_EQ(sys.equations.size(), 3u);
  auto dyn = sys.tagged(EquationTag::dynamical);
  ASSERT_EQ(dyn.size(), 1u);
  auto hol = holonomic_substitution(dyn[0].lhs, j.with_order(2));
  Expr wave = Expr(j.with_order(2).jet(0, MultiIndex({2, 0}))) - Expr(j.with_order(2).jet(0, MultiIndex({0, 2})));
  EXPECT_TRUE(hol == wave || hol == -wave) << to_string(hol);
  EXPECT_EQ(sys.count(EquationTag::holonomy), 2u);
}

TEST(FieldEquations, WrongDegree) {
  JetChart j({"x", "y"}, {"u"}, 1);
  EXPECT_THROW(extract_field_equations(DiffForm::differential(j.base(0)), FiberedChart(j, {})), FormError);
}

TEST(FiberedChart, RejectsDuplicates) {
  JetChart j({"x"}, {"u"}, 1);
  EXPECT_THROW(FiberedChart(j, {j.jet(0, MultiIndex({1}))}), FormError);
}

TEST(Classify, Tags) {
  JetChart j({"x"}, {"u"}, 2);
  EXPECT_EQ(classify(Expr(), j), EquationTag::identity);
  EXPECT_EQ(classify(Expr(j.jet(0, MultiIndex({1}))), j), EquationTag::constraint);
  auto ph = derivative_placeholder(j.base(0), j.jet(0, MultiIndex({0})));
  EXPECT_EQ(classify(Expr(ph) - Expr(j.jet(0, MultiIndex({1}))), j), EquationTag::holonomy);
  EXPECT_EQ(classify(Expr(ph), j), EquationTag::dynamical);
}

TEST(DiffForm, ToString) {
  Coords c;
  EXPECT_EQ(to_string(DiffForm()), "0");
  EXPECT_EQ(to_string(wedge(c.dx, c.dy)), "1 dx^dy");
}
