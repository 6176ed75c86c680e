#include <gtest/gtest.h>

#include "jetvar/formalisms.hpp"
#include "oracle.hpp"

using namespace jetvar;

namespace {

Symbol J(const char* name) { return Symbol::intern(name, SymbolKind::jet_coordinate); }
Symbol P(const char* name) { return Symbol::intern(name, SymbolKind::momentum); }
Expr E(const char* name) { return Expr(J(name)); }

FieldModel beam() {
  FieldModel m{"beam", {"x"}, {"u"}, {}, {0.0}, {1.0}};
  m.chart(4);
  m.lagrangian = Expr(Rational(1, 2)) * pow(E("u[2]"), 2);
  return m;
}

FieldModel plate() {
  FieldModel m{"plate", {"x", "y"}, {"u"}, {}, {0.0, 0.0}, {1.0, 1.0}};
  m.chart(4);
  m.lagrangian = Expr(Rational(1, 2)) * pow(E("u[2,0]") + E("u[0,2]"), 2);
  return m;
}

FieldModel fullquad() {
  FieldModel m{"fullquad", {"x", "y"}, {"u"}, {}, {0.0, 0.0}, {1.0, 1.0}};
  m.chart(4);
  m.lagrangian = Expr(Rational(1, 2)) * (pow(E("u[2,0]"), 2) + pow(E("u[1,1]"), 2) + pow(E("u[0,2]"), 2));
  return m;
}

FieldModel kdv() {
  FieldModel m{"kdv", {"x", "t"}, {"u"}, {}, {0.0, 0.0}, {1.0, 1.0}};
  m.chart(4);
  m.lagrangian = Expr(Rational(1, 2)) * E("u[1,0]") * E("u[0,1]") + pow(E("u[1,0]"), 3) -
                 Expr(Rational(1, 2)) * pow(E("u[2,0]"), 2);
  return m;
}

Expr dynamical_el(const FieldModel& m) {
  auto el = euler_lagrange(m);
  auto dyn = el.tagged(EquationTag::dynamical);
  EXPECT_EQ(dyn.size(), static_cast<std::size_t>(m.n()));
  return dyn.empty() ? Expr() : dyn[0].lhs;
}

bool same_up_to_sign(const Expr& a, const Expr& b) { return a == b || a == -b; }

}  // namespace

TEST(FieldModel, Validation) {
  auto m = beam();
  EXPECT_NO_THROW(m.validate());
  m.lagrangian = E("u[3]");
  EXPECT_THROW(m.validate(), ModelError);
  FieldModel big{"big", {"a", "b", "c", "d"}, {"u"}, {}, {}, {}};
  EXPECT_THROW(big.validate(), ModelError);
}

TEST(Charts, UnifiedChartSizes) {
  auto p = plate();
  auto c = unified_chart(p);
  EXPECT_EQ(c.extra().size(), 2u + 3u);
  EXPECT_EQ(unified_chart(p, true).extra().size(), 6u);
  EXPECT_EQ(c.jets().order(), 3);
}

TEST(Legendre, BeamFrozen) {
  auto fl = legendre_restricted(beam());
  EXPECT_EQ(fl.at(P("p_u[1]")), -E("u[3]"));
  EXPECT_EQ(fl.at(P("p_u[2]")), E("u[2]"));
  auto ext = legendre_extended(beam());
  EXPECT_EQ(ext.at(P("p")), E("u[1]") * E("u[3]") - Expr(Rational(1, 2)) * pow(E("u[2]"), 2));
}

TEST(Legendre, PlateFrozen) {
  auto fl = legendre_restricted(plate());
  Expr lap = E("u[2,0]") + E("u[0,2]");
  EXPECT_EQ(fl.at(P("p_u[2,0]")), lap);
  EXPECT_EQ(fl.at(P("p_u[0,2]")), lap);
  EXPECT_EQ(fl.at(P("p_u[1,1]")), Expr());
  EXPECT_EQ(fl.at(P("p_u[1,0]")), -(E("u[3,0]") + E("u[1,2]")));
  EXPECT_EQ(fl.at(P("p_u[0,1]")), -(E("u[2,1]") + E("u[0,3]")));
}

TEST(Legendre, FullQuadMixedWeight) {
  auto fl = legendre_restricted(fullquad());
  EXPECT_EQ(fl.at(P("p_u[1,1]")), E("u[1,1]"));
  EXPECT_EQ(fl.at(P("p_u[1,0]")), -(E("u[3,0]") + Expr(Rational(1, 2)) * E("u[1,2]")));
}

TEST(Constraints, CodimensionsAndValues) {
  auto rep = constraint_submanifold(beam());
  EXPECT_EQ(rep.codimension, 2u);
  EXPECT_EQ(rep.expected_codimension, 2u);
  auto fl = legendre_restricted(beam());
  for (const auto& c : rep.constraints) EXPECT_EQ(c.value, fl.at(c.momentum)) << c.momentum.name();
  EXPECT_EQ(constraint_submanifold(plate()).codimension, 5u);
}

TEST(Constraints, TwoFieldsAndThreeDimensions) {
  FieldModel two{"two", {"x", "y"}, {"u", "v"}, {}, {}, {}};
  two.chart(3);
  two.lagrangian = Expr(Rational(1, 2)) * (pow(E("u[2,0]"), 2) + pow(E("v[0,2]"), 2)) + E("u[1,1]") * E("v[1,1]");
  EXPECT_EQ(constraint_submanifold(two).codimension, 10u);
  FieldModel three{"three", {"x", "y", "z"}, {"u"}, {}, {}, {}};
  three.chart(3);
  three.lagrangian = Expr(Rational(1, 2)) * pow(E("u[2,0,0]") + E("u[0,2,0]") + E("u[0,0,2]"), 2);
  auto rep = constraint_submanifold(three);
  EXPECT_EQ(rep.codimension, 9u);
  EXPECT_EQ(rep.expected_codimension, 9u);
}

TEST(EulerLagrange, FrozenForms) {
  EXPECT_EQ(dynamical_el(beam()), E("u[4]"));
  auto pl = dynamical_el(plate());
  EXPECT_TRUE(same_up_to_sign(pl, E("u[4,0]") + Expr(2) * E("u[2,2]") + E("u[0,4]"))) << to_string(pl);
  auto kd = dynamical_el(kdv());
  Expr expected = E("u[1,1]") + Expr(6) * E("u[1,0]") * E("u[2,0]") + E("u[4,0]");
  EXPECT_TRUE(same_up_to_sign(kd, expected)) << to_string(kd);
}

TEST(EulerLagrange, MatchesClosedFormOracle) {
  for (const auto& m : {beam(), plate(), fullquad(), kdv()}) {
    Expr ref = oracle::variational_derivative(m.lagrangian, m.base, m.fields, m.fields[0]);
    Expr got = dynamical_el(m);
    EXPECT_TRUE(same_up_to_sign(got, ref)) << m.name << ": " << to_string(got) << " vs " << to_string(ref);
  }
}

TEST(EulerLagrange, EliminationFromUnifiedSystem) {
  for (const auto& m : {beam(), plate(), kdv()}) {
    auto u = build_unified_cartan(m);
    auto sys = extract_field_equations(u.theta, u.chart);
    auto check = eliminate_momenta(m, sys, legendre_restricted(m).entries);
    EXPECT_TRUE(check.matches) << m.name;
  }
}

TEST(Regularity, Classification) {
  auto b = regularity_check(beam());
  EXPECT_EQ(b.kind, Regularity::hyperregular);
  EXPECT_EQ(b.rank, 1);
  auto p = regularity_check(plate());
  EXPECT_EQ(p.kind, Regularity::singular);
  EXPECT_EQ(p.rank, 1);
  EXPECT_EQ(p.size, 3);
  auto f = regularity_check(fullquad());
  EXPECT_EQ(f.kind, Regularity::hyperregular);
  EXPECT_EQ(f.rank, 3);
  EXPECT_EQ(regularity_check(kdv()).kind, Regularity::singular);
}

TEST(Hamiltonian, BeamFrozen) {
  auto hs = hamiltonian_side(beam());
  EXPECT_TRUE(hs.identity_holds);
  Expr expected = Expr(P("p_u[1]")) * E("u[1]") + Expr(Rational(1, 2)) * pow(Expr(P("p_u[2]")), 2);
  EXPECT_EQ(hs.hamiltonian, expected);
  EXPECT_TRUE(hs.dependent_momenta.empty());
}

TEST(Hamiltonian, FullQuadIdentity) {
  auto hs = hamiltonian_side(fullquad());
  EXPECT_TRUE(hs.identity_holds);
  EXPECT_EQ(hs.pivots.size(), 3u);
  EXPECT_TRUE(pullback(hs.theta, hs.legendre) == cartan_form_lagrangian(fullquad()));
}

TEST(Hamiltonian, PlateSingular) {
  auto hs = hamiltonian_side(plate());
  EXPECT_TRUE(hs.identity_holds);
  ASSERT_EQ(hs.pivots.size(), 1u);
  EXPECT_EQ(hs.dependent_momenta.size(), 2u);
  auto pivot = Expr(hs.pivots[0]);
  for (const auto& [p, v] : hs.dependent_momenta) {
    if (p.name() == "p_u[1,1]") EXPECT_EQ(v, Expr());
    else EXPECT_EQ(v, pivot);
  }
}

TEST(Hamiltonian, NonAffineRelationsUnsupported) {
  FieldModel m{"quartic", {"x"}, {"u"}, {}, {}, {}};
  m.chart(2);
  m.lagrangian = pow(E("u[2]"), 4);
  EXPECT_THROW(hamiltonian_side(m), UnsupportedLagrangian);
}

TEST(Hamiltonian, EquationsReduceToEulerLagrange) {
  for (const auto& m : {beam(), plate()}) {
    auto hs = hamiltonian_side(m);
    auto el = dynamical_el(m);
    bool found = false;
    for (const auto& e : hs.equations.equations) {
      if (e.direction.name() != "u") continue;
      found = true;
      auto reduced = reduce_on_graph(e.lhs, hs.legendre, m.chart(3));
      EXPECT_TRUE(same_up_to_sign(reduced, el)) << m.name << ": " << to_string(reduced);
    }
    EXPECT_TRUE(found);
  }
}
