#pragma once

// Unified, Lagrangian and Hamiltonian formalisms for second-order field
// theories on a local chart.
//
// Coordinates:
//   J^3(pi)   (x^i, u^a, u^a_i, u^a_I (|I|=2), u^a_J (|J|=3))
//   W_r       J^3(pi) coordinates plus multimomenta p^i_a and p^I_a (|I|=2,
//             one symbol per distinct I, so p^{ij} = p^{ji} holds by construction)
//   J^2 dag   J^1(pi) coordinates plus p^i_a, p^I_a and the extra momentum p
//   P         image of the restricted Legendre map, charted by J^1(pi), the p^i_a
//             and the pivot momenta of the highest-order momentum relations
//
// Local expressions:
//   Theta_1^s = p d^m x + p^i_a du^a ^ d^{m-1}x_i + (1/n(ij)) p^{ij}_a du^a_i ^ d^{m-1}x_j
//   H_hat     = p^i_a u^a_i + sum_{|I|=2} p^I_a u^a_I - L
//   Theta_r   = Theta_1^s with p = -H_hat
//   Theta_L   = Theta_r with the momenta replaced by the restricted Legendre map
//   Theta_h   = Theta_1^s pulled back along P -> J^2 dag, p = -H

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "jetvar/forms.hpp"
#include "jetvar/jetcalc.hpp"
#include "jetvar/symexpr.hpp"

namespace jetvar {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when two independent derivations of the same object disagree.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedLagrangian : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Second-order Lagrangian density L d^m x on a fibered chart.
struct FieldModel {
  std::string name;
  std::vector<std::string> base;
  std::vector<std::string> fields;
  Expr lagrangian;
  std::vector<double> box_lower;
  std::vector<double> box_upper;

  int m() const { return static_cast<int>(base.size()); }
  int n() const { return static_cast<int>(fields.size()); }

  JetChart chart(int order) const { return JetChart(base, fields, order); }

  /// Throws ModelError unless the Lagrangian lives on J^2(pi) and the sizes are desk scale.
  void validate() const {
    if (m() < 1 || m() > 3) throw ModelError("base dimension must be 1, 2 or 3");
    if (n() < 1 || n() > 3) throw ModelError("field count must be 1, 2 or 3");
    auto j2 = chart(2);
    for (auto s : free_symbols(lagrangian))
      if (!j2.contains(s)) throw ModelError("Lagrangian references '" + s.name() + "', which is not a J^2 coordinate");
    if (!box_lower.empty() && (box_lower.size() != base.size() || box_upper.size() != base.size()))
      throw ModelError("box dimension does not match base dimension");
  }

  friend bool operator==(const FieldModel&, const FieldModel&) = default;
};

// ---------------------------------------------------------------------------
// Charts

inline Symbol momentum_symbol(const std::string& field, const MultiIndex& I) {
  return Symbol::intern("p_" + jet_name(field, I), SymbolKind::momentum);
}

inline Symbol extended_momentum_symbol() { return Symbol::intern("p", SymbolKind::momentum); }

/// Momentum blocks of J^2 dag / J^2 ddag for a model.
class MomentumBlock {
 public:
  explicit MomentumBlock(const FieldModel& model) : m_(model.m()), fields_(model.fields) {
    for (int a = 0; a < model.n(); ++a)
      for (int i = 0; i < m_; ++i) first_.push_back(momentum(a, MultiIndex::unit(m_, i)));
    for (int a = 0; a < model.n(); ++a)
      for (const auto& I : multi_indices(m_, 2)) second_.push_back(momentum(a, I));
  }

  Symbol momentum(int field, const MultiIndex& I) const {
    return momentum_symbol(fields_.at(static_cast<std::size_t>(field)), I);
  }

  /// p^i_a, field-major.
  const std::vector<Symbol>& first_order() const { return first_; }
  /// p^I_a for distinct |I| = 2, field-major.
  const std::vector<Symbol>& second_order() const { return second_; }

  std::vector<Symbol> restricted() const {
    auto all = first_;
    all.insert(all.end(), second_.begin(), second_.end());
    return all;
  }

 private:
  int m_;
  std::vector<std::string> fields_;
  std::vector<Symbol> first_;
  std::vector<Symbol> second_;
};

/// W_r = J^3(pi) x_{J^1} J^2 ddag; `extended` adds the momentum p (chart of W).
inline FiberedChart unified_chart(const FieldModel& model, bool extended = false) {
  MomentumBlock mb(model);
  auto mom = mb.restricted();
  if (extended) mom.push_back(extended_momentum_symbol());
  return FiberedChart(model.chart(3), mom);
}

/// Sigma_a Sigma_i p^i_a du^a ^ d^{m-1}x_i + Sigma (1/n(ij)) p^{ij}_a du^a_i ^ d^{m-1}x_j + p_value d^m x,
/// with the p^{ij} looked up through `second` (identity unless restricted to P).
inline DiffForm liouville_form(const FieldModel& model, const Expr& p_value,
                               const Bindings& second_order_values = {}) {
  auto j1 = model.chart(1);
  MomentumBlock mb(model);
  const int m = model.m();
  const auto& base = j1.base();
  DiffForm theta = p_value * volume_form(base);
  for (int a = 0; a < model.n(); ++a) {
    DiffForm du = DiffForm::differential(j1.jet(a, MultiIndex::zero(m)));
    for (int i = 0; i < m; ++i) {
      Expr pi(mb.momentum(a, MultiIndex::unit(m, i)));
      theta = theta + pi * wedge(du, hyperplane_form(base, i));
    }
    for (int i = 0; i < m; ++i) {
      DiffForm dui = DiffForm::differential(j1.jet(a, MultiIndex::unit(m, i)));
      for (int j = 0; j < m; ++j) {
        auto I = MultiIndex::unit(m, i) + MultiIndex::unit(m, j);
        Symbol pij = mb.momentum(a, I);
        auto it = second_order_values.find(pij);
        Expr pv = it != second_order_values.end() ? it->second : Expr(pij);
        theta = theta + (pv * Expr(Rational(1) / weight(i, j, m))) * wedge(dui, hyperplane_form(base, j));
      }
    }
  }
  return theta;
}

/// Theta_1^s on J^2 dag.
inline DiffForm symmetrized_liouville_form(const FieldModel& model) {
  return liouville_form(model, Expr(extended_momentum_symbol()));
}

/// Omega_1^s = -d Theta_1^s.
inline DiffForm symmetrized_liouville_2form(const FieldModel& model) { return -d(symmetrized_liouville_form(model)); }

// ---------------------------------------------------------------------------
// Unified formalism

/// Coupling term p^i_a u^a_i + sum_{|I|=2} p^I_a u^a_I.
inline Expr coupling(const FieldModel& model) {
  auto j2 = model.chart(2);
  MomentumBlock mb(model);
  Expr c;
  for (int a = 0; a < model.n(); ++a)
    for (int r = 1; r <= 2; ++r)
      for (const auto& I : multi_indices(model.m(), r)) c += Expr(mb.momentum(a, I)) * Expr(j2.jet(a, I));
  return c;
}

inline Expr unified_hamiltonian(const FieldModel& model) { return coupling(model) - model.lagrangian; }

struct UnifiedCartan {
  FiberedChart chart;
  Expr hamiltonian;  ///< H_hat on W_r
  DiffForm theta;    ///< Theta_r
  DiffForm omega;    ///< Omega_r = -d Theta_r
};

inline UnifiedCartan build_unified_cartan(const FieldModel& model) {
  model.validate();
  UnifiedCartan u;
  u.chart = unified_chart(model);
  u.hamiltonian = unified_hamiltonian(model);
  u.theta = liouville_form(model, -u.hamiltonian);
  u.omega = -d(u.theta);
  return u;
}

// ---------------------------------------------------------------------------
// Legendre maps

struct LegendreMap {
  bool extended = false;
  std::vector<Symbol> order;  ///< momentum symbols in deterministic order
  Bindings entries;           ///< momentum -> expression on J^3(pi)

  const Expr& at(Symbol p) const { return entries.at(p); }
};

inline LegendreMap legendre_restricted(const FieldModel& model) {
  model.validate();
  auto j2 = model.chart(2);
  MomentumBlock mb(model);
  const int m = model.m();
  LegendreMap fl;
  for (int a = 0; a < model.n(); ++a)
    for (int i = 0; i < m; ++i) {
      auto ui = MultiIndex::unit(m, i);
      Expr v = partial(model.lagrangian, j2.jet(a, ui));
      for (int j = 0; j < m; ++j) {
        Expr lij = partial(model.lagrangian, j2.jet(a, ui + MultiIndex::unit(m, j)));
        v -= Expr(Rational(1) / weight(i, j, m)) * total_derivative(lij, j, j2);
      }
      fl.order.push_back(mb.momentum(a, ui));
      fl.entries[mb.momentum(a, ui)] = v;
    }
  for (int a = 0; a < model.n(); ++a)
    for (const auto& I : multi_indices(m, 2)) {
      fl.order.push_back(mb.momentum(a, I));
      fl.entries[mb.momentum(a, I)] = partial(model.lagrangian, j2.jet(a, I));
    }
  return fl;
}

inline LegendreMap legendre_extended(const FieldModel& model) {
  LegendreMap fl = legendre_restricted(model);
  fl.extended = true;
  Expr p = model.lagrangian - substitute(coupling(model), fl.entries);
  fl.order.push_back(extended_momentum_symbol());
  fl.entries[extended_momentum_symbol()] = p;
  return fl;
}

/// Theta_L: Theta_r with the momenta replaced through the restricted Legendre map.
inline DiffForm cartan_form_lagrangian(const FieldModel& model) {
  auto u = build_unified_cartan(model);
  return pullback(u.theta, legendre_restricted(model).entries);
}

// ---------------------------------------------------------------------------
// Constraints of the unified field equations

struct SolvedConstraint {
  Symbol momentum;
  Expr value;             ///< the constraint reads momentum = value
  Symbol direction;       ///< W_r direction whose field equation produced it
  bool secondary = false; ///< obtained after differentiating the primary constraints
};

struct ConstraintReport {
  std::vector<SolvedConstraint> constraints;
  std::size_t codimension = 0;
  std::size_t expected_codimension = 0;  ///< n (m + m(m+1)/2)
};

namespace detail {
/// Solves an equation affine in exactly one momentum with constant coefficient.
inline std::optional<std::pair<Symbol, Expr>> solve_for_momentum(const Expr& lhs) {
  std::vector<Symbol> moms;
  for (auto s : free_symbols(lhs))
    if (s.kind() == SymbolKind::momentum) moms.push_back(s);
  if (moms.size() != 1) return std::nullopt;
  Expr c = partial(lhs, moms[0]);
  if (!c.is_constant() || c.is_zero()) return std::nullopt;
  return std::make_pair(moms[0], Expr(moms[0]) - lhs * Expr(Rational(1) / c.constant_value()));
}
}  // namespace detail

/// Constraint submanifold W_L of the unified field equations.  Primary
/// constraints are the equations without derivative placeholders; secondary
/// ones appear when the primary constraints are differentiated along
/// holonomic sections and fed back into the remaining equations.
inline ConstraintReport constraint_submanifold(const FieldModel& model) {
  auto u = build_unified_cartan(model);
  auto sys = extract_field_equations(u.theta, u.chart);
  const auto& j3 = u.chart.jets();
  auto j2 = model.chart(2);
  ConstraintReport rep;
  rep.expected_codimension = static_cast<std::size_t>(model.n() * (model.m() + model.m() * (model.m() + 1) / 2));

  Bindings solved;
  for (const auto& eq : sys.tagged(EquationTag::constraint)) {
    auto s = detail::solve_for_momentum(eq.lhs);
    if (!s) throw ConsistencyError("primary constraint from direction " + eq.direction.name() + " is not solvable for a momentum");
    solved[s->first] = s->second;
    rep.constraints.push_back({s->first, s->second, eq.direction, false});
  }
  // D_j p^I -> D_j (value of p^I) along holonomic sections.
  Bindings derived;
  for (const auto& [p, v] : solved)
    for (int j = 0; j < model.m(); ++j) derived[derivative_placeholder(j3.base(j), p)] = total_derivative(v, j, j2);
  for (const auto& eq : sys.tagged(EquationTag::dynamical)) {
    Expr reduced = holonomic_substitution(substitute(eq.lhs, derived), j3);
    if (has_placeholders(reduced)) continue;
    reduced = substitute(reduced, solved);
    auto s = detail::solve_for_momentum(reduced);
    if (!s) throw ConsistencyError("secondary constraint from direction " + eq.direction.name() + " is not solvable for a momentum");
    rep.constraints.push_back({s->first, s->second, eq.direction, true});
  }
  rep.codimension = rep.constraints.size();

  auto fl = legendre_restricted(model);
  for (const auto& c : rep.constraints)
    if (!equivalent(c.value, fl.at(c.momentum)))
      throw ConsistencyError("constraint for " + c.momentum.name() + " disagrees with the restricted Legendre map: " +
                             to_string(c.value) + " vs " + to_string(fl.at(c.momentum)));
  if (rep.codimension != rep.expected_codimension)
    throw ConsistencyError("constraint count " + std::to_string(rep.codimension) + " differs from n(m + m(m+1)/2) = " +
                           std::to_string(rep.expected_codimension));
  return rep;
}

// ---------------------------------------------------------------------------
// Lagrangian side

/// Reduces equations along the graph of a momentum map on holonomic sections:
/// momenta -> map values, D_j(momentum) -> D_j(map value), D_j(u_I) -> u_{I+1_j}.
inline Expr reduce_on_graph(const Expr& lhs, const Bindings& momentum_map, const JetChart& jets) {
  Bindings b = momentum_map;
  auto top = jets.with_order(3);
  for (auto s : free_symbols(lhs)) {
    auto ph = decode_placeholder(s);
    if (!ph) continue;
    auto it = momentum_map.find(ph->second);
    if (it == momentum_map.end()) continue;
    auto j = jets.base_index(ph->first);
    if (!j) continue;
    b[s] = total_derivative(it->second, *j, top);
  }
  return holonomic_substitution(substitute(lhs, b), jets);
}

/// Euler-Lagrange equations: field equations of Theta_L along holonomic
/// sections, one per field (the u^a directions).
inline PDESystem euler_lagrange(const FieldModel& model) {
  auto theta = cartan_form_lagrangian(model);
  FiberedChart j3(model.chart(3), {});
  auto sys = extract_field_equations(theta, j3);
  PDESystem el;
  for (const auto& eq : sys.equations) {
    auto jc = j3.jets().decode(eq.direction);
    if (!jc || jc->index.order() != 0) continue;
    FieldEquation e;
    e.direction = eq.direction;
    e.lhs = holonomic_substitution(eq.lhs, j3.jets());
    e.tag = e.lhs.is_zero() ? EquationTag::identity : EquationTag::dynamical;
    el.equations.push_back(e);
  }
  return el;
}

struct EliminationCheck {
  std::vector<FieldEquation> reduced;  ///< each equation after eliminating the momenta
  bool matches = false;                ///< field directions give EL, all others vanish
};

/// Eliminates the momenta of a system along a Legendre-type map on holonomic
/// sections and compares with the Euler-Lagrange system.
inline EliminationCheck eliminate_momenta(const FieldModel& model, const PDESystem& sys, const Bindings& momentum_map) {
  auto el = euler_lagrange(model);
  auto j3 = model.chart(3);
  EliminationCheck out;
  out.matches = true;
  for (const auto& eq : sys.equations) {
    FieldEquation r{eq.direction, reduce_on_graph(eq.lhs, momentum_map, j3), EquationTag::identity};
    Expr expected;
    for (const auto& e : el.equations)
      if (e.direction == eq.direction) expected = e.lhs;
    r.tag = r.lhs.is_zero() ? EquationTag::identity : EquationTag::dynamical;
    if (!equivalent(r.lhs, expected)) out.matches = false;
    out.reduced.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regularity

enum class Regularity { hyperregular, singular };

inline const char* to_string(Regularity r) { return r == Regularity::hyperregular ? "hyperregular" : "singular"; }

struct RegularityReport {
  Regularity kind = Regularity::singular;
  int rank = 0;
  int size = 0;
  std::vector<std::vector<Expr>> hessian;  ///< d^2 L / du_I du_J over distinct |I| = |J| = 2
};

inline std::vector<Symbol> top_velocities(const FieldModel& model) {
  auto j2 = model.chart(2);
  std::vector<Symbol> v;
  for (int a = 0; a < model.n(); ++a)
    for (const auto& I : multi_indices(model.m(), 2)) v.push_back(j2.jet(a, I));
  return v;
}

namespace detail {
inline NumericPoint random_point(const std::vector<Symbol>& syms, std::mt19937_64& rng) {
  NumericPoint p;
  for (auto s : syms) p[s] = 0.1 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return p;
}

inline int numeric_rank(const std::vector<std::vector<Expr>>& mat, const NumericPoint& p) {
  const auto n = static_cast<Eigen::Index>(mat.size());
  if (n == 0) return 0;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = eval(mat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], p);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}
}  // namespace detail

inline RegularityReport regularity_check(const FieldModel& model, int samples = 5) {
  model.validate();
  auto v = top_velocities(model);
  RegularityReport rep;
  rep.size = static_cast<int>(v.size());
  rep.hessian.assign(v.size(), std::vector<Expr>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    Expr li = partial(model.lagrangian, v[i]);
    for (std::size_t j = 0; j < v.size(); ++j) rep.hessian[i][j] = partial(li, v[j]);
  }
  auto syms = model.chart(2).symbols();
  std::mt19937_64 rng(0x4e5e7ULL);
  for (int s = 0; s < samples; ++s) rep.rank = std::max(rep.rank, detail::numeric_rank(rep.hessian, detail::random_point(syms, rng)));
  rep.kind = rep.rank == rep.size ? Regularity::hyperregular : Regularity::singular;
  return rep;
}

// ---------------------------------------------------------------------------
// Hamiltonian side

struct HamiltonianSide {
  FiberedChart chart;                ///< chart of P
  std::vector<Symbol> pivots;        ///< second-order momenta kept as coordinates of P
  Bindings dependent_momenta;        ///< remaining second-order momenta as functions on P
  Bindings velocities;               ///< u_I (|I|=2) on P: the section gamma used for H
  Expr hamiltonian;                  ///< H on P
  DiffForm theta;                    ///< Theta_h
  PDESystem equations;               ///< Hamilton-de Donder-Weyl equations
  Bindings legendre;                 ///< FL_o: P coordinates -> expressions on J^3(pi)
  bool identity_holds = false;       ///< FL_o^* Theta_h == Theta_L
};

/// Solves the momentum-velocity relations p^I = dL/du_I for the highest
/// velocities.  Supported: relations affine in the highest velocities (any
/// hyperregular or singular Lagrangian quadratic in them).
inline HamiltonianSide hamiltonian_side(const FieldModel& model) {
  model.validate();
  MomentumBlock mb(model);
  auto v = top_velocities(model);
  const auto& q = mb.second_order();
  const std::size_t N = v.size();
  std::set<Symbol> vset(v.begin(), v.end());

  std::vector<std::vector<Expr>> A(N, std::vector<Expr>(N));
  std::vector<Expr> rhs(N);
  Bindings zero_v;
  for (auto s : v) zero_v[s] = Expr();
  for (std::size_t i = 0; i < N; ++i) {
    Expr ri = partial(model.lagrangian, v[i]);
    for (std::size_t j = 0; j < N; ++j) {
      A[i][j] = partial(ri, v[j]);
      for (auto s : free_symbols(A[i][j]))
        if (vset.count(s))
          throw UnsupportedLagrangian("unsupported Lagrangian class: momentum-velocity relations are not affine in the "
                                      "second-order derivatives");
    }
    rhs[i] = Expr(q[i]) - substitute(ri, zero_v);
  }

  // Gauss-Jordan on A v = rhs; pivots chosen symbolically non-zero and
  // numerically away from zero at a sample point of J^1.
  std::mt19937_64 rng(0x9a7e11ULL);
  auto sample = detail::random_point(model.chart(1).symbols(), rng);
  std::vector<int> pivot_row_of_col(N, -1);
  std::vector<bool> used(N, false);
  for (std::size_t c = 0; c < N; ++c) {
    int best = -1;
    double best_mag = 0.0;
    for (std::size_t r = 0; r < N; ++r) {
      if (used[r] || A[r][c].is_zero()) continue;
      double mag = std::abs(eval(A[r][c], sample));
      if (mag > 1e-12 && mag > best_mag) {
        best = static_cast<int>(r);
        best_mag = mag;
      }
    }
    if (best < 0) continue;
    auto pr = static_cast<std::size_t>(best);
    used[pr] = true;
    pivot_row_of_col[c] = best;
    Expr inv = inverse(A[pr][c]);
    for (std::size_t j = 0; j < N; ++j) A[pr][j] = A[pr][j] * inv;
    rhs[pr] = rhs[pr] * inv;
    for (std::size_t r = 0; r < N; ++r) {
      if (r == pr || A[r][c].is_zero()) continue;
      Expr f = A[r][c];
      for (std::size_t j = 0; j < N; ++j) A[r][j] = A[r][j] - f * A[pr][j];
      rhs[r] = rhs[r] - f * rhs[pr];
    }
  }

  HamiltonianSide hs;
  // Zero rows: P-defining relations, each solved for the row's own momentum.
  for (std::size_t r = 0; r < N; ++r) {
    if (used[r]) {
      hs.pivots.push_back(q[r]);
      continue;
    }
    Expr c = partial(rhs[r], q[r]);
    if (!c.is_constant() || c.is_zero()) throw ConsistencyError("dependent momentum relation lost its own momentum");
    hs.dependent_momenta[q[r]] = Expr(q[r]) - rhs[r] * Expr(Rational(1) / c.constant_value());
  }
  for (std::size_t c = 0; c < N; ++c) {
    if (pivot_row_of_col[c] < 0) {
      hs.velocities[v[c]] = Expr();  // free direction of the fibre of FL
      continue;
    }
    hs.velocities[v[c]] = substitute(rhs[static_cast<std::size_t>(pivot_row_of_col[c])], hs.dependent_momenta);
  }
  // Order pivots as in the momentum block.
  std::vector<Symbol> ordered;
  for (auto s : q)
    if (std::find(hs.pivots.begin(), hs.pivots.end(), s) != hs.pivots.end()) ordered.push_back(s);
  hs.pivots = ordered;

  std::vector<Symbol> coords = mb.first_order();
  coords.insert(coords.end(), hs.pivots.begin(), hs.pivots.end());
  hs.chart = FiberedChart(model.chart(1), coords);

  Bindings on_p = hs.velocities;
  for (const auto& [k, e] : hs.dependent_momenta) on_p[k] = e;
  hs.hamiltonian = substitute(unified_hamiltonian(model), on_p);
  hs.theta = liouville_form(model, -hs.hamiltonian, hs.dependent_momenta);
  hs.equations = extract_field_equations(hs.theta, hs.chart);

  auto fl = legendre_restricted(model);
  for (auto s : coords) hs.legendre[s] = fl.at(s);
  auto pulled = pullback(hs.theta, hs.legendre);
  auto theta_l = cartan_form_lagrangian(model);
  DiffForm diff = pulled - theta_l;
  hs.identity_holds = true;
  for (const auto& [k, c] : diff.terms())
    if (!equivalent(c, Expr())) hs.identity_holds = false;
  return hs;
}

}  // namespace jetvar
