#pragma once

// Discrete action functionals over a box, compact-supported bump variations,
// Gateaux derivatives and criticality verdicts for the unified (LH),
// Lagrangian (L) and Hamiltonian (H) variational principles.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jetvar/formalisms.hpp"
#include "jetvar/forms.hpp"
#include "jetvar/grid.hpp"
#include "jetvar/jetcalc.hpp"
#include "jetvar/symexpr.hpp"

namespace jetvar {

class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Width of the boundary layer (in grid nodes) a variation must avoid: two
/// widths of the half-stencil of the derivative operator.
inline constexpr int kBoundaryMargin = 4;

// ---------------------------------------------------------------------------
// Quadrature oracle

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    w[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Tensor Gauss-Legendre integral of f over [lo, hi] with `panels` panels per axis.
template <class F>
double integrate_box(const std::vector<double>& lo, const std::vector<double>& hi, F&& f, int order = 24, int panels = 8) {
  auto [gx, gw] = gauss_legendre(order);
  const std::size_t m = lo.size();
  const std::size_t per_axis = static_cast<std::size_t>(order * panels);
  std::vector<std::vector<double>> nodes(m), weights(m);
  for (std::size_t a = 0; a < m; ++a) {
    double len = (hi[a] - lo[a]) / panels;
    for (int p = 0; p < panels; ++p)
      for (int k = 0; k < order; ++k) {
        nodes[a].push_back(lo[a] + len * (p + 0.5 * (gx[static_cast<std::size_t>(k)] + 1.0)));
        weights[a].push_back(0.5 * len * gw[static_cast<std::size_t>(k)]);
      }
  }
  std::size_t total = 1;
  for (std::size_t a = 0; a < m; ++a) total *= per_axis;
  std::vector<double> x(m);
  double sum = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rest = idx;
    double w = 1.0;
    for (std::size_t a = m; a-- > 0;) {
      std::size_t k = rest % per_axis;
      rest /= per_axis;
      x[a] = nodes[a][k];
      w *= weights[a][k];
    }
    sum += w * f(std::span<const double>(x));
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Variations

/// Bump profile (1 - r^2)^6 with r = |x - center| / radius, zero for r >= 1.
struct Variation {
  Symbol direction;
  std::vector<double> center;
  double radius = 0.0;
  double amplitude = 1.0;

  Expr profile(const std::vector<Symbol>& base) const {
    Expr r2;
    for (std::size_t i = 0; i < base.size(); ++i) {
      Expr t = (Expr(base[i]) - Expr(Rational(center[i]))) * Expr(Rational(1) / Rational(radius));
      r2 += t * t;
    }
    return Expr(Rational(amplitude)) * pow(Expr(1) - r2, 6);
  }

  /// D^I of the profile sampled at the grid nodes.  Evaluated in the local
  /// variables xi = (x - center)/radius, where the expanded polynomial has
  /// small coefficients.
  std::vector<double> sample(const Grid& grid, const MultiIndex& I) const {
    const int m = grid.dim();
    std::vector<Symbol> xi;
    Expr r2;
    for (int i = 0; i < m; ++i) {
      xi.push_back(Symbol::intern("#xi" + std::to_string(i), SymbolKind::auxiliary));
      r2 += Expr(xi.back()) * Expr(xi.back());
    }
    Expr e = pow(Expr(1) - r2, 6);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < I[i]; ++k) e = partial(e, xi[static_cast<std::size_t>(i)]);
    CompiledExpr f(e, xi);
    const double scale = amplitude * std::pow(radius, -I.order());
    std::vector<double> out(grid.size(), 0.0), x(static_cast<std::size_t>(m)), z(static_cast<std::size_t>(m));
    for (std::size_t node = 0; node < grid.size(); ++node) {
      for (int a = 0; a < m; ++a) {
        x[static_cast<std::size_t>(a)] = grid.coordinate(node, a);
        z[static_cast<std::size_t>(a)] = (x[static_cast<std::size_t>(a)] - center[static_cast<std::size_t>(a)]) / radius;
      }
      if (inside(x)) out[node] = scale * f(z);
    }
    return out;
  }

  double value(std::span<const double> x) const {
    double r2 = 0.0;
    for (std::size_t i = 0; i < center.size(); ++i) r2 += std::pow((x[i] - center[i]) / radius, 2);
    return r2 < 1.0 ? amplitude * std::pow(1.0 - r2, 6) : 0.0;
  }

  bool inside(std::span<const double> x) const {
    double r2 = 0.0;
    for (std::size_t i = 0; i < center.size(); ++i) r2 += (x[i] - center[i]) * (x[i] - center[i]);
    return r2 < radius * radius;
  }

  /// Throws unless the support stays clear of the boundary layer of `grid`.
  void check_support(const Grid& grid) const {
    if (static_cast<int>(center.size()) != grid.dim()) throw VerificationError("variation dimension does not match grid");
    if (!(radius > 0.0)) throw VerificationError("variation radius must be positive");
    for (int a = 0; a < grid.dim(); ++a) {
      double pad = kBoundaryMargin * grid.spacing(a);
      auto c = center[static_cast<std::size_t>(a)];
      if (c - radius < grid.lower(a) + pad || c + radius > grid.upper(a) - pad)
        throw VerificationError("variation support reaches the boundary layer along axis " + std::to_string(a) +
                                "; variations must have compact support inside the box");
    }
  }
};

/// Component-wise increment of a section: pairs (component symbol, samples).
struct Perturbation {
  std::vector<std::pair<Symbol, std::vector<double>>> parts;
};

/// Perturbation of a single component along the bump.
inline Perturbation vertical_perturbation(const Grid& grid, const Variation& v) {
  Perturbation p;
  p.parts.emplace_back(v.direction, v.sample(grid, MultiIndex::zero(grid.dim())));
  return p;
}

/// Prolonged perturbation j^k(b) of a field variation: every jet component
/// u^a_I present in `components` moves by D_I b.
inline Perturbation prolonged_perturbation(const Grid& grid, const JetChart& chart, const std::vector<Symbol>& components,
                                           const Variation& v) {
  auto top = chart.with_order(4);
  auto jc0 = top.decode(v.direction);
  if (!jc0 || jc0->index.order() != 0) throw VerificationError("prolonged variations must move a field coordinate");
  Perturbation p;
  for (auto c : components) {
    auto jc = top.decode(c);
    if (!jc || jc->field != jc0->field) continue;
    p.parts.emplace_back(c, v.sample(grid, jc->index));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Discrete action

/// Trapezoidal quadrature of psi^* Theta for a sampled section, with the
/// derivative placeholders filled by finite differences.
class ActionEvaluator {
 public:
  ActionEvaluator(const DiffForm& theta, const std::vector<Symbol>& base, const DiscreteSection& section)
      : section_(&section), base_(base) {
    const Grid& g = section.grid();
    if (g.dim() != static_cast<int>(base.size())) throw VerificationError("grid dimension does not match the base of the form");
    if (g.dim() > 2) throw VerificationError("quadrature runs support base dimension <= 2");
    if (section.has_nan()) throw VerificationError("section samples contain NaN or infinity");
    integrand_ = theta.is_zero() ? Expr() : top_coefficient(pullback_generic(theta, base), base);

    for (std::size_t a = 0; a < base.size(); ++a) {
      slots_.push_back(base[a]);
      std::vector<double> xs(g.size());
      for (std::size_t node = 0; node < g.size(); ++node) xs[node] = g.coordinate(node, static_cast<int>(a));
      coords_.push_back(std::move(xs));
    }
    for (std::size_t c = 0; c < section.components().size(); ++c) slots_.push_back(section.components()[c]);
    for (auto s : free_symbols(integrand_)) {
      if (auto ph = decode_placeholder(s)) {
        auto j = std::find(base.begin(), base.end(), ph->first);
        auto c = section.find(ph->second);
        if (j == base.end() || c < 0)
          throw VerificationError("section lacks component '" + ph->second.name() + "' required by the form");
        slots_.push_back(s);
        derivs_.push_back({static_cast<std::size_t>(c), static_cast<int>(j - base.begin()),
                           differentiate(g, section.values(static_cast<std::size_t>(c)), static_cast<int>(j - base.begin()))});
        continue;
      }
      if (std::find(base.begin(), base.end(), s) == base.end() && section.find(s) < 0)
        throw VerificationError("section lacks component '" + s.name() + "' required by the form");
    }
    compiled_ = CompiledExpr(integrand_, slots_);
    weights_.resize(g.size());
    for (std::size_t node = 0; node < g.size(); ++node) weights_[node] = g.trapezoid_weight(node);
  }

  const Expr& integrand() const { return integrand_; }
  const DiscreteSection& section() const { return *section_; }

  /// Per-slot increments of a perturbation (derivatives by the same stencil).
  struct Prepared {
    std::vector<std::vector<double>> delta;  // indexed like slots; empty when untouched
    bool empty = true;
  };

  Prepared prepare(const Perturbation& p) const {
    const Grid& g = section_->grid();
    const std::size_t m = base_.size();
    const std::size_t nc = section_->components().size();
    Prepared out;
    out.delta.resize(slots_.size());
    for (const auto& [sym, values] : p.parts) {
      auto c = section_->find(sym);
      if (c < 0) throw VerificationError("variation direction '" + sym.name() + "' is not a component of the section");
      if (values.size() != g.size()) throw VerificationError("variation samples do not match the grid");
      out.delta[m + static_cast<std::size_t>(c)] = values;
      for (std::size_t k = 0; k < derivs_.size(); ++k)
        if (derivs_[k].component == static_cast<std::size_t>(c))
          out.delta[m + nc + k] = differentiate(g, values, derivs_[k].axis);
      out.empty = false;
    }
    return out;
  }

  double value() const { return evaluate(nullptr, 0.0); }
  double value(const Prepared& p, double t) const { return evaluate(&p, t); }

  /// Sum of |w f| over nodes: the scale of floating-point cancellation.
  double magnitude() const {
    double s = 0.0;
    for_each_node(nullptr, 0.0, [&](std::size_t node, double f) { s += weights_[node] * std::abs(f); });
    return s;
  }

  /// Round-off level of a Gateaux quotient with step t: cancellation in the
  /// quadrature sum plus finite differences of samples of size `norm`.
  double roundoff_floor(double t) const {
    const Grid& g = section_->grid();
    double vol = 1.0, h = g.max_spacing();
    for (int a = 0; a < g.dim(); ++a) vol *= g.upper(a) - g.lower(a);
    double eps = std::numeric_limits<double>::epsilon();
    return 1e3 * eps * (magnitude() / t + std::max(1.0, section_->max_abs()) * vol / h);
  }

  /// Integrand samples psi^* Theta / d^m x at the nodes.
  std::vector<double> density() const {
    std::vector<double> out(section_->grid().size());
    for_each_node(nullptr, 0.0, [&](std::size_t node, double f) { out[node] = f; });
    return out;
  }

 private:
  struct DerivSlot {
    std::size_t component;
    int axis;
    std::vector<double> values;
  };

  template <class Fn>
  void for_each_node(const Prepared* p, double t, Fn&& fn) const {
    const Grid& g = section_->grid();
    const std::size_t m = base_.size();
    const std::size_t nc = section_->components().size();
    std::vector<double> x(slots_.size());
    for (std::size_t node = 0; node < g.size(); ++node) {
      for (std::size_t a = 0; a < m; ++a) x[a] = coords_[a][node];
      for (std::size_t c = 0; c < nc; ++c) x[m + c] = section_->values(c)[node];
      for (std::size_t k = 0; k < derivs_.size(); ++k) x[m + nc + k] = derivs_[k].values[node];
      if (p)
        for (std::size_t s = m; s < slots_.size(); ++s)
          if (!p->delta[s].empty()) x[s] += t * p->delta[s][node];
      fn(node, compiled_(x));
    }
  }

  double evaluate(const Prepared* p, double t) const {
    double s = 0.0;
    for_each_node(p, t, [&](std::size_t node, double f) { s += weights_[node] * f; });
    return s;
  }

  const DiscreteSection* section_;
  std::vector<Symbol> base_;
  Expr integrand_;
  std::vector<Symbol> slots_;
  std::vector<std::vector<double>> coords_;
  std::vector<DerivSlot> derivs_;
  std::vector<double> weights_;
  CompiledExpr compiled_;
};

/// Trapezoidal approximation of the integral of psi^* Theta over the grid box.
inline double action(const DiffForm& theta, const std::vector<Symbol>& base, const DiscreteSection& section) {
  return ActionEvaluator(theta, base, section).value();
}

inline constexpr double kGateauxStep = 1e-5;

/// d/dt action(psi + t v) at t = 0: central differences at t and t/2 combined
/// by one Richardson step.
inline double gateaux(const ActionEvaluator& ev, const ActionEvaluator::Prepared& p, double t = kGateauxStep) {
  if (p.empty) return 0.0;
  auto central = [&](double s) { return (ev.value(p, s) - ev.value(p, -s)) / (2.0 * s); };
  double g1 = central(t);
  double g2 = central(0.5 * t);
  return (4.0 * g2 - g1) / 3.0;
}

inline double gateaux(const DiffForm& theta, const std::vector<Symbol>& base, const DiscreteSection& section,
                      const Variation& v) {
  v.check_support(section.grid());
  ActionEvaluator ev(theta, base, section);
  return gateaux(ev, ev.prepare(vertical_perturbation(section.grid(), v)));
}

// ---------------------------------------------------------------------------
// Functionals and criticality

enum class FunctionalKind { unified, lagrangian, hamiltonian };

inline const char* functional_name(FunctionalKind k) {
  switch (k) {
    case FunctionalKind::unified: return "LH";
    case FunctionalKind::lagrangian: return "L";
    case FunctionalKind::hamiltonian: return "H";
  }
  return "?";
}

struct Functional {
  FunctionalKind kind = FunctionalKind::unified;
  DiffForm theta;
  FiberedChart chart;
  bool requires_holonomy = false;
  bool prolonged = false;  ///< variations are prolongations of field variations

  std::vector<Symbol> directions() const {
    if (!prolonged) return chart.fiber();
    std::vector<Symbol> d;
    for (int a = 0; a < chart.jets().n(); ++a) d.push_back(chart.jets().jet(a, MultiIndex::zero(chart.jets().m())));
    return d;
  }
};

inline Functional unified_functional(const FieldModel& model) {
  auto u = build_unified_cartan(model);
  return {FunctionalKind::unified, u.theta, u.chart, true, false};
}

inline Functional lagrangian_functional(const FieldModel& model) {
  return {FunctionalKind::lagrangian, cartan_form_lagrangian(model), FiberedChart(model.chart(3), {}), true, true};
}

inline Functional hamiltonian_functional(const HamiltonianSide& hs) {
  return {FunctionalKind::hamiltonian, hs.theta, hs.chart, false, false};
}

inline Perturbation perturbation_for(const Functional& f, const DiscreteSection& s, const Variation& v) {
  if (f.prolonged) return prolonged_perturbation(s.grid(), f.chart.jets(), s.components(), v);
  return vertical_perturbation(s.grid(), v);
}

struct CriticalityOptions {
  int variations = 32;
  std::optional<double> tolerance;  ///< fixed tolerance instead of the calibrated one
  std::uint64_t seed = 20240607;
  double holonomy_tolerance = 1e-6;
  double safety = 2.0;
};

struct VariationResult {
  Variation variation;
  double gateaux_h = 0.0;
  double gateaux_2h = 0.0;
};

struct CriticalityReport {
  FunctionalKind kind = FunctionalKind::unified;
  std::vector<VariationResult> rows;
  double max_gateaux = 0.0;
  double tolerance = 0.0;
  double calibration_constant = 0.0;  ///< C in tol = C h^2 |psi|
  bool calibrated = true;
  HolonomyReport holonomy;
  bool critical = false;
};

inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Random bumps cycling through `directions`, all supported away from the
/// boundary layer of the coarsest grid used (spacing h_c).
inline std::vector<Variation> random_variations(const Grid& grid, double coarse_factor, const std::vector<Symbol>& directions,
                                                int count, std::uint64_t seed) {
  if (directions.empty()) return {};
  std::mt19937_64 rng(seed);
  std::vector<Variation> out;
  double max_r = std::numeric_limits<double>::infinity();
  for (int a = 0; a < grid.dim(); ++a) {
    double len = grid.upper(a) - grid.lower(a);
    double pad = kBoundaryMargin * grid.spacing(a) * coarse_factor;
    max_r = std::min({max_r, 0.3 * len, 0.95 * (0.5 * len - pad)});
  }
  if (!(max_r > 0.0)) throw VerificationError("grid too coarse to place interior variations");
  for (int k = 0; k < count; ++k) {
    Variation v;
    v.direction = directions[static_cast<std::size_t>(k) % directions.size()];
    v.radius = max_r * (0.5 + 0.5 * unit_draw(rng));
    for (int a = 0; a < grid.dim(); ++a) {
      double pad = kBoundaryMargin * grid.spacing(a) * coarse_factor + v.radius;
      double lo = grid.lower(a) + pad, hi = grid.upper(a) - pad;
      v.center.push_back(lo + (hi - lo) * unit_draw(rng));
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Samples every variation on the section, then calibrates the tolerance by
/// repeating the test on the coarsened grid: tol = safety * max|G_h - G_2h| / 3
/// plus a round-off floor.  The section is critical iff max|G_h| < tol.
inline CriticalityReport criticality_test(const Functional& f, const DiscreteSection& psi, const CriticalityOptions& opt = {}) {
  CriticalityReport rep;
  rep.kind = f.kind;
  const Grid& g = psi.grid();
  if (f.requires_holonomy) {
    rep.holonomy = is_holonomic(psi, f.chart.jets(), opt.holonomy_tolerance * std::max(1.0, psi.max_abs()));
    if (!rep.holonomy.holonomic)
      throw VerificationError(std::string("functional ") + functional_name(f.kind) +
                              " is defined on holonomic sections; residual " + std::to_string(rep.holonomy.max_residual) +
                              " at " + rep.holonomy.worst);
  } else {
    rep.holonomy.holonomic = true;
  }
  bool can_coarsen = true;
  for (int a = 0; a < g.dim(); ++a) can_coarsen = can_coarsen && g.points(a) % 2 == 1 && (g.points(a) + 1) / 2 >= 5;
  rep.calibrated = can_coarsen && !opt.tolerance;

  auto vars = random_variations(g, can_coarsen ? 2.0 : 1.0, f.directions(), opt.variations, opt.seed);
  ActionEvaluator ev(f.theta, f.chart.base(), psi);
  std::optional<DiscreteSection> coarse;
  std::optional<ActionEvaluator> cev;
  if (rep.calibrated) {
    coarse = psi.coarsened();
    cev.emplace(f.theta, f.chart.base(), *coarse);
  }
  double spread = 0.0;
  for (const auto& v : vars) {
    v.check_support(g);
    VariationResult row{v, gateaux(ev, ev.prepare(perturbation_for(f, psi, v))), 0.0};
    if (cev) {
      v.check_support(coarse->grid());
      row.gateaux_2h = gateaux(*cev, cev->prepare(perturbation_for(f, *coarse, v)));
      spread = std::max(spread, std::abs(row.gateaux_h - row.gateaux_2h));
    }
    rep.max_gateaux = std::max(rep.max_gateaux, std::abs(row.gateaux_h));
    rep.rows.push_back(std::move(row));
  }
  double h = g.max_spacing();
  double norm = std::max(1.0, psi.max_abs());
  if (opt.tolerance) {
    rep.tolerance = *opt.tolerance;
  } else {
    rep.tolerance = opt.safety * spread / 3.0 + ev.roundoff_floor(kGateauxStep);
  }
  rep.calibration_constant = rep.tolerance / (h * h * norm);
  rep.critical = rep.max_gateaux < rep.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Sections

/// Samples the closed forms of the chart's fiber coordinates.
inline DiscreteSection sample_section(const Grid& grid, const FiberedChart& chart, const Bindings& closed) {
  DiscreteSection s(grid, chart.fiber());
  s.fill(chart.base(), closed);
  return s;
}

/// Closed form of j^3(phi) on the J^3 chart.
inline Bindings jet_section(const FieldModel& model, const SectionData& phi, int order = 3) {
  return prolong(phi, model.chart(0), order);
}

/// Closed form of psi = j_L o j^3 phi on W_r (Legendre momenta of the prolongation).
inline Bindings unified_section(const FieldModel& model, const SectionData& phi) {
  auto jets = jet_section(model, phi);
  auto fl = legendre_restricted(model);
  Bindings out = jets;
  for (auto p : fl.order) out[p] = substitute(fl.at(p), jets);
  return out;
}

/// Evaluates expressions over a source section node by node.
inline std::vector<double> evaluate_on(const DiscreteSection& src, const std::vector<Symbol>& base, const Expr& e) {
  std::vector<Symbol> slots = base;
  for (auto c : src.components()) slots.push_back(c);
  CompiledExpr f(e, slots);
  const Grid& g = src.grid();
  std::vector<double> x(slots.size()), out(g.size());
  for (std::size_t node = 0; node < g.size(); ++node) {
    for (int a = 0; a < g.dim(); ++a) x[static_cast<std::size_t>(a)] = g.coordinate(node, a);
    for (std::size_t c = 0; c < src.components().size(); ++c) x[base.size() + c] = src.values(c)[node];
    out[node] = f(x);
  }
  return out;
}

struct MappedSections {
  DiscreteSection phi;       ///< pi^3 o rho_1 o psi, kept with its third prolongation
  HolonomyReport holonomy;
  std::optional<DiscreteSection> psi_h;      ///< FL_o o rho_1 o psi on P
  std::optional<DiscreteSection> psi_back;   ///< j_L o gamma o psi_h on W_r
  double gamma_residual = 0.0;   ///< max |FL_o(gamma(psi_h)) - psi_h|
  double round_trip = 0.0;       ///< max |rho_1(j_L(phi)) - phi|
};

/// Transfers a sampled section of W_r to J^3, P and back through the Legendre maps.
inline MappedSections map_sections(const FieldModel& model, const DiscreteSection& psi, const HamiltonianSide* hs,
                                   double holonomy_tolerance = 1e-6) {
  auto j3 = model.chart(3);
  const auto& base = j3.base();
  const Grid& g = psi.grid();
  MappedSections out;
  out.phi = DiscreteSection(g, j3.jets());
  for (auto c : j3.jets()) {
    auto src = psi.values(c);
    std::copy(src.begin(), src.end(), out.phi.values(c).begin());
  }
  out.holonomy = is_holonomic(out.phi, j3, holonomy_tolerance * std::max(1.0, out.phi.max_abs()));
  if (!out.holonomy.holonomic)
    throw VerificationError("section of W_r is not holonomic; residual " + std::to_string(out.holonomy.max_residual) + " at " +
                            out.holonomy.worst);

  auto fl = legendre_restricted(model);
  // phi -> j_L(phi) -> projection.
  DiscreteSection rebuilt(g, psi.components());
  for (auto c : j3.jets()) {
    auto src = out.phi.values(c);
    std::copy(src.begin(), src.end(), rebuilt.values(c).begin());
  }
  for (auto p : fl.order) {
    auto v = evaluate_on(out.phi, base, fl.at(p));
    std::copy(v.begin(), v.end(), rebuilt.values(p).begin());
  }
  for (auto c : j3.jets())
    for (std::size_t n = 0; n < g.size(); ++n)
      out.round_trip = std::max(out.round_trip, std::abs(rebuilt.values(c)[n] - out.phi.values(c)[n]));

  if (!hs) return out;
  DiscreteSection ph(g, hs->chart.fiber());
  for (auto c : hs->chart.fiber()) {
    std::vector<double> v;
    if (hs->legendre.count(c))
      v = evaluate_on(out.phi, base, hs->legendre.at(c));
    else
      v.assign(out.phi.values(c).begin(), out.phi.values(c).end());
    std::copy(v.begin(), v.end(), ph.values(c).begin());
  }

  // gamma: J^1 from P, second-order jets from the solved velocities, third-order
  // jets by a least-norm solve of p^i = FL p^i (affine in them).
  auto j2 = model.chart(2);
  DiscreteSection back(g, psi.components());
  auto j1 = model.chart(1);
  for (auto c : j1.jets()) {
    auto src = ph.values(c);
    std::copy(src.begin(), src.end(), back.values(c).begin());
  }
  for (const auto& [vel, e] : hs->velocities) {
    auto v = evaluate_on(ph, base, e);
    std::copy(v.begin(), v.end(), back.values(vel).begin());
  }
  std::vector<Symbol> third;
  for (int a = 0; a < model.n(); ++a)
    for (const auto& J : multi_indices(model.m(), 3)) third.push_back(j3.jet(a, J));
  MomentumBlock mb(model);
  const auto& first = mb.first_order();
  Bindings zero3;
  for (auto s : third) zero3[s] = Expr();
  std::vector<Symbol> j2slots = base;
  for (auto s : j2.jets()) j2slots.push_back(s);
  std::vector<std::vector<CompiledExpr>> coeff(first.size());
  std::vector<CompiledExpr> offset;
  for (std::size_t r = 0; r < first.size(); ++r) {
    for (auto s : third) coeff[r].emplace_back(partial(fl.at(first[r]), s), j2slots);
    offset.emplace_back(substitute(fl.at(first[r]), zero3), j2slots);
  }
  Eigen::MatrixXd M(static_cast<Eigen::Index>(first.size()), static_cast<Eigen::Index>(third.size()));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(first.size()));
  std::vector<double> x(j2slots.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (int a = 0; a < g.dim(); ++a) x[static_cast<std::size_t>(a)] = g.coordinate(n, a);
    for (std::size_t k = 0; k < j2.jets().size(); ++k) x[base.size() + k] = back.values(j2.jets()[k])[n];
    for (std::size_t r = 0; r < first.size(); ++r) {
      for (std::size_t c = 0; c < third.size(); ++c) M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = coeff[r][c](x);
      rhs(static_cast<Eigen::Index>(r)) = ph.values(first[r])[n] - offset[r](x);
    }
    Eigen::VectorXd sol = M.completeOrthogonalDecomposition().solve(rhs);
    for (std::size_t c = 0; c < third.size(); ++c) back.values(third[c])[n] = sol(static_cast<Eigen::Index>(c));
  }
  std::vector<Symbol> jet_part = j3.jets();
  DiscreteSection back_jets(g, jet_part);
  for (auto c : jet_part) {
    auto src = back.values(c);
    std::copy(src.begin(), src.end(), back_jets.values(c).begin());
  }
  for (auto p : fl.order) {
    auto v = evaluate_on(back_jets, base, fl.at(p));
    std::copy(v.begin(), v.end(), back.values(p).begin());
  }
  for (auto c : hs->chart.extra()) {
    auto v = evaluate_on(back_jets, base, hs->legendre.at(c));
    for (std::size_t n = 0; n < g.size(); ++n) out.gamma_residual = std::max(out.gamma_residual, std::abs(v[n] - ph.values(c)[n]));
  }
  out.psi_h = std::move(ph);
  out.psi_back = std::move(back);
  return out;
}

// ---------------------------------------------------------------------------
// Residuals and first-variation oracle

struct ResidualRow {
  Symbol direction;
  EquationTag tag = EquationTag::identity;
  double max_residual = 0.0;
};

/// Max interior residual of each field equation on a sampled section,
/// placeholders filled by finite differences.
inline std::vector<ResidualRow> residual_table(const PDESystem& sys, const std::vector<Symbol>& base, const DiscreteSection& s,
                                               std::vector<std::vector<double>>* fields = nullptr) {
  const Grid& g = s.grid();
  std::vector<Symbol> slots = base;
  for (auto c : s.components()) slots.push_back(c);
  std::map<Symbol, std::vector<double>> deriv;
  std::vector<ResidualRow> rows;
  for (const auto& eq : sys.equations) {
    std::vector<Symbol> extra;
    for (auto sym : free_symbols(eq.lhs))
      if (auto ph = decode_placeholder(sym)) {
        if (!deriv.count(sym)) {
          auto j = std::find(base.begin(), base.end(), ph->first);
          deriv[sym] = differentiate(g, s.values(ph->second), static_cast<int>(j - base.begin()));
        }
        extra.push_back(sym);
      }
    auto sl = slots;
    sl.insert(sl.end(), extra.begin(), extra.end());
    CompiledExpr f(eq.lhs, sl);
    std::vector<double> x(sl.size()), field(g.size(), 0.0);
    ResidualRow row{eq.direction, eq.tag, 0.0};
    for (std::size_t n = 0; n < g.size(); ++n) {
      for (int a = 0; a < g.dim(); ++a) x[static_cast<std::size_t>(a)] = g.coordinate(n, a);
      for (std::size_t c = 0; c < s.components().size(); ++c) x[base.size() + c] = s.values(c)[n];
      for (std::size_t k = 0; k < extra.size(); ++k) x[slots.size() + k] = deriv[extra[k]][n];
      field[n] = f(x);
      if (g.interior(n, 2)) row.max_residual = std::max(row.max_residual, std::abs(field[n]));
    }
    rows.push_back(row);
    if (fields) fields->push_back(std::move(field));
  }
  return rows;
}

/// Writes residual fields as CSV: coordinates, then one column per equation.
inline void write_residual_csv(const std::string& path, const std::vector<std::string>& base_names, const Grid& g,
                               const std::vector<ResidualRow>& rows, const std::vector<std::vector<double>>& fields) {
  std::ofstream out(path);
  if (!out) throw VerificationError("cannot open '" + path + "' for writing");
  out.precision(17);
  for (const auto& b : base_names) out << b << ',';
  for (std::size_t k = 0; k < rows.size(); ++k) out << (k ? "," : "") << "E[" << rows[k].direction.name() << ']';
  out << '\n';
  for (std::size_t n = 0; n < g.size(); ++n) {
    for (int a = 0; a < g.dim(); ++a) out << g.coordinate(n, a) << ',';
    for (std::size_t k = 0; k < fields.size(); ++k) out << (k ? "," : "") << fields[k][n];
    out << '\n';
  }
}

/// Exact first variation of the Lagrangian action along a field bump:
/// integral of EL_a(j^4 phi) * b over the bump support (Gauss-Legendre).
inline double first_variation_oracle(const FieldModel& model, const PDESystem& el, const SectionData& phi, const Variation& v) {
  auto jets = jet_section(model, phi, 4);
  auto target = model.chart(0).jets();
  auto k = std::find(target.begin(), target.end(), v.direction);
  if (k == target.end()) throw VerificationError("first-variation oracle needs a field direction");
  const FieldEquation* eq = nullptr;
  for (const auto& e : el.equations)
    if (e.direction == v.direction) eq = &e;
  if (!eq) return 0.0;
  const auto base = model.chart(0).base();
  CompiledExpr f(substitute(eq->lhs, jets), base);
  std::vector<double> lo, hi;
  for (std::size_t a = 0; a < base.size(); ++a) {
    lo.push_back(v.center[a] - v.radius);
    hi.push_back(v.center[a] + v.radius);
  }
  auto integrand = [&](std::span<const double> x) {
    double b = v.value(x);
    return b == 0.0 ? 0.0 : f(x) * b;
  };
  return base.size() == 1 ? integrate_box(lo, hi, integrand, 24, 8) : integrate_box(lo, hi, integrand, 16, 6);
}

/// Reference value of the Lagrangian action of phi over the box.
inline double exact_action(const FieldModel& model, const SectionData& phi) {
  auto jets = jet_section(model, phi, 2);
  const auto base = model.chart(0).base();
  CompiledExpr f(substitute(model.lagrangian, jets), base);
  return integrate_box(model.box_lower, model.box_upper, [&](std::span<const double> x) { return f(x); }, 24,
                       base.size() == 1 ? 8 : 6);
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceRow {
  double h = 0.0;
  double action_error = 0.0;
  double gateaux_error_l = 0.0;   ///< Lagrangian functional along the probe bump
  double gateaux_error_lh = 0.0;  ///< unified functional along the probe bump
};

struct ConvergenceStudy {
  Variation probe;
  double action_noise = 0.0;   ///< errors below these levels are round-off
  double gateaux_noise = 0.0;
  double exact_action = 0.0;
  double exact_gateaux = 0.0;
  std::vector<ConvergenceRow> rows;
  double action_order = 0.0;
  double gateaux_order_l = 0.0;
  double gateaux_order_lh = 0.0;
};

/// Smallest slope log(e_k/e_k+1)/log(h_k/h_k+1); NaN when an error sits at
/// or below the noise level.
inline double observed_order(const std::vector<double>& h, const std::vector<double>& e, double noise = 0.0) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < h.size(); ++k) {
    if (!(e[k] > noise) || !(e[k + 1] > noise)) return std::numeric_limits<double>::quiet_NaN();
    worst = std::min(worst, std::log(e[k] / e[k + 1]) / std::log(h[k] / h[k + 1]));
  }
  return worst;
}

/// Errors of the discrete action and Gateaux derivatives against quadrature
/// oracles on a sequence of grids (points per axis).
inline ConvergenceStudy convergence_study(const FieldModel& model, const SectionData& phi, const std::vector<int>& points,
                                          std::optional<Variation> probe = std::nullopt) {
  if (model.box_lower.empty()) throw VerificationError("convergence study needs a base box");
  ConvergenceStudy cs;
  auto lf = lagrangian_functional(model);
  auto uf = unified_functional(model);
  auto el = euler_lagrange(model);
  auto psi_closed = unified_section(model, phi);
  if (probe) {
    cs.probe = *probe;
  } else {
    cs.probe.direction = model.chart(0).jet(0, MultiIndex::zero(model.m()));
    double r = std::numeric_limits<double>::infinity();
    for (int a = 0; a < model.m(); ++a) {
      auto lo = model.box_lower[static_cast<std::size_t>(a)], hi = model.box_upper[static_cast<std::size_t>(a)];
      cs.probe.center.push_back(0.5 * (lo + hi));
      r = std::min(r, 0.3 * (hi - lo));
    }
    cs.probe.radius = r;
  }
  cs.exact_action = exact_action(model, phi);
  cs.exact_gateaux = first_variation_oracle(model, el, phi, cs.probe);
  std::vector<double> hs, ea, el_err, elh_err;
  for (int n : points) {
    Grid g = Grid::uniform(model.box_lower, model.box_upper, n);
    cs.probe.check_support(g);
    auto jsec = sample_section(g, lf.chart, psi_closed);
    auto usec = sample_section(g, uf.chart, psi_closed);
    ActionEvaluator lev(lf.theta, lf.chart.base(), jsec);
    ActionEvaluator uev(uf.theta, uf.chart.base(), usec);
    ConvergenceRow row;
    row.h = g.max_spacing();
    row.action_error = std::abs(lev.value() - cs.exact_action);
    row.gateaux_error_l = std::abs(gateaux(lev, lev.prepare(perturbation_for(lf, jsec, cs.probe))) - cs.exact_gateaux);
    row.gateaux_error_lh = std::abs(gateaux(uev, uev.prepare(perturbation_for(uf, usec, cs.probe))) - cs.exact_gateaux);
    cs.action_noise = std::max(cs.action_noise, 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, lev.magnitude()));
    cs.gateaux_noise = std::max({cs.gateaux_noise, lev.roundoff_floor(kGateauxStep), uev.roundoff_floor(kGateauxStep)});
    hs.push_back(row.h);
    ea.push_back(row.action_error);
    el_err.push_back(row.gateaux_error_l);
    elh_err.push_back(row.gateaux_error_lh);
    cs.rows.push_back(row);
  }
  cs.action_order = observed_order(hs, ea, cs.action_noise);
  cs.gateaux_order_l = observed_order(hs, el_err, cs.gateaux_noise);
  cs.gateaux_order_lh = observed_order(hs, elh_err, cs.gateaux_noise);
  return cs;
}

// ---------------------------------------------------------------------------
// Full verification of a closed-form section

struct FirstVariationRow {
  Variation variation;
  double gateaux = 0.0;
  double oracle = 0.0;
};

struct VerificationRun {
  CriticalityReport lh;
  CriticalityReport l;
  std::optional<CriticalityReport> h;
  std::optional<std::string> hamiltonian_unsupported;
  MappedSections mapped;
  std::vector<ResidualRow> unified_residuals;
  std::vector<ResidualRow> el_residuals;
  std::vector<FirstVariationRow> first_variation;
  double first_variation_rel = 0.0;  ///< max |G - oracle| / max|oracle|; NaN when the oracle is below tolerance
  bool verdicts_agree = false;
  bool pass = false;
};

/// Builds psi = j_L o j^3 phi on W_r, tests LH on it, maps it to J^3 and P,
/// and tests L and H on the mapped sections.
inline VerificationRun verify_section(const FieldModel& model, const SectionData& phi, const Grid& grid,
                                      const CriticalityOptions& opt = {},
                                      std::vector<std::vector<double>>* residual_fields = nullptr) {
  if (model.m() > 2) throw VerificationError("quadrature runs support base dimension <= 2");
  VerificationRun run;
  auto uf = unified_functional(model);
  auto lf = lagrangian_functional(model);
  std::optional<HamiltonianSide> hs;
  try {
    hs = hamiltonian_side(model);
  } catch (const UnsupportedLagrangian& e) {
    run.hamiltonian_unsupported = e.what();
  }
  auto psi = sample_section(grid, uf.chart, unified_section(model, phi));
  run.lh = criticality_test(uf, psi, opt);
  run.mapped = map_sections(model, psi, hs ? &*hs : nullptr, opt.holonomy_tolerance);
  run.l = criticality_test(lf, run.mapped.phi, opt);
  if (hs) run.h = criticality_test(hamiltonian_functional(*hs), *run.mapped.psi_h, opt);

  auto sys = extract_field_equations(uf.theta, uf.chart);
  run.unified_residuals = residual_table(sys, uf.chart.base(), psi, residual_fields);
  auto el = euler_lagrange(model);
  FiberedChart j4(model.chart(4), {});
  auto j4sec = sample_section(grid, j4, jet_section(model, phi, 4));
  run.el_residuals = residual_table(el, j4.base(), j4sec);

  double worst = 0.0, scale = 0.0;
  for (const auto& row : run.l.rows) {
    double o = first_variation_oracle(model, el, phi, row.variation);
    run.first_variation.push_back({row.variation, row.gateaux_h, o});
    worst = std::max(worst, std::abs(row.gateaux_h - o));
    scale = std::max(scale, std::abs(o));
  }
  run.first_variation_rel = scale > run.l.tolerance ? worst / scale : std::numeric_limits<double>::quiet_NaN();
  bool fv_ok = worst <= 1e-3 * scale + run.l.tolerance;
  run.verdicts_agree = run.lh.critical == run.l.critical && (!run.h || run.h->critical == run.l.critical);
  run.pass = run.verdicts_agree && fv_ok;
  return run;
}

}  // namespace jetvar
