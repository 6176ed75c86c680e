#pragma once

// Command dispatch and deterministic reports (plain text or JSON).

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "jetvar/formalisms.hpp"
#include "jetvar/model_dsl.hpp"
#include "jetvar/verifier.hpp"

#ifndef JETVAR_VERSION
#define JETVAR_VERSION "0.1.0"
#endif

namespace jetvar {

using ordered_json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"derive-el", "legendre", "cartan", "hamiltonian",
                                          "constraints", "check-regularity", "verify", "all"};
  return c;
}

struct RunOptions {
  std::string command;
  std::optional<int> grid;
  std::optional<double> tolerance;
  int variations = 32;
  std::string format = "text";
  std::optional<std::string> section;  ///< "u = ..." overriding the model's sections
  std::optional<std::string> csv;      ///< residual dump path (verify)
};

struct RunResult {
  std::string report;
  int exit_code = 0;
};

/// Equation text "lhs = 0" with the leading coefficient made positive.
inline std::string equation_string(const Expr& lhs) {
  if (lhs.is_zero()) return "0 = 0";
  const auto& terms = lhs.data().terms;
  Expr e = terms.begin()->second < 0 ? -lhs : lhs;
  return to_string(e) + " = 0";
}

namespace detail {

inline std::string human_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string scalar_text(const ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  if (v.is_number_float()) return human_number(v.get<double>());
  if (v.is_null()) return "-";
  return v.dump();
}

inline bool is_table(const ordered_json& v) {
  if (!v.is_array() || v.empty()) return false;
  for (const auto& row : v) {
    if (!row.is_object()) return false;
    for (const auto& [k, c] : row.items())
      if (c.is_structured()) return false;
  }
  return true;
}

inline void render(std::ostringstream& out, const ordered_json& v, int indent);

inline void render_table(std::ostringstream& out, const ordered_json& rows, int indent) {
  std::vector<std::string> cols;
  for (const auto& row : rows)
    for (const auto& [k, c] : row.items())
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> width;
  for (const auto& c : cols) width.push_back(c.size());
  for (const auto& row : rows) {
    std::vector<std::string> line;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      std::string t = row.contains(cols[i]) ? scalar_text(row.at(cols[i])) : "";
      width[i] = std::max(width[i], t.size());
      line.push_back(std::move(t));
    }
    cells.push_back(std::move(line));
  }
  auto emit = [&](const std::vector<std::string>& line) {
    std::string s(static_cast<std::size_t>(indent), ' ');
    for (std::size_t i = 0; i < line.size(); ++i) {
      s += line[i];
      if (i + 1 < line.size()) s += std::string(width[i] - line[i].size() + 2, ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    out << s << '\n';
  };
  emit(cols);
  for (const auto& line : cells) emit(line);
}

inline void render(std::ostringstream& out, const ordered_json& v, int indent) {
  std::string pad(static_cast<std::size_t>(indent), ' ');
  if (v.is_object()) {
    for (const auto& [k, c] : v.items()) {
      if (c.is_structured() && !c.empty()) {
        out << pad << k << ":\n";
        render(out, c, indent + 2);
      } else if (c.is_structured()) {
        out << pad << k << ": (none)\n";
      } else {
        out << pad << k << ": " << scalar_text(c) << '\n';
      }
    }
  } else if (is_table(v)) {
    render_table(out, v, indent);
  } else if (v.is_array()) {
    for (const auto& c : v) {
      if (c.is_structured()) {
        out << pad << "-\n";
        render(out, c, indent + 2);
      } else {
        out << pad << "- " << scalar_text(c) << '\n';
      }
    }
  } else {
    out << pad << scalar_text(v) << '\n';
  }
}

inline ordered_json equations_json(const PDESystem& sys) {
  ordered_json rows = ordered_json::array();
  for (const auto& e : sys.equations)
    rows.push_back({{"direction", e.direction.name()}, {"tag", to_string(e.tag)}, {"equation", equation_string(e.lhs)}});
  return rows;
}

inline ordered_json derive_el(const FieldModel& model) {
  ordered_json j;
  auto el = euler_lagrange(model);
  ordered_json rows = ordered_json::array();
  for (const auto& e : el.equations) rows.push_back({{"field", e.direction.name()}, {"equation", equation_string(e.lhs)}});
  j["equations"] = rows;
  auto u = build_unified_cartan(model);
  auto check = eliminate_momenta(model, extract_field_equations(u.theta, u.chart), legendre_restricted(model).entries);
  j["unified system reduces to these equations"] = check.matches;
  return j;
}

inline ordered_json legendre(const FieldModel& model) {
  ordered_json j;
  auto fl = legendre_extended(model);
  ordered_json rows = ordered_json::array();
  for (auto p : fl.order) {
    if (p == extended_momentum_symbol()) continue;
    rows.push_back({{"momentum", p.name()}, {"value", to_string(fl.at(p))}});
  }
  j["restricted"] = rows;
  j["extended"] = ordered_json::array({{{"momentum", "p"}, {"value", to_string(fl.at(extended_momentum_symbol()))}}});
  auto pulled = pullback(symmetrized_liouville_form(model), fl.entries);
  auto diff = pulled - cartan_form_lagrangian(model);
  bool ok = true;
  for (const auto& [k, c] : diff.terms()) ok = ok && equivalent(c, Expr());
  j["extended pullback of Theta_1^s equals Theta_L"] = ok;
  return j;
}

inline ordered_json cartan(const FieldModel& model) {
  ordered_json j;
  auto u = build_unified_cartan(model);
  j["H_hat"] = to_string(u.hamiltonian);
  j["Theta_r"] = to_string(u.theta);
  j["Theta_L"] = to_string(cartan_form_lagrangian(model));
  j["unified field equations"] = equations_json(extract_field_equations(u.theta, u.chart));
  return j;
}

inline ordered_json constraints(const FieldModel& model) {
  ordered_json j;
  auto rep = constraint_submanifold(model);
  ordered_json rows = ordered_json::array();
  for (const auto& c : rep.constraints)
    rows.push_back({{"momentum", c.momentum.name()},
                    {"value", to_string(c.value)},
                    {"kind", c.secondary ? "secondary" : "primary"},
                    {"from", c.direction.name()}});
  j["constraints"] = rows;
  j["codimension"] = rep.codimension;
  j["n(m + m(m+1)/2)"] = rep.expected_codimension;
  j["matches restricted Legendre map"] = true;
  return j;
}

inline ordered_json regularity(const ModelFile& mf) {
  ordered_json j;
  auto rep = regularity_check(mf.model);
  auto v = top_velocities(mf.model);
  ordered_json rows = ordered_json::array();
  for (std::size_t r = 0; r < v.size(); ++r) {
    ordered_json row;
    row[""] = v[r].name();
    for (std::size_t c = 0; c < v.size(); ++c) row[v[c].name()] = to_string(rep.hessian[r][c]);
    rows.push_back(row);
  }
  j["hessian"] = rows;
  j["rank"] = std::to_string(rep.rank) + " of " + std::to_string(rep.size);
  j["classification"] = to_string(rep.kind);
  ordered_json a;
  a["submersion onto image"] = rep.kind == Regularity::hyperregular ? "yes (full rank)" : "constant rank " + std::to_string(rep.rank) + " at samples";
  a["closed image"] = mf.assumptions.count("closed-image") ? "asserted" : "not asserted";
  a["connected fibers"] = mf.assumptions.count("connected-fibers") ? "asserted" : "not asserted";
  j["almost-regularity"] = a;
  return j;
}

inline ordered_json hamiltonian(const FieldModel& model) {
  ordered_json j;
  auto hs = hamiltonian_side(model);
  auto reg = regularity_check(model);
  j["classification"] = to_string(reg.kind);
  ordered_json coords = ordered_json::array();
  for (auto s : hs.chart.symbols()) coords.push_back(s.name());
  j["P coordinates"] = coords;
  ordered_json dep = ordered_json::array();
  for (const auto& [k, e] : hs.dependent_momenta) dep.push_back({{"momentum", k.name()}, {"value", to_string(e)}});
  j["image constraints"] = dep;
  ordered_json vel = ordered_json::array();
  for (const auto& [k, e] : hs.velocities) vel.push_back({{"velocity", k.name()}, {"value", to_string(e)}});
  j["velocities on P"] = vel;
  j["H"] = to_string(hs.hamiltonian);
  j["Theta_h"] = to_string(hs.theta);
  j["Hamilton-de Donder-Weyl equations"] = equations_json(hs.equations);
  j["FL_o^* Theta_h = Theta_L"] = hs.identity_holds;
  auto check = eliminate_momenta(model, hs.equations, hs.legendre);
  ordered_json red = ordered_json::array();
  for (const auto& e : check.reduced) red.push_back({{"direction", e.direction.name()}, {"equation", equation_string(e.lhs)}});
  j["after eliminating momenta"] = red;
  j["reduces to Euler-Lagrange"] = check.matches;
  return j;
}

inline Grid default_grid(const ModelFile& mf, const RunOptions& opt) {
  const auto& m = mf.model;
  if (m.box_lower.empty()) throw UsageError("verify needs a 'box' line in the model file");
  std::vector<int> n;
  if (opt.grid) n.assign(static_cast<std::size_t>(m.m()), *opt.grid);
  else if (!mf.grid.empty()) n = mf.grid;
  else n.assign(static_cast<std::size_t>(m.m()), m.m() == 1 ? 201 : 101);
  return Grid(m.box_lower, m.box_upper, n);
}

inline ordered_json criticality_json(const CriticalityReport& r) {
  return {{"functional", functional_name(r.kind)},
          {"max |gateaux|", r.max_gateaux},
          {"tolerance", r.tolerance},
          {"C", r.calibration_constant},
          {"calibrated", r.calibrated},
          {"verdict", r.critical ? "CRITICAL" : "NOT CRITICAL"}};
}

inline ordered_json verify_one(const ModelFile& mf, const NamedSection& sec, const RunOptions& opt, bool suffix_csv,
                               bool& pass) {
  const auto& model = mf.model;
  Grid g = default_grid(mf, opt);
  CriticalityOptions co;
  co.variations = opt.variations;
  co.tolerance = opt.tolerance;
  std::vector<std::vector<double>> fields;
  auto run = verify_section(model, sec.data, g, co, opt.csv ? &fields : nullptr);
  if (opt.csv) {
    std::string path = *opt.csv;
    if (suffix_csv) {
      auto dot = path.rfind('.');
      path = dot == std::string::npos ? path + "." + sec.name : path.substr(0, dot) + "." + sec.name + path.substr(dot);
    }
    write_residual_csv(path, model.base, g, run.unified_residuals, fields);
  }
  ordered_json j;
  ordered_json phi;
  for (std::size_t a = 0; a < sec.data.fields.size(); ++a) phi[model.fields[a]] = to_string(sec.data.fields[a]);
  j["section"] = phi;
  ordered_json grid = ordered_json::array();
  for (int a = 0; a < g.dim(); ++a) grid.push_back(g.points(a));
  j["grid"] = grid;
  j["variations"] = opt.variations;
  ordered_json verdicts = ordered_json::array();
  verdicts.push_back(criticality_json(run.lh));
  verdicts.push_back(criticality_json(run.l));
  if (run.h) verdicts.push_back(criticality_json(*run.h));
  j["verdicts"] = verdicts;
  if (run.hamiltonian_unsupported) j["H skipped"] = *run.hamiltonian_unsupported;
  ordered_json mapping;
  mapping["holonomy residual"] = run.mapped.holonomy.max_residual;
  mapping["round trip phi -> psi -> phi"] = run.mapped.round_trip;
  if (run.mapped.psi_h) mapping["gamma section residual"] = run.mapped.gamma_residual;
  mapping["verdicts agree"] = run.verdicts_agree;
  j["mapped sections"] = mapping;
  ordered_json fv;
  double oracle_max = 0.0, g_max = 0.0;
  for (const auto& row : run.first_variation) {
    oracle_max = std::max(oracle_max, std::abs(row.oracle));
    g_max = std::max(g_max, std::abs(row.gateaux));
  }
  fv["max |integral EL * du|"] = oracle_max;
  fv["max |gateaux L|"] = g_max;
  if (std::isnan(run.first_variation_rel))
    fv["relative discrepancy"] = "n/a (oracle below tolerance)";
  else
    fv["relative discrepancy"] = run.first_variation_rel;
  j["first variation"] = fv;
  ordered_json res = ordered_json::array();
  for (const auto& r : run.unified_residuals)
    res.push_back({{"direction", r.direction.name()}, {"tag", to_string(r.tag)}, {"max residual", r.max_residual}});
  j["unified residuals"] = res;
  ordered_json elres = ordered_json::array();
  for (const auto& r : run.el_residuals) elres.push_back({{"field", r.direction.name()}, {"max residual", r.max_residual}});
  j["Euler-Lagrange residuals"] = elres;

  bool nested = true;
  for (int a = 0; a < g.dim(); ++a) nested = nested && (g.points(a) - 1) % 4 == 0 && (g.points(a) - 1) / 4 + 1 >= 17 &&
                                             g.points(a) == g.points(0);
  if (nested) {
    int n = g.points(0);
    auto cs = convergence_study(model, sec.data, {(n - 1) / 4 + 1, (n - 1) / 2 + 1, n});
    ordered_json rows = ordered_json::array();
    for (const auto& r : cs.rows)
      rows.push_back({{"h", r.h}, {"action error", r.action_error}, {"gateaux error L", r.gateaux_error_l}, {"gateaux error LH", r.gateaux_error_lh}});
    ordered_json conv;
    conv["table"] = rows;
    auto order = [](double v) { return std::isnan(v) ? ordered_json("n/a (round-off level)") : ordered_json(v); };
    conv["action order"] = order(cs.action_order);
    conv["gateaux order L"] = order(cs.gateaux_order_l);
    conv["gateaux order LH"] = order(cs.gateaux_order_lh);
    j["convergence"] = conv;
  }
  j["result"] = run.pass ? "PASS" : "FAIL";
  pass = pass && run.pass;
  return j;
}

inline ordered_json verify(const ModelFile& mf, const RunOptions& opt, bool& pass) {
  std::vector<NamedSection> sections = mf.sections;
  if (opt.section) sections = {NamedSection{"cli", parse_section(*opt.section, mf.model)}};
  if (sections.empty()) throw UsageError("verify needs a section: add 'section NAME: u = ...' or pass --section");
  ordered_json j;
  for (const auto& s : sections) j[s.name] = verify_one(mf, s, opt, sections.size() > 1, pass);
  return j;
}

}  // namespace detail

/// Runs one command on a parsed model file.
inline RunResult run(const ModelFile& mf, const RunOptions& opt) {
  const auto& cmds = commands();
  if (std::find(cmds.begin(), cmds.end(), opt.command) == cmds.end()) throw UsageError("unknown command '" + opt.command + "'");
  if (opt.format != "text" && opt.format != "json") throw UsageError("--format must be text or json");
  if (opt.variations < 1) throw UsageError("--variations must be positive");
  if (opt.grid && *opt.grid < 9) throw UsageError("--grid must be at least 9");

  ordered_json doc;
  doc["tool"] = "jetvar";
  doc["version"] = JETVAR_VERSION;
  doc["command"] = opt.command;
  doc["model"] = mf.model.name;
  doc["digest"] = model_digest(mf);
  ordered_json body;
  bool pass = true;
  const bool all = opt.command == "all";
  const auto& m = mf.model;
  if (all || opt.command == "legendre") body["legendre"] = detail::legendre(m);
  if (all || opt.command == "constraints") body["constraints"] = detail::constraints(m);
  if (all || opt.command == "cartan") body["cartan"] = detail::cartan(m);
  if (all || opt.command == "derive-el") body["euler-lagrange"] = detail::derive_el(m);
  if (all || opt.command == "check-regularity") body["regularity"] = detail::regularity(mf);
  if (all || opt.command == "hamiltonian") {
    try {
      body["hamiltonian"] = detail::hamiltonian(m);
    } catch (const UnsupportedLagrangian& e) {
      if (!all) throw;
      body["hamiltonian"] = {{"skipped", e.what()}};
    }
  }
  if (opt.command == "verify" || (all && (!mf.sections.empty() || opt.section))) body["verify"] = detail::verify(mf, opt, pass);
  doc["report"] = body;
  if (opt.command == "verify" || all) doc["status"] = pass ? "PASS" : "FAIL";

  RunResult res;
  res.exit_code = pass ? 0 : 2;
  if (opt.format == "json") {
    res.report = doc.dump(2) + "\n";
  } else {
    std::ostringstream out;
    out << "jetvar " << JETVAR_VERSION << '\n';
    out << "command: " << opt.command << '\n';
    out << "model: " << mf.model.name << '\n';
    out << "digest: " << doc["digest"].get<std::string>() << '\n';
    for (const auto& [k, v] : body.items()) {
      out << "\n[" << k << "]\n";
      detail::render(out, v, 2);
    }
    if (doc.contains("status")) out << "\nstatus: " << doc["status"].get<std::string>() << '\n';
    res.report = out.str();
  }
  return res;
}

}  // namespace jetvar
