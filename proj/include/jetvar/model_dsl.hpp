#pragma once

// Model files.
//
//   # comment
//   model beam
//   base x
//   fields u
//   lagrangian (1/2)*u[2]^2
//   box [0, 1]
//   grid 201
//   section exact: u = 1 + x + x^2 + x^3
//   assume closed-image
//
// Jet coordinates are written u[k1,...,km] with one order per base axis.
// Several fields in a section are separated by ';'.

#include <cctype>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "jetvar/formalisms.hpp"
#include "jetvar/jetcalc.hpp"
#include "jetvar/symexpr.hpp"

namespace jetvar {

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int column, const std::string& reason)
      : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + reason),
        line_(line), column_(column), reason_(reason) {}
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& reason() const { return reason_; }

 private:
  int line_, column_;
  std::string reason_;
};

struct NamedSection {
  std::string name;
  SectionData data;

  friend bool operator==(const NamedSection& a, const NamedSection& b) {
    return a.name == b.name && a.data.fields == b.data.fields;
  }
};

inline const std::set<std::string>& known_assumptions() {
  static const std::set<std::string> k{"closed-image", "connected-fibers"};
  return k;
}

struct ModelFile {
  FieldModel model;
  std::vector<int> grid;  ///< points per axis; empty means the command default
  std::vector<NamedSection> sections;
  std::set<std::string> assumptions;

  friend bool operator==(const ModelFile&, const ModelFile&) = default;
};

namespace detail {

/// Recursive-descent parser for one expression line.
class ExprParser {
 public:
  enum class Scope { lagrangian, section };

  ExprParser(std::string_view text, int line, int col0, const std::vector<std::string>& base,
             const std::vector<std::string>& fields, Scope scope)
      : s_(text), line_(line), col0_(col0), base_(base), fields_(fields), scope_(scope) {}

  Expr parse() {
    Expr e = expr();
    skip();
    if (pos_ < s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& reason, std::size_t at) const {
    throw ParseError(line_, col0_ + static_cast<int>(at), reason);
  }
  [[noreturn]] void fail(const std::string& reason) const { fail(reason, pos_); }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr expr() {
    Expr e = term();
    for (;;) {
      if (eat('+')) e += term();
      else if (eat('-')) e -= term();
      else return e;
    }
  }

  Expr term() {
    Expr e = unary();
    for (;;) {
      if (eat('*')) {
        e *= unary();
      } else if (skip(), pos_ < s_.size() && s_[pos_] == '/') {
        std::size_t at = pos_++;
        Expr d = unary();
        if (d.is_zero()) fail("division by zero", at);
        e = e / d;
      } else {
        return e;
      }
    }
  }

  Expr unary() {
    if (eat('-')) return -unary();
    if (eat('+')) return unary();
    return power();
  }

  Expr power() {
    Expr b = primary();
    skip();
    if (pos_ < s_.size() && s_[pos_] == '^') {
      std::size_t at = ++pos_;
      Expr k = unary();
      if (!k.is_constant() || k.constant_value().get_den() != 1) fail("exponent must be an integer constant", at);
      auto n = k.constant_value().get_num();
      if (!n.fits_sint_p() || std::abs(n.get_si()) > 64) fail("exponent out of range", at);
      if (n.get_si() < 0 && b.is_zero()) fail("division by zero", at);
      return pow(b, static_cast<int>(n.get_si()));
    }
    return b;
  }

  Expr number() {
    std::size_t start = pos_;
    std::string digits;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) digits += s_[pos_++];
    Rational value(digits.empty() ? "0" : digits);
    if (pos_ < s_.size() && s_[pos_] == '.') {
      ++pos_;
      std::string frac;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) frac += s_[pos_++];
      if (digits.empty() && frac.empty()) fail("malformed number", start);
      if (!frac.empty()) {
        mpz_class scale = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
        value += Rational(mpz_class(frac), scale);
      }
    }
    value.canonicalize();
    return Expr(value);
  }

  std::vector<int> index_tuple() {
    std::vector<int> idx;
    for (;;) {
      skip();
      std::size_t start = pos_;
      int v = 0;
      auto [p, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
      if (ec != std::errc()) fail("expected a non-negative integer in the multi-index", start);
      pos_ = static_cast<std::size_t>(p - s_.data());
      if (v < 0) fail("negative derivative order", start);
      idx.push_back(v);
      if (eat(',')) continue;
      if (eat(']')) return idx;
      fail("expected ',' or ']' in the multi-index");
    }
  }

  Expr primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of expression");
    char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = expr();
      if (!eat(')')) fail("expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (!(std::isalpha(static_cast<unsigned char>(c)) || c == '_')) fail("unexpected '" + std::string(1, c) + "'");
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    std::string name(s_.substr(start, pos_ - start));

    static const std::map<std::string, Func> funcs{{"sin", Func::sin}, {"cos", Func::cos}, {"exp", Func::exp}, {"ln", Func::ln}};
    if (auto f = funcs.find(name); f != funcs.end()) {
      if (!eat('(')) fail("expected '(' after " + name);
      Expr arg = expr();
      if (!eat(')')) fail("expected ')'");
      try {
        return apply(f->second, arg);
      } catch (const EvaluationError& e) {
        fail(e.what(), start);
      }
    }
    for (std::size_t i = 0; i < base_.size(); ++i)
      if (base_[i] == name) return Expr(Symbol::intern(name, SymbolKind::base_coordinate));
    for (std::size_t a = 0; a < fields_.size(); ++a) {
      if (fields_[a] != name) continue;
      if (scope_ == Scope::section) fail("sections are closed forms in the base coordinates; '" + name + "' is a field", start);
      std::vector<int> idx(base_.size(), 0);
      skip();
      if (pos_ < s_.size() && s_[pos_] == '[') {
        std::size_t open = pos_++;
        idx = index_tuple();
        if (idx.size() != base_.size())
          fail("multi-index of " + name + " has " + std::to_string(idx.size()) + " entries but the base has " +
                   std::to_string(base_.size()) + " coordinates",
               open);
      }
      MultiIndex I(idx);
      if (I.order() > 2)
        fail("order " + std::to_string(I.order()) + " derivative in a second-order Lagrangian", start);
      return Expr(Symbol::intern(jet_name(name, I), SymbolKind::jet_coordinate));
    }
    fail("unknown symbol '" + name + "'", start);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_, col0_;
  const std::vector<std::string>& base_;
  const std::vector<std::string>& fields_;
  Scope scope_;
};

inline bool valid_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

inline std::string_view trim(std::string_view s, std::size_t* lead = nullptr) {
  std::size_t a = 0;
  while (a < s.size() && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  std::size_t b = s.size();
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  if (lead) *lead = a;
  return s.substr(a, b - a);
}

struct Words {
  std::vector<std::string> items;
  std::vector<int> columns;
};

inline Words split_words(std::string_view s, int col0) {
  Words w;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) || s[i] == ',')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) && s[j] != ',') ++j;
    w.items.emplace_back(s.substr(i, j - i));
    w.columns.push_back(col0 + static_cast<int>(i));
    i = j;
  }
  return w;
}

inline double parse_real(std::string_view s, int line, int col) {
  auto t = trim(s);
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) throw ParseError(line, col, "expected a number, got '" + std::string(t) + "'");
  return v;
}

}  // namespace detail

/// Parses a model file.  Every error carries line:column.
inline ModelFile parse_model(std::string_view text) {
  ModelFile mf;
  struct Pending {
    std::string text;
    int line, col;
  };
  std::optional<Pending> lagrangian, box, grid;
  std::vector<std::pair<std::string, Pending>> sections;
  std::set<std::string> seen;
  bool have_base = false, have_fields = false, have_model = false;
  int last_line = 1;

  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    last_line = line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    std::size_t lead = 0;
    auto line = detail::trim(raw, &lead);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    int col = static_cast<int>(lead) + 1;
    std::size_t ksep = 0;
    while (ksep < line.size() && !std::isspace(static_cast<unsigned char>(line[ksep]))) ++ksep;
    std::string key(line.substr(0, ksep));
    std::size_t rlead = 0;
    auto rest = detail::trim(line.substr(ksep), &rlead);
    int rcol = col + static_cast<int>(ksep + rlead);

    static const std::set<std::string> keys{"model", "base", "fields", "lagrangian", "box", "grid", "section", "assume"};
    if (!keys.count(key)) throw ParseError(line_no, col, "unknown key '" + key + "'");
    if (key != "section" && key != "assume") {
      if (seen.count(key)) throw ParseError(line_no, col, "duplicate key '" + key + "'");
      seen.insert(key);
    }
    if (rest.empty()) throw ParseError(line_no, col + static_cast<int>(ksep), "missing value for '" + key + "'");

    if (key == "model") {
      if (!detail::valid_identifier(rest)) throw ParseError(line_no, rcol, "model name must be an identifier");
      mf.model.name = std::string(rest);
      have_model = true;
    } else if (key == "base" || key == "fields") {
      auto w = detail::split_words(rest, rcol);
      auto& target = key == "base" ? mf.model.base : mf.model.fields;
      for (std::size_t i = 0; i < w.items.size(); ++i) {
        const auto& n = w.items[i];
        if (!detail::valid_identifier(n) || n.find('-') != std::string::npos)
          throw ParseError(line_no, w.columns[i], "'" + n + "' is not a valid name");
        static const std::set<std::string> reserved{"sin", "cos", "exp", "ln", "p"};
        if (reserved.count(n) || n.rfind("p_", 0) == 0) throw ParseError(line_no, w.columns[i], "'" + n + "' is a reserved name");
        if (std::find(mf.model.base.begin(), mf.model.base.end(), n) != mf.model.base.end() ||
            std::find(mf.model.fields.begin(), mf.model.fields.end(), n) != mf.model.fields.end())
          throw ParseError(line_no, w.columns[i], "name '" + n + "' declared twice");
        target.push_back(n);
      }
      if (target.size() > 3) throw ParseError(line_no, rcol, key == "base" ? "at most 3 base coordinates" : "at most 3 fields");
      (key == "base" ? have_base : have_fields) = true;
    } else if (key == "lagrangian") {
      lagrangian = Pending{std::string(rest), line_no, rcol};
    } else if (key == "box") {
      box = Pending{std::string(rest), line_no, rcol};
    } else if (key == "grid") {
      grid = Pending{std::string(rest), line_no, rcol};
    } else if (key == "section") {
      auto colon = rest.find(':');
      if (colon == std::string_view::npos) throw ParseError(line_no, rcol, "expected 'section NAME: field = expression'");
      auto name = detail::trim(rest.substr(0, colon));
      if (!detail::valid_identifier(name)) throw ParseError(line_no, rcol, "section name must be an identifier");
      for (const auto& [n, p] : sections)
        if (n == name) throw ParseError(line_no, rcol, "duplicate section '" + std::string(name) + "'");
      sections.emplace_back(std::string(name), Pending{std::string(rest.substr(colon + 1)), line_no, rcol + static_cast<int>(colon) + 1});
    } else if (key == "assume") {
      std::string a(rest);
      if (!known_assumptions().count(a))
        throw ParseError(line_no, rcol, "unknown assumption '" + a + "' (expected closed-image or connected-fibers)");
      mf.assumptions.insert(a);
    }
    if (end == text.size()) break;
  }

  if (!have_model) throw ParseError(last_line, 1, "missing 'model' line");
  if (!have_base) throw ParseError(last_line, 1, "missing 'base' line");
  if (!have_fields) throw ParseError(last_line, 1, "missing 'fields' line");
  if (!lagrangian) throw ParseError(last_line, 1, "missing 'lagrangian' line");
  const auto& base = mf.model.base;
  const auto& fields = mf.model.fields;

  mf.model.lagrangian =
      detail::ExprParser(lagrangian->text, lagrangian->line, lagrangian->col, base, fields, detail::ExprParser::Scope::lagrangian)
          .parse();

  if (box) {
    // [a, b] x [c, d] ...
    std::string_view s = box->text;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      if (i >= s.size()) break;
      if (!mf.model.box_lower.empty()) {
        if (s[i] != 'x') throw ParseError(box->line, box->col + static_cast<int>(i), "expected 'x' between box intervals");
        ++i;
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      }
      if (i >= s.size() || s[i] != '[') throw ParseError(box->line, box->col + static_cast<int>(i), "expected '[' to open an interval");
      auto close = s.find(']', i);
      if (close == std::string_view::npos) throw ParseError(box->line, box->col + static_cast<int>(i), "unterminated interval");
      auto inner = s.substr(i + 1, close - i - 1);
      auto comma = inner.find(',');
      if (comma == std::string_view::npos) throw ParseError(box->line, box->col + static_cast<int>(i), "interval needs two endpoints");
      double lo = detail::parse_real(inner.substr(0, comma), box->line, box->col + static_cast<int>(i) + 1);
      double hi = detail::parse_real(inner.substr(comma + 1), box->line, box->col + static_cast<int>(i + comma) + 2);
      if (!(hi > lo)) throw ParseError(box->line, box->col + static_cast<int>(i), "empty interval");
      mf.model.box_lower.push_back(lo);
      mf.model.box_upper.push_back(hi);
      i = close + 1;
    }
    if (mf.model.box_lower.size() != base.size())
      throw ParseError(box->line, box->col, "box has " + std::to_string(mf.model.box_lower.size()) + " intervals but the base has " +
                                                std::to_string(base.size()) + " coordinates");
  }

  if (grid) {
    auto w = detail::split_words(grid->text, grid->col);
    for (std::size_t i = 0; i < w.items.size(); ++i) {
      int v = 0;
      const auto& t = w.items[i];
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || p != t.data() + t.size() || v < 9)
        throw ParseError(grid->line, w.columns[i], "grid resolution must be an integer >= 9");
      mf.grid.push_back(v);
    }
    if (mf.grid.size() == 1 && base.size() > 1) mf.grid.assign(base.size(), mf.grid[0]);
    if (mf.grid.size() != base.size()) throw ParseError(grid->line, grid->col, "grid needs one resolution per base coordinate");
  }

  for (const auto& [name, p] : sections) {
    NamedSection ns;
    ns.name = name;
    ns.data.fields.assign(fields.size(), Expr());
    std::vector<bool> given(fields.size(), false);
    std::string_view s = p.text;
    std::size_t i = 0;
    while (i <= s.size()) {
      auto semi = s.find(';', i);
      if (semi == std::string_view::npos) semi = s.size();
      auto part = s.substr(i, semi - i);
      std::size_t lead = 0;
      auto t = detail::trim(part, &lead);
      int col = p.col + static_cast<int>(i + lead);
      auto eq = t.find('=');
      if (eq == std::string_view::npos) throw ParseError(p.line, col, "expected 'field = expression'");
      auto fname = detail::trim(t.substr(0, eq));
      auto it = std::find(fields.begin(), fields.end(), fname);
      if (it == fields.end()) throw ParseError(p.line, col, "unknown field '" + std::string(fname) + "'");
      auto a = static_cast<std::size_t>(it - fields.begin());
      if (given[a]) throw ParseError(p.line, col, "field '" + std::string(fname) + "' given twice");
      given[a] = true;
      ns.data.fields[a] = detail::ExprParser(t.substr(eq + 1), p.line, col + static_cast<int>(eq) + 1, base, fields,
                                             detail::ExprParser::Scope::section)
                              .parse();
      i = semi + 1;
    }
    for (std::size_t a = 0; a < fields.size(); ++a)
      if (!given[a]) throw ParseError(p.line, p.col, "section '" + name + "' does not define field '" + fields[a] + "'");
    mf.sections.push_back(std::move(ns));
  }

  try {
    mf.model.validate();
  } catch (const ModelError& e) {
    throw ParseError(lagrangian->line, lagrangian->col, e.what());
  }
  return mf;
}

/// Parses one "field = expr; ..." section definition against a model.
inline SectionData parse_section(std::string_view text, const FieldModel& model) {
  std::string src = "model m\nbase";
  for (const auto& b : model.base) src += " " + b;
  src += "\nfields";
  for (const auto& f : model.fields) src += " " + f;
  src += "\nlagrangian 0\nsection s: " + std::string(text) + "\n";
  try {
    return parse_model(src).sections.at(0).data;
  } catch (const ParseError& e) {
    throw ParseError(1, std::max(1, e.column() - 11), e.reason());
  }
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Canonical text of a model file; parse_model(print_model(m)) == m.
inline std::string print_model(const ModelFile& mf) {
  std::ostringstream out;
  const auto& m = mf.model;
  out << "model " << m.name << '\n';
  out << "base";
  for (const auto& b : m.base) out << ' ' << b;
  out << "\nfields";
  for (const auto& f : m.fields) out << ' ' << f;
  out << "\nlagrangian " << to_string(m.lagrangian) << '\n';
  if (!m.box_lower.empty()) {
    out << "box ";
    for (std::size_t a = 0; a < m.box_lower.size(); ++a)
      out << (a ? " x " : "") << '[' << format_real(m.box_lower[a]) << ", " << format_real(m.box_upper[a]) << ']';
    out << '\n';
  }
  if (!mf.grid.empty()) {
    out << "grid";
    for (int g : mf.grid) out << ' ' << g;
    out << '\n';
  }
  for (const auto& s : mf.sections) {
    out << "section " << s.name << ':';
    for (std::size_t a = 0; a < s.data.fields.size(); ++a)
      out << (a ? "; " : " ") << m.fields[a] << " = " << to_string(s.data.fields[a]);
    out << '\n';
  }
  for (const auto& a : mf.assumptions) out << "assume " << a << '\n';
  return out.str();
}

/// 64-bit FNV-1a digest of the canonical model text.
inline std::string model_digest(const ModelFile& mf) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : print_model(mf)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace jetvar
