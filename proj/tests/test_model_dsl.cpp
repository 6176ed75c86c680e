#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "jetvar/model_dsl.hpp"

using namespace jetvar;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ParseError parse_error(const std::string& text) {
  try {
    parse_model(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no parse error for:\n" << text;
  return ParseError(0, 0, "");
}

const char* kMinimal = "model m\nbase x\nfields u\nlagrangian (1/2)*u[2]^2\n";

}  // namespace

TEST(ModelDsl, ParsesBeam) {
  auto mf = parse_model(slurp(JETVAR_MODELS_DIR "/beam.jv"));
  EXPECT_EQ(mf.model.name, "beam");
  EXPECT_EQ(mf.model.base, std::vector<std::string>{"x"});
  EXPECT_EQ(mf.model.box_lower, std::vector<double>{0.0});
  EXPECT_EQ(mf.grid, std::vector<int>{201});
  ASSERT_EQ(mf.sections.size(), 3u);
  EXPECT_EQ(mf.sections[1].name, "perturbed");
  EXPECT_EQ(mf.assumptions.size(), 2u);
  auto u2 = Symbol::intern("u[2]", SymbolKind::jet_coordinate);
  EXPECT_EQ(mf.model.lagrangian, Expr(Rational(1, 2)) * Expr(u2) * Expr(u2));
}

TEST(ModelDsl, ParsesEveryCorpusModel) {
  for (const char* name : {"beam", "plate", "fullquad", "kdv"}) {
    auto mf = parse_model(slurp(std::string(JETVAR_MODELS_DIR "/") + name + ".jv"));
    EXPECT_EQ(mf.model.name, name);
    EXPECT_NO_THROW(mf.model.validate());
    EXPECT_FALSE(mf.sections.empty());
  }
}

TEST(ModelDsl, ExactDecimalsAndPrecedence) {
  auto mf = parse_model("model m\nbase x\nfields u\nlagrangian 0.25*u[1]^2 - -u/2^2\n");
  auto u = Expr(Symbol::intern("u", SymbolKind::jet_coordinate));
  auto u1 = Expr(Symbol::intern("u[1]", SymbolKind::jet_coordinate));
  EXPECT_EQ(mf.model.lagrangian, Expr(Rational(1, 4)) * u1 * u1 + Expr(Rational(1, 4)) * u);
}

TEST(ModelDsl, CommentsAndBlankLines) {
  auto mf = parse_model("# header\n\nmodel m\n  base x   # trailing\nfields u\nlagrangian u[2]^2\n");
  EXPECT_EQ(mf.model.name, "m");
}

TEST(ModelDsl, ThirdOrderRejectedWithPosition) {
  auto e = parse_error("model m\nbase x\nfields u\nlagrangian u[3]*u\n");
  EXPECT_EQ(e.line(), 4);
  EXPECT_EQ(e.column(), 12);
  EXPECT_EQ(e.reason(), "order 3 derivative in a second-order Lagrangian");
}

TEST(ModelDsl, Errors) {
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\nlagrangian u[2]^2\ncolour red\n").reason(), "unknown key 'colour'");
  EXPECT_EQ(parse_error("model m\nmodel n\n").reason(), "duplicate key 'model'");
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\n").reason(), "missing 'lagrangian' line");
  EXPECT_EQ(parse_error("model m\nbase x\nfields p\nlagrangian 0\n").reason(), "'p' is a reserved name");
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\nlagrangian q\n").reason(), "unknown symbol 'q'");
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\nlagrangian u[1,1]\n").line(), 4);
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\nlagrangian u^x\n").reason(), "exponent must be an integer constant");
  EXPECT_EQ(parse_error("model m\nbase x\nfields u\nlagrangian 1/0\n").reason(), "division by zero");
  EXPECT_EQ(parse_error(std::string(kMinimal) + "box [0, 1] x [0, 1]\n").line(), 5);
  EXPECT_EQ(parse_error(std::string(kMinimal) + "grid 5\n").reason(), "grid resolution must be an integer >= 9");
  EXPECT_EQ(parse_error(std::string(kMinimal) + "section s: u = u[1]\n").line(), 5);
  EXPECT_EQ(parse_error(std::string(kMinimal) + "assume smooth\n").reason(),
            "unknown assumption 'smooth' (expected closed-image or connected-fibers)");
  EXPECT_EQ(parse_error(std::string(kMinimal) + "section s: v = x\n").reason(), "unknown field 'v'");
}

TEST(ModelDsl, ParseSectionOverride) {
  auto mf = parse_model(kMinimal);
  auto s = parse_section("u = sin(x) + 1", mf.model);
  auto x = Expr(Symbol::intern("x", SymbolKind::base_coordinate));
  ASSERT_EQ(s.fields.size(), 1u);
  EXPECT_EQ(s.fields[0], sin(x) + Expr(1));
  EXPECT_THROW(parse_section("u = y", mf.model), ParseError);
}

TEST(ModelDsl, PrintRoundTripsCorpus) {
  for (const char* name : {"beam", "plate", "fullquad", "kdv"}) {
    auto mf = parse_model(slurp(std::string(JETVAR_MODELS_DIR "/") + name + ".jv"));
    auto printed = print_model(mf);
    auto again = parse_model(printed);
    EXPECT_EQ(again, mf) << printed;
    EXPECT_EQ(print_model(again), printed);
    EXPECT_EQ(model_digest(again), model_digest(mf));
  }
}

TEST(ModelDsl, DigestDependsOnContent) {
  auto a = parse_model(kMinimal);
  auto b = parse_model("model m\nbase x\nfields u\nlagrangian (1/3)*u[2]^2\n");
  EXPECT_NE(model_digest(a), model_digest(b));
  EXPECT_EQ(model_digest(a).size(), 16u);
}

TEST(ModelDsl, FormatReal) {
  EXPECT_EQ(format_real(0.1), "0.10000000000000001");
  EXPECT_EQ(format_real(1.0), "1");
}
