#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "jetvar/jetvar.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Symbolic-numeric toolkit for second-order Lagrangian field theories"};
  app.set_version_flag("--version", std::string("jetvar ") + JETVAR_VERSION);

  jetvar::RunOptions opt;
  std::string model_path;
  std::optional<std::string> out_path;
  int grid = 0;
  double tol = 0.0;

  std::string cmd_help = "one of:";
  for (const auto& c : jetvar::commands()) cmd_help += " " + c;
  app.add_option("command", opt.command, cmd_help)->required()->check(CLI::IsMember(jetvar::commands()));
  app.add_option("model", model_path, "model file")->required();
  auto* grid_opt = app.add_option("--grid", grid, "grid points per axis (default 201 for m=1, 101 for m=2)");
  auto* tol_opt = app.add_option("--tol", tol, "fixed criticality tolerance instead of the calibrated one");
  app.add_option("--variations", opt.variations, "number of random bump variations")->check(CLI::PositiveNumber);
  app.add_option("--out", out_path, "write the report to PATH");
  app.add_option("--format", opt.format, "report format")->check(CLI::IsMember({"text", "json"}));
  app.add_option("--section", opt.section, "section to verify, e.g. \"u = x^3\"");
  app.add_option("--csv", opt.csv, "dump unified residual fields as CSV (verify)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (*grid_opt) opt.grid = grid;
  if (*tol_opt) opt.tolerance = tol;

  std::ifstream in(model_path);
  if (!in) {
    std::cerr << "jetvar: cannot read model file '" << model_path << "'\n";
    return 1;
  }
  std::stringstream buf;
  buf << in.rdbuf();

  try {
    auto mf = jetvar::parse_model(buf.str());
    auto res = jetvar::run(mf, opt);
    if (out_path) {
      std::ofstream out(*out_path, std::ios::binary);
      if (!out) {
        std::cerr << "jetvar: cannot write '" << *out_path << "'\n";
        return 1;
      }
      out << res.report;
    } else {
      std::cout << res.report;
    }
    return res.exit_code;
  } catch (const jetvar::ParseError& e) {
    std::cerr << model_path << ":" << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "jetvar: " << e.what() << '\n';
    return 1;
  }
}
