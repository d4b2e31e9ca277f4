// Command-line driver for convergence studies, solution grid dumps and
// stability diagnostics.
//
// Exit codes: 0 success, 1 solver failure, 2 configuration error.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fluxdg/study.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_solver = 1;
constexpr int exit_config = 2;
constexpr const char* out_dir_env = "FLUXDG_OUT_DIR";

struct Overrides {
  std::string config_file;
  std::string case_name, p, levels, sigma, lambda, zeta, nu, theta, out, seed, solver, tol,
      resolution, samples;
};

void add_study_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_file, "key = value config file (flags override it)");
  cmd->add_option("--case", o.case_name, "manufactured case: paper | sine");
  cmd->add_option("--p", o.p, "comma-separated polynomial degrees, e.g. 1,2,3,4");
  cmd->add_option("--levels", o.levels, "comma-separated elements per side, doubling, e.g. 4,8,16");
  cmd->add_option("--sigma", o.sigma, "flux-jump stabilisation weight (> 0)");
  cmd->add_option("--lambda", o.lambda, "h exponent of the stabilisation");
  cmd->add_option("--zeta", o.zeta, "p exponent of the stabilisation");
  cmd->add_option("--nu", o.nu, "h exponent of the boundary flux norm term");
  cmd->add_option("--theta", o.theta, "p exponent of the boundary flux norm term");
  cmd->add_option("--out", o.out, "output directory (overrides $FLUXDG_OUT_DIR)");
  cmd->add_option("--seed", o.seed, "random seed for probes");
  cmd->add_option("--solver", o.solver, "direct | iterative");
  cmd->add_option("--tol", o.tol, "relative residual tolerance");
  cmd->add_option("--samples", o.samples, "random samples per level for inequality probes");
}

fluxdg::StudyConfig resolve(const Overrides& o) {
  fluxdg::StudyConfig cfg;
  if (!o.config_file.empty()) fluxdg::load_config_file(cfg, o.config_file);
  if (const char* env = std::getenv(out_dir_env); env != nullptr && *env != '\0') {
    cfg.out_dir = env;
  }
  const std::pair<const char*, const std::string*> flags[] = {
      {"case", &o.case_name}, {"p", &o.p},           {"levels", &o.levels},
      {"sigma", &o.sigma},    {"lambda", &o.lambda}, {"zeta", &o.zeta},
      {"nu", &o.nu},          {"theta", &o.theta},   {"out", &o.out},
      {"seed", &o.seed},      {"solver", &o.solver}, {"tol", &o.tol},
      {"resolution", &o.resolution}, {"samples", &o.samples}};
  for (const auto& [key, value] : flags) {
    if (!value->empty()) fluxdg::apply_setting(cfg, key, *value);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fluxdg: flux-jump stabilised DG solver for -div(K grad u) + u = f"};
  app.require_subcommand(1);

  Overrides conv_o, grid_o, diag_o;
  auto* conv = app.add_subcommand("convergence", "run a convergence study, one CSV per p");
  add_study_options(conv, conv_o);

  auto* grid = app.add_subcommand("grid", "dump u_h and u on a uniform grid");
  add_study_options(grid, grid_o);
  std::size_t grid_n = 4;
  grid->add_option("--n", grid_n, "elements per side")->check(CLI::PositiveNumber);
  grid->add_option("--resolution", grid_o.resolution, "grid points per axis (>= 2)");

  auto* diag = app.add_subcommand("diagnostics", "inf-sup constant, inequality probes, conservation");
  add_study_options(diag, diag_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (conv->parsed()) {
      for (const auto& path : fluxdg::run_convergence(resolve(conv_o))) {
        std::cout << path.string() << "\n";
      }
    } else if (grid->parsed()) {
      const fluxdg::StudyConfig cfg = resolve(grid_o);
      if (cfg.p_values.size() != 1) {
        throw fluxdg::ConfigError("grid takes exactly one p value");
      }
      std::cout << fluxdg::dump_solution_grid(cfg, cfg.p_values.front(), grid_n, cfg.resolution)
                       .string()
                << "\n";
    } else if (diag->parsed()) {
      for (const auto& path : fluxdg::run_diagnostics(resolve(diag_o))) {
        std::cout << path.string() << "\n";
      }
    }
  } catch (const fluxdg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const fluxdg::StudyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_solver;
  } catch (const fluxdg::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return exit_solver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_solver;
  }
  return exit_ok;
}
