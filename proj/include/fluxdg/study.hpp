#ifndef FLUXDG_STUDY_HPP
#define FLUXDG_STUDY_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fluxdg/analysis.hpp"
#include "fluxdg/forms.hpp"
#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"
#include "fluxdg/system.hpp"

namespace fluxdg {

/// Invalid study configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A solve failed at a named level (CLI exit code 1).
class StudyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct StudyConfig {
  std::string case_name = "paper";
  std::vector<int> p_values{1, 2, 3, 4};
  std::vector<std::size_t> levels{4, 8, 16, 32};
  double sigma = 1.0;
  double lambda = 1.0;
  double zeta = 2.0;
  double nu = 1.0;
  double theta = 2.0;
  SolverStrategy solver = SolverStrategy::direct;
  double tol = 1e-12;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 20240101;
  std::size_t resolution = 101;
  std::size_t probe_samples = 200;

  FormParams params(int p) const { return {sigma, lambda, zeta, nu, theta, p}; }

  void validate() const {
    if (case_name != "paper" && case_name != "sine") {
      throw ConfigError("case must be 'paper' or 'sine', got '" + case_name + "'");
    }
    if (p_values.empty()) throw ConfigError("p list is empty");
    for (int p : p_values) {
      if (p < 1 || p > BasisSet::max_degree) {
        throw ConfigError("p = " + std::to_string(p) + " outside [1, " +
                          std::to_string(BasisSet::max_degree) + "]");
      }
    }
    if (levels.empty()) throw ConfigError("levels list is empty");
    if (levels.front() == 0) throw ConfigError("levels must be >= 1");
    for (std::size_t i = 1; i < levels.size(); ++i) {
      if (levels[i] != 2 * levels[i - 1]) {
        throw ConfigError("levels must double at each step (" + std::to_string(levels[i - 1]) +
                          " -> " + std::to_string(levels[i]) + ")");
      }
    }
    try {
      params(1).validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(tol > 0.0)) throw ConfigError("tol must be > 0");
    if (resolution < 2) throw ConfigError("resolution must be >= 2");
    if (probe_samples < 100) throw ConfigError("samples must be >= 100");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("bad value for '" + key + "': '" + text + "'");
  }
  return value;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for '" + key + "'");
  return out;
}

}  // namespace detail

inline SolverStrategy parse_solver(const std::string& s) {
  if (s == "direct") return SolverStrategy::direct;
  if (s == "iterative" || s == "gmres") return SolverStrategy::iterative;
  throw ConfigError("solver must be 'direct' or 'iterative', got '" + s + "'");
}

/// Applies one `key = value` setting. Keys match the CLI flag names.
inline void apply_setting(StudyConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_list;
  using detail::parse_number;
  if (key == "case") cfg.case_name = value;
  else if (key == "p") cfg.p_values = parse_list<int>(key, value);
  else if (key == "levels") cfg.levels = parse_list<std::size_t>(key, value);
  else if (key == "sigma") cfg.sigma = parse_number<double>(key, value);
  else if (key == "lambda") cfg.lambda = parse_number<double>(key, value);
  else if (key == "zeta") cfg.zeta = parse_number<double>(key, value);
  else if (key == "nu") cfg.nu = parse_number<double>(key, value);
  else if (key == "theta") cfg.theta = parse_number<double>(key, value);
  else if (key == "solver") cfg.solver = parse_solver(value);
  else if (key == "tol") cfg.tol = parse_number<double>(key, value);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "resolution") cfg.resolution = parse_number<std::size_t>(key, value);
  else if (key == "samples") cfg.probe_samples = parse_number<std::size_t>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

/// Reads a flat key-value file: one `key = value` per line, `#` starts a
/// comment, blank lines ignored, lists comma separated.
inline void load_config_file(StudyConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

/// 17 significant digits, locale independent.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string format_rate(const std::optional<double>& r) {
  return r ? format_real(*r) : std::string("undefined");
}

/// Writes via a temporary file and rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline constexpr const char* convergence_csv_header =
    "n,h,dofs,l2_error,h1_error,triple_surrogate,beta_l2,beta_h1,beta_triple";

/// Rows in level order; rate columns are empty on the first row.
inline std::string convergence_csv(const ErrorReport& report) {
  std::string s = std::string(convergence_csv_header) + "\n";
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    const ErrorLevel& l = report.levels[i];
    s += std::to_string(l.n) + "," + format_real(l.h) + "," + std::to_string(l.dofs) + "," +
         format_real(l.l2_error) + "," + format_real(l.broken_h1_error) + "," +
         format_real(l.triple_surrogate_error);
    if (i == 0) {
      s += ",,,";
    } else {
      const LevelRates& r = report.rates[i - 1];
      s += "," + format_rate(r.beta_l2) + "," + format_rate(r.beta_h1) + "," +
           format_rate(r.beta_triple);
    }
    s += "\n";
  }
  return s;
}

struct LevelSolution {
  DGSystem system;
  SolutionField solution;
};

inline LevelSolution solve_level(const StudyConfig& cfg, const ManufacturedCase& mc, int p,
                                 std::size_t n) {
  const MeshTopology mesh = build_uniform_quad_mesh(n);
  const BasisSet basis = make_basis(p);
  DGSystem sys = assemble(mesh, basis, mc.K, mc.f, cfg.params(p));
  SolveOptions opts;
  opts.strategy = cfg.solver;
  opts.tol = cfg.tol;
  try {
    SolutionField sol = solve(sys, opts);
    return {std::move(sys), std::move(sol)};
  } catch (const SolverError& e) {
    throw StudyError("solver failure at p=" + std::to_string(p) + ", n=" + std::to_string(n) +
                     " after " + std::to_string(e.iterations()) + " iterations: " + e.what());
  }
}

/// Errors of u_h against the exact solution at the data quadrature.
inline ErrorLevel measure_level(const LevelSolution& ls, const ManufacturedCase& mc) {
  const DGSystem& sys = ls.system;
  const int q = sys.quadrature.data_points(sys.basis->degree());
  const VolumeRule vol = make_volume_rule(q);
  const EdgeRule edge = make_edge_rule(q);
  ErrorLevel lvl;
  lvl.n = sys.mesh->n_per_side();
  lvl.h = sys.mesh->h();
  lvl.dofs = sys.dofs.total();
  lvl.l2_error = l2_error(ls.solution, mc.u, vol);
  lvl.broken_h1_error = broken_h1_error(ls.solution, mc.u, vol);
  lvl.triple_surrogate_error =
      triple_norm_surrogate(*sys.mesh, error_function(ls.solution, mc.u), mc.K,
                            NormWeights::from(sys.params, *sys.mesh), vol, edge);
  return lvl;
}

inline ErrorReport convergence_report(const StudyConfig& cfg, int p) {
  const ManufacturedCase mc = case_by_name(cfg.case_name);
  ErrorReport report;
  report.p = p;
  for (std::size_t n : cfg.levels) report.add_level(measure_level(solve_level(cfg, mc, p, n), mc));
  return report;
}

inline std::filesystem::path convergence_path(const StudyConfig& cfg, int p) {
  return cfg.out_dir / ("convergence_" + cfg.case_name + "_p" + std::to_string(p) + ".csv");
}

/// One CSV per p. On failure every file written by this call is removed.
inline std::vector<std::filesystem::path> run_convergence(const StudyConfig& cfg) {
  cfg.validate();
  std::vector<std::filesystem::path> written;
  try {
    for (int p : cfg.p_values) {
      const std::string csv = convergence_csv(convergence_report(cfg, p));
      const auto path = convergence_path(cfg, p);
      write_file_atomic(path, csv);
      written.push_back(path);
    }
  } catch (...) {
    for (const auto& f : written) std::filesystem::remove(f);
    throw;
  }
  return written;
}

/// Samples u_h and u on a resolution x resolution grid over [0,1]^2 (x fastest).
/// u_h is evaluated 1e-9 inside the element that `locate` picks.
inline std::string solution_grid_csv(const SolutionField& u_h, const FieldFunction& u_exact,
                                     std::size_t resolution) {
  if (resolution < 2) throw ConfigError("resolution must be >= 2");
  const MeshTopology& mesh = u_h.mesh();
  std::string s = "x,y,u_h,u_exact\n";
  const double step = 1.0 / static_cast<double>(resolution - 1);
  for (std::size_t j = 0; j < resolution; ++j) {
    for (std::size_t i = 0; i < resolution; ++i) {
      const Vec2 x(static_cast<double>(i) * step, static_cast<double>(j) * step);
      const std::size_t e = mesh.locate(x);
      const auto& v = mesh.element(e).vertices;
      const Vec2 inside(std::clamp(x.x(), v[0].x() + 1e-9, v[2].x() - 1e-9),
                        std::clamp(x.y(), v[0].y() + 1e-9, v[2].y() - 1e-9));
      s += format_real(x.x()) + "," + format_real(x.y()) + "," +
           format_real(u_h.evaluate(e, inside).value) + "," + format_real(u_exact(x).value) + "\n";
    }
  }
  return s;
}

inline std::filesystem::path grid_path(const StudyConfig& cfg, int p, std::size_t n) {
  return cfg.out_dir / ("grid_" + cfg.case_name + "_p" + std::to_string(p) + "_n" +
                        std::to_string(n) + ".csv");
}

inline std::filesystem::path dump_solution_grid(const StudyConfig& cfg, int p, std::size_t n,
                                                std::size_t resolution) {
  cfg.validate();
  if (resolution < 2) throw ConfigError("resolution must be >= 2");
  if (n == 0) throw ConfigError("n must be >= 1");
  const ManufacturedCase mc = case_by_name(cfg.case_name);
  const LevelSolution ls = solve_level(cfg, mc, p, n);
  const auto path = grid_path(cfg, p, n);
  write_file_atomic(path, solution_grid_csv(ls.solution, mc.u, resolution));
  return path;
}

inline constexpr const char* diagnostics_csv_header =
    "n,h,dofs,gamma_h,probe_r1,probe_r2,probe_r3,probe_samples,probe_skipped,"
    "conservation_residual_rel,coercivity_defect,seed";

struct DiagnosticsLevel {
  std::size_t n = 0;
  double h = 0.0;
  std::size_t dofs = 0;
  /// Absent when skipped (too many dofs) or failed; `gamma_status` says which.
  std::optional<double> gamma_h;
  std::string gamma_status;
  ProbeReport probes;
  double conservation_residual_rel = 0.0;
  double coercivity_defect = 0.0;
};

inline DiagnosticsLevel diagnose_level(const StudyConfig& cfg, const ManufacturedCase& mc, int p,
                                       std::size_t n) {
  DiagnosticsLevel d;
  const LevelSolution ls = solve_level(cfg, mc, p, n);
  const DGSystem& sys = ls.system;
  d.n = n;
  d.h = sys.mesh->h();
  d.dofs = sys.dofs.total();
  if (d.dofs > infsup_dense_dof_limit) {
    d.gamma_status = "skipped";
  } else {
    try {
      d.gamma_h = infsup_gamma(*sys.mesh, *sys.basis, sys.params, mc.K);
    } catch (const std::exception&) {
      d.gamma_status = "failed";
    }
  }
  d.probes = inequality_probes(*sys.mesh, *sys.basis, cfg.probe_samples, cfg.seed);

  const double fnorm =
      l2_norm(*sys.mesh, as_element_function(FieldFunction([&mc](const Vec2& x) {
                return PointValue{mc.f(x), Vec2::Zero()};
              })),
              make_volume_rule(sys.quadrature.data_points(p)));
  d.conservation_residual_rel =
      local_conservation_residuals(sys, ls.solution).cwiseAbs().maxCoeff() / fnorm;

  std::mt19937_64 rng(cfg.seed ^ (static_cast<std::uint64_t>(n) << 32));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(sys.dofs.total()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  d.coercivity_defect = coercivity_defect(sys, v);
  return d;
}

inline std::string diagnostics_csv(const std::vector<DiagnosticsLevel>& levels,
                                   std::uint64_t seed) {
  std::string s = std::string(diagnostics_csv_header) + "\n";
  for (const DiagnosticsLevel& d : levels) {
    s += std::to_string(d.n) + "," + format_real(d.h) + "," + std::to_string(d.dofs) + "," +
         (d.gamma_h ? format_real(*d.gamma_h) : d.gamma_status) + "," +
         format_real(d.probes.max_r1) + "," + format_real(d.probes.max_r2) + "," +
         format_real(d.probes.max_r3) + "," + std::to_string(d.probes.samples) + "," +
         std::to_string(d.probes.skipped) + "," + format_real(d.conservation_residual_rel) + "," +
         format_real(d.coercivity_defect) + "," + std::to_string(seed) + "\n";
  }
  return s;
}

inline std::filesystem::path diagnostics_path(const StudyConfig& cfg, int p) {
  return cfg.out_dir / ("diagnostics_" + cfg.case_name + "_p" + std::to_string(p) + ".csv");
}

inline std::vector<std::filesystem::path> run_diagnostics(const StudyConfig& cfg) {
  cfg.validate();
  const ManufacturedCase mc = case_by_name(cfg.case_name);
  std::vector<std::filesystem::path> written;
  try {
    for (int p : cfg.p_values) {
      std::vector<DiagnosticsLevel> levels;
      for (std::size_t n : cfg.levels) levels.push_back(diagnose_level(cfg, mc, p, n));
      const auto path = diagnostics_path(cfg, p);
      write_file_atomic(path, diagnostics_csv(levels, cfg.seed));
      written.push_back(path);
    }
  } catch (...) {
    for (const auto& f : written) std::filesystem::remove(f);
    throw;
  }
  return written;
}

}  // namespace fluxdg

#endif  // FLUXDG_STUDY_HPP
