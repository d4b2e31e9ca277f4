#ifndef FLUXDG_SYSTEM_HPP
#define FLUXDG_SYSTEM_HPP

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "fluxdg/forms.hpp"
#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"

namespace fluxdg {

/// Raised when the linear solve breaks down, stalls or misses its tolerance.
class SolverError : public std::runtime_error {
public:
  SolverError(const std::string& what, int iterations)
      : std::runtime_error(what), iterations_(iterations) {}
  int iterations() const { return iterations_; }

private:
  int iterations_;
};

namespace detail {

inline std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

}  // namespace detail

/// Element-major layout: element e owns [e * block_size, (e + 1) * block_size).
struct DofMap {
  std::size_t num_elements = 0;
  std::size_t block_size = 0;

  std::size_t offset(std::size_t elem) const { return elem * block_size; }
  std::size_t total() const { return num_elements * block_size; }
};

struct PointValue {
  double value = 0.0;
  Vec2 grad = Vec2::Zero();
};

using FieldFunction = std::function<PointValue(const Vec2&)>;

/// Quadrature sizes used by assembly and error integration.
struct QuadratureConfig {
  int points = 0;        ///< volume/edge Gauss points per direction; 0 -> p + 3
  int extra_points = 2;  ///< added for load vectors and error integrals

  int operator_points(int p) const { return points > 0 ? points : default_quadrature_points(p); }
  int data_points(int p) const { return operator_points(p) + extra_points; }
};

struct AssemblyOptions {
  QuadratureConfig quadrature;
  std::size_t max_dofs = 200000;
};

struct DGSystem {
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
  Eigen::VectorXd rhs;
  DofMap dofs;
  FormParams params;
  std::shared_ptr<const MeshTopology> mesh;
  std::shared_ptr<const BasisSet> basis;
  CoefficientField K;
  QuadratureConfig quadrature;
};

namespace detail {

inline void add_block(std::vector<Eigen::Triplet<double>>& trip, const DofMap& dofs,
                      const LocalBlock& b) {
  const std::size_t r0 = dofs.offset(b.row_elem);
  const std::size_t c0 = dofs.offset(b.col_elem);
  for (Eigen::Index j = 0; j < b.matrix.cols(); ++j) {
    for (Eigen::Index i = 0; i < b.matrix.rows(); ++i) {
      trip.emplace_back(static_cast<int>(r0 + static_cast<std::size_t>(i)),
                        static_cast<int>(c0 + static_cast<std::size_t>(j)), b.matrix(i, j));
    }
  }
}

}  // namespace detail

/// Assembles the DG operator and, when `f` is set, the load vector.
///
/// Contributions are accumulated in a fixed order (elements, interior faces,
/// boundary faces), so identical inputs give bitwise identical matrices.
inline DGSystem assemble(const MeshTopology& mesh, const BasisSet& basis,
                         const CoefficientField& K, const ScalarFunction& f,
                         const FormParams& params, const AssemblyOptions& options = {}) {
  params.validate();
  if (params.p != basis.degree()) {
    throw std::invalid_argument("assemble: FormParams.p = " + std::to_string(params.p) +
                                " does not match basis degree " +
                                std::to_string(basis.degree()));
  }
  DGSystem sys;
  sys.params = params;
  sys.K = K;
  sys.quadrature = options.quadrature;
  sys.dofs = {mesh.num_elements(), basis.dimension()};
  if (sys.dofs.total() > options.max_dofs) {
    throw std::length_error("assemble: " + std::to_string(sys.dofs.total()) +
                            " dofs exceeds the cap of " + std::to_string(options.max_dofs));
  }
  sys.mesh = std::make_shared<const MeshTopology>(mesh);
  sys.basis = std::make_shared<const BasisSet>(basis);

  const int q = options.quadrature.operator_points(basis.degree());
  const VolumeRule vol = make_volume_rule(q);
  const EdgeRule edge = make_edge_rule(q);
  const VolumeRule load_rule = make_volume_rule(options.quadrature.data_points(basis.degree()));

  const auto dim = basis.dimension();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(dim * dim * (mesh.num_elements() + 4 * mesh.interior_faces().size() +
                            mesh.boundary_faces().size()));
  for (const Element& e : mesh.elements()) {
    detail::add_block(trip, sys.dofs, volume_kernel(e, basis, vol, K));
  }
  for (const Face& face : mesh.interior_faces()) {
    const FaceBlocks fb = interior_face_kernel(mesh, face, basis, edge, K, params);
    for (const LocalBlock* b : {&fb.hi_hi, &fb.hi_lo, &fb.lo_hi, &fb.lo_lo}) {
      detail::add_block(trip, sys.dofs, *b);
    }
  }
  for (const Face& face : mesh.boundary_faces()) {
    detail::add_block(trip, sys.dofs, boundary_face_kernel(mesh, face, basis, edge, K));
  }
  const auto n = static_cast<Eigen::Index>(sys.dofs.total());
  sys.matrix.resize(n, n);
  sys.matrix.setFromTriplets(trip.begin(), trip.end());
  sys.matrix.makeCompressed();

  sys.rhs = Eigen::VectorXd::Zero(n);
  if (f) {
    for (const Element& e : mesh.elements()) {
      sys.rhs.segment(static_cast<Eigen::Index>(sys.dofs.offset(e.index)),
                      static_cast<Eigen::Index>(dim)) = load_kernel(e, basis, load_rule, f);
    }
  }
  for (const double* v = sys.matrix.valuePtr(); v != sys.matrix.valuePtr() + sys.matrix.nonZeros();
       ++v) {
    if (!std::isfinite(*v)) throw std::domain_error("assemble: non-finite matrix entry");
  }
  return sys;
}

/// Discrete function u_h: one coefficient block per element.
class SolutionField {
public:
  SolutionField(std::shared_ptr<const MeshTopology> mesh, std::shared_ptr<const BasisSet> basis,
                Eigen::VectorXd coefficients)
      : mesh_(std::move(mesh)), basis_(std::move(basis)), coeffs_(std::move(coefficients)),
        dofs_{mesh_->num_elements(), basis_->dimension()} {
    if (static_cast<std::size_t>(coeffs_.size()) != dofs_.total()) {
      throw std::invalid_argument("SolutionField: coefficient vector has the wrong length");
    }
  }

  const MeshTopology& mesh() const { return *mesh_; }
  const BasisSet& basis() const { return *basis_; }
  const Eigen::VectorXd& coefficients() const { return coeffs_; }
  const DofMap& dofs() const { return dofs_; }

  Eigen::VectorXd block(std::size_t elem) const {
    return coeffs_.segment(static_cast<Eigen::Index>(dofs_.offset(elem)),
                           static_cast<Eigen::Index>(dofs_.block_size));
  }

  /// Value and physical gradient of the restriction to `elem` at x.
  PointValue evaluate(std::size_t elem, const Vec2& x) const {
    const Element& e = mesh_->element(elem);
    const BasisTable t = basis_->evaluate(e.map.to_reference(x));
    const Eigen::VectorXd c = block(elem);
    const Vec2 ref_grad(t.grad_x.row(0).dot(c), t.grad_y.row(0).dot(c));
    return {t.values.row(0).dot(c), e.map.push_gradient(ref_grad)};
  }

  PointValue evaluate(const Vec2& x) const { return evaluate(mesh_->locate(x), x); }

private:
  std::shared_ptr<const MeshTopology> mesh_;
  std::shared_ptr<const BasisSet> basis_;
  Eigen::VectorXd coeffs_;
  DofMap dofs_;
};

enum class SolverStrategy { direct, iterative };

struct SolveOptions {
  SolverStrategy strategy = SolverStrategy::direct;
  double tol = 1e-12;
  int restart = 60;
  int max_iterations = 5000;
  int refinement_steps = 3;
};

/// Block-Jacobi preconditioner: dense LU of each element's diagonal block.
class BlockJacobiPreconditioner {
public:
  BlockJacobiPreconditioner(const Eigen::SparseMatrix<double, Eigen::RowMajor>& a,
                            const DofMap& dofs)
      : dofs_(dofs) {
    const auto bs = static_cast<Eigen::Index>(dofs.block_size);
    factors_.reserve(dofs.num_elements);
    for (std::size_t e = 0; e < dofs.num_elements; ++e) {
      const auto off = static_cast<Eigen::Index>(dofs.offset(e));
      Eigen::MatrixXd block = Eigen::MatrixXd::Zero(bs, bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(a, off + i); it; ++it) {
          if (it.col() >= off && it.col() < off + bs) block(i, it.col() - off) = it.value();
        }
      }
      factors_.emplace_back(block);
      if (!(std::abs(factors_.back().determinant()) > 0.0)) {
        throw SolverError("block-Jacobi: singular diagonal block for element " +
                              std::to_string(e),
                          0);
      }
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& r) const {
    Eigen::VectorXd z(r.size());
    const auto bs = static_cast<Eigen::Index>(dofs_.block_size);
    for (std::size_t e = 0; e < factors_.size(); ++e) {
      const auto off = static_cast<Eigen::Index>(dofs_.offset(e));
      z.segment(off, bs) = factors_[e].solve(r.segment(off, bs));
    }
    return z;
  }

private:
  DofMap dofs_;
  std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> factors_;
};

struct GmresResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Right-preconditioned restarted GMRES; converges on the true residual
/// ||b - A x|| / ||b|| <= tol.
inline GmresResult gmres(const Eigen::SparseMatrix<double, Eigen::RowMajor>& a,
                         const Eigen::VectorXd& b, const BlockJacobiPreconditioner& precond,
                         double tol, int restart, int max_iterations) {
  const double bnorm = b.norm();
  GmresResult res;
  res.x = Eigen::VectorXd::Zero(b.size());
  if (bnorm == 0.0) return res;
  const int m = std::max(1, restart);

  while (true) {
    Eigen::VectorXd r = b - a * res.x;
    double beta = r.norm();
    res.relative_residual = beta / bnorm;
    if (res.relative_residual <= tol) return res;
    if (res.iterations >= max_iterations) {
      throw SolverError("gmres: no convergence after " + std::to_string(res.iterations) +
                            " iterations (relative residual " +
                            detail::sci(res.relative_residual) + ")",
                        res.iterations);
    }

    std::vector<Eigen::VectorXd> v{r / beta};
    std::vector<Eigen::VectorXd> z;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + 1, m);
    Eigen::VectorXd cs = Eigen::VectorXd::Zero(m), sn = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m + 1);
    g(0) = beta;
    int k = 0;
    for (; k < m && res.iterations < max_iterations; ++k) {
      ++res.iterations;
      z.push_back(precond.apply(v[static_cast<std::size_t>(k)]));
      Eigen::VectorXd w = a * z.back();
      for (int i = 0; i <= k; ++i) {
        h(i, k) = w.dot(v[static_cast<std::size_t>(i)]);
        w -= h(i, k) * v[static_cast<std::size_t>(i)];
      }
      h(k + 1, k) = w.norm();
      for (int i = 0; i < k; ++i) {
        const double t = cs(i) * h(i, k) + sn(i) * h(i + 1, k);
        h(i + 1, k) = -sn(i) * h(i, k) + cs(i) * h(i + 1, k);
        h(i, k) = t;
      }
      const double denom = std::hypot(h(k, k), h(k + 1, k));
      if (denom == 0.0) {
        throw SolverError("gmres: breakdown (zero Hessenberg column)", res.iterations);
      }
      cs(k) = h(k, k) / denom;
      sn(k) = h(k + 1, k) / denom;
      const double hk1 = h(k + 1, k);
      h(k, k) = denom;
      h(k + 1, k) = 0.0;
      g(k + 1) = -sn(k) * g(k);
      g(k) = cs(k) * g(k);
      if (std::abs(g(k + 1)) <= tol * bnorm || hk1 <= 1e-300) {
        ++k;
        break;
      }
      v.push_back(w / hk1);
    }
    const Eigen::VectorXd y =
        h.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    for (int i = 0; i < k; ++i) res.x += y(i) * z[static_cast<std::size_t>(i)];
  }
}

/// Solves the assembled system and wraps the coefficients as u_h.
inline SolutionField solve(const DGSystem& system, const SolveOptions& options = {}) {
  const Eigen::VectorXd& b = system.rhs;
  const double bnorm = b.norm();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  if (bnorm > 0.0) {
    if (options.strategy == SolverStrategy::direct) {
      const Eigen::SparseMatrix<double> a = system.matrix;
      Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
      lu.analyzePattern(a);
      lu.factorize(a);
      if (lu.info() != Eigen::Success) {
        throw SolverError("direct solve: factorization failed (singular matrix?) " +
                              lu.lastErrorMessage(),
                          0);
      }
      x = lu.solve(b);
      double rel = (b - system.matrix * x).norm() / bnorm;
      for (int step = 0; step < options.refinement_steps && rel > options.tol; ++step) {
        x += lu.solve(b - system.matrix * x);
        rel = (b - system.matrix * x).norm() / bnorm;
      }
      if (!(rel <= options.tol)) {
        throw SolverError("direct solve: relative residual " + detail::sci(rel) +
                              " above tolerance",
                          options.refinement_steps);
      }
    } else {
      const BlockJacobiPreconditioner precond(system.matrix, system.dofs);
      x = gmres(system.matrix, b, precond, options.tol, options.restart, options.max_iterations).x;
    }
  }
  return SolutionField(system.mesh, system.basis, std::move(x));
}

/// A manufactured problem  -div(K grad u) + u = f  on the unit square, u = 0 on the boundary.
struct ManufacturedCase {
  std::string name;
  CoefficientField K;
  FieldFunction u;
  ScalarFunction f;
};

/// K = xy, u = xy(1-x)(1-y).
inline ManufacturedCase paper_case() {
  ManufacturedCase c;
  c.name = "paper";
  c.K = {[](std::size_t, const Vec2& x) { return x.x() * x.y(); }, "xy"};
  c.u = [](const Vec2& p) {
    const double x = p.x(), y = p.y();
    return PointValue{x * y * (1 - x) * (1 - y),
                      Vec2(y * (1 - y) * (1 - 2 * x), x * (1 - x) * (1 - 2 * y))};
  };
  c.f = [](const Vec2& p) {
    const double x = p.x(), y = p.y();
    return -(y * y * (1 - y) * (1 - 4 * x) + x * x * (1 - x) * (1 - 4 * y)) +
           x * y * (1 - x) * (1 - y);
  };
  return c;
}

/// K = xy + 0.1, u = sin(pi x) sin(pi y).
inline ManufacturedCase sine_case() {
  using std::numbers::pi;
  ManufacturedCase c;
  c.name = "sine";
  c.K = {[](std::size_t, const Vec2& x) { return x.x() * x.y() + 0.1; }, "xy+0.1"};
  c.u = [](const Vec2& p) {
    const double sx = std::sin(pi * p.x()), sy = std::sin(pi * p.y());
    const double cx = std::cos(pi * p.x()), cy = std::cos(pi * p.y());
    return PointValue{sx * sy, Vec2(pi * cx * sy, pi * sx * cy)};
  };
  c.f = [](const Vec2& p) {
    const double x = p.x(), y = p.y();
    const double sx = std::sin(pi * x), sy = std::sin(pi * y);
    const double cx = std::cos(pi * x), cy = std::cos(pi * y);
    const double k = x * y + 0.1;
    const double div = pi * y * cx * sy + pi * x * sx * cy - 2.0 * pi * pi * k * sx * sy;
    return -div + sx * sy;
  };
  return c;
}

inline ManufacturedCase case_by_name(const std::string& name) {
  if (name == "paper") return paper_case();
  if (name == "sine") return sine_case();
  throw std::invalid_argument("unknown case '" + name + "' (expected paper | sine)");
}

}  // namespace fluxdg

#endif  // FLUXDG_SYSTEM_HPP
