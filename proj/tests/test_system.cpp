#include <cstring>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "fluxdg/analysis.hpp"
#include "fluxdg/system.hpp"

namespace fluxdg {
namespace {

FormParams params_for(int p) {
  FormParams prm;
  prm.p = p;
  return prm;
}

DGSystem assemble_case(const ManufacturedCase& mc, std::size_t n, int p) {
  return assemble(build_uniform_quad_mesh(n), BasisSet(p), mc.K, mc.f, params_for(p));
}

TEST(Assemble, SingleElementIsVolumePlusBoundary) {
  const MeshTopology m = build_uniform_quad_mesh(1);
  const BasisSet basis(2);
  const CoefficientField K = paper_case().K;
  const DGSystem sys = assemble(m, basis, K, nullptr, params_for(2));
  Eigen::MatrixXd expected = volume_kernel(m.element(0), basis, make_volume_rule(5), K).matrix;
  for (const Face& f : m.boundary_faces()) {
    expected += boundary_face_kernel(m, f, basis, make_edge_rule(5), K).matrix;
  }
  EXPECT_LE((Eigen::MatrixXd(sys.matrix) - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(sys.rhs.norm(), 0.0);
}

TEST(Assemble, BlockSparsityFollowsFaceNeighbours) {
  const DGSystem sys = assemble_case(paper_case(), 4, 2);
  const auto bs = static_cast<Eigen::Index>(sys.dofs.block_size);
  for (Eigen::Index row = 0; row < sys.matrix.rows(); ++row) {
    std::set<Eigen::Index> blocks;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(sys.matrix, row); it; ++it) {
      blocks.insert(it.col() / bs);
    }
    EXPECT_LE(blocks.size(), 5u);
    const Eigen::Index e = row / bs, ix = e % 4, iy = e / 4;
    for (Eigen::Index b : blocks) {
      const Eigen::Index bx = b % 4, by = b / 4;
      EXPECT_LE(std::abs(bx - ix) + std::abs(by - iy), 1) << "row " << row << " block " << b;
    }
  }
}

TEST(Assemble, BitwiseDeterministic) {
  const DGSystem a = assemble_case(sine_case(), 4, 3);
  const DGSystem b = assemble_case(sine_case(), 4, 3);
  ASSERT_EQ(a.matrix.nonZeros(), b.matrix.nonZeros());
  EXPECT_EQ(std::memcmp(a.matrix.valuePtr(), b.matrix.valuePtr(),
                        sizeof(double) * static_cast<std::size_t>(a.matrix.nonZeros())),
            0);
  EXPECT_EQ(std::memcmp(a.rhs.data(), b.rhs.data(), sizeof(double) * a.rhs.size()), 0);
}

TEST(Assemble, RejectsMismatchedDegreeAndDofCap) {
  const MeshTopology m = build_uniform_quad_mesh(4);
  EXPECT_THROW(assemble(m, BasisSet(2), paper_case().K, nullptr, params_for(3)),
               std::invalid_argument);
  AssemblyOptions small;
  small.max_dofs = 95;
  EXPECT_THROW(assemble(m, BasisSet(2), paper_case().K, nullptr, params_for(2), small),
               std::length_error);
}

TEST(Solve, ZeroLoadGivesZeroSolution) {
  const MeshTopology m = build_uniform_quad_mesh(3);
  const DGSystem sys = assemble(m, BasisSet(2), paper_case().K, nullptr, params_for(2));
  EXPECT_EQ(solve(sys).coefficients().norm(), 0.0);
}

TEST(Solve, QuarticCaseIsReproducedExactlyAtDegreeFour) {
  const ManufacturedCase mc = paper_case();
  const DGSystem sys = assemble_case(mc, 4, 4);
  const SolutionField uh = solve(sys);
  const VolumeRule rule = make_volume_rule(9);
  EXPECT_LE(l2_error(uh, mc.u, rule), 1e-9);
  EXPECT_LE(broken_h1_error(uh, mc.u, rule), 1e-8);
}

TEST(Solve, DirectResidualBelowTolerance) {
  const DGSystem sys = assemble_case(sine_case(), 8, 2);
  const SolutionField uh = solve(sys);
  EXPECT_LE((sys.rhs - sys.matrix * uh.coefficients()).norm() / sys.rhs.norm(), 1e-12);
}

TEST(Solve, IterativeAgreesWithDirect) {
  const DGSystem sys = assemble_case(sine_case(), 8, 2);
  const SolutionField direct = solve(sys);
  SolveOptions opts;
  opts.strategy = SolverStrategy::iterative;
  opts.tol = 1e-12;
  const SolutionField it = solve(sys, opts);
  EXPECT_LE((direct.coefficients() - it.coefficients()).norm() / direct.coefficients().norm(),
            1e-9);
}

TEST(Solve, IterativeFailureReportsIterations) {
  const DGSystem sys = assemble_case(sine_case(), 4, 2);
  SolveOptions opts;
  opts.strategy = SolverStrategy::iterative;
  opts.tol = 1e-300;
  opts.max_iterations = 40;
  opts.restart = 10;
  try {
    solve(sys, opts);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.iterations(), 0);
    EXPECT_LE(e.iterations(), 40);
  }
}

TEST(Solve, SolutionFieldChecksLength) {
  auto mesh = std::make_shared<const MeshTopology>(build_uniform_quad_mesh(2));
  auto basis = std::make_shared<const BasisSet>(1);
  EXPECT_THROW(SolutionField(mesh, basis, Eigen::VectorXd::Zero(11)), std::invalid_argument);
  EXPECT_NO_THROW(SolutionField(mesh, basis, Eigen::VectorXd::Zero(12)));
}

// Finite-difference evaluation of -div(K grad u) + u from the case's own u and K.
double fd_source(const ManufacturedCase& mc, const Vec2& x) {
  const double h = 1e-4;
  const auto flux = [&](const Vec2& y, int dir) { return mc.K(0, y) * mc.u(y).grad(dir); };
  const Vec2 ex(h, 0), ey(0, h);
  const double div = (flux(x + ex, 0) - flux(x - ex, 0)) / (2 * h) +
                     (flux(x + ey, 1) - flux(x - ey, 1)) / (2 * h);
  return -div + mc.u(x).value;
}

TEST(Cases, KnownValuesAndBoundaryZeros) {
  EXPECT_NEAR(paper_case().u(Vec2(0.5, 0.5)).value, 0.0625, 1e-16);
  EXPECT_NEAR(sine_case().u(Vec2(0.5, 0.5)).value, 1.0, 1e-16);
  for (const ManufacturedCase& mc : {paper_case(), sine_case()}) {
    for (double t : {0.0, 0.3, 0.71, 1.0}) {
      EXPECT_NEAR(mc.u(Vec2(t, 0.0)).value, 0.0, 1e-15);
      EXPECT_NEAR(mc.u(Vec2(t, 1.0)).value, 0.0, 1e-15);
      EXPECT_NEAR(mc.u(Vec2(0.0, t)).value, 0.0, 1e-15);
      EXPECT_NEAR(mc.u(Vec2(1.0, t)).value, 0.0, 1e-15);
    }
  }
  EXPECT_THROW(case_by_name("circle"), std::invalid_argument);
}

TEST(Cases, SourceMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(0.01, 0.99);
  for (const ManufacturedCase& mc : {paper_case(), sine_case()}) {
    EXPECT_NEAR(mc.f(Vec2(0.5, 0.5)), fd_source(mc, Vec2(0.5, 0.5)), 1e-6) << mc.name;
    for (int i = 0; i < 100; ++i) {
      const Vec2 x(ud(rng), ud(rng));
      EXPECT_NEAR(mc.f(x), fd_source(mc, x), 1e-6) << mc.name << " at " << x.transpose();
    }
  }
}

TEST(Cases, GradientMatchesFiniteDifferences) {
  const double h = 1e-6;
  for (const ManufacturedCase& mc : {paper_case(), sine_case()}) {
    const Vec2 x(0.37, 0.81);
    const Vec2 g = mc.u(x).grad;
    EXPECT_NEAR(g.x(), (mc.u(x + Vec2(h, 0)).value - mc.u(x - Vec2(h, 0)).value) / (2 * h), 1e-8);
    EXPECT_NEAR(g.y(), (mc.u(x + Vec2(0, h)).value - mc.u(x - Vec2(0, h)).value) / (2 * h), 1e-8);
  }
}

TEST(Solve, LocallyConservative) {
  // Testing with the element indicator gives B(u_h, 1_E) = (f, 1_E) per element.
  const DGSystem sys = assemble_case(paper_case(), 8, 2);
  const SolutionField uh = solve(sys);
  const Eigen::VectorXd r = local_conservation_residuals(sys, uh);
  EXPECT_EQ(r.size(), 64);
  EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Solve, GalerkinOrthogonality) {
  for (const ManufacturedCase& mc : {paper_case(), sine_case()}) {
    const DGSystem sys = assemble_case(mc, 8, 2);
    const SolutionField uh = solve(sys);
    EXPECT_LE(galerkin_orthogonality_residual(sys, uh, mc.u), 1e-9) << mc.name;
  }
}

TEST(Solve, ElementwiseEvaluationUsesOwnBlock) {
  const ManufacturedCase mc = paper_case();
  const DGSystem sys = assemble_case(mc, 4, 4);
  const SolutionField uh = solve(sys);
  const Vec2 x(0.25, 0.4);  // on the face between elements 4 and 5
  EXPECT_NEAR(uh.evaluate(4, x).value, mc.u(x).value, 1e-10);
  EXPECT_NEAR(uh.evaluate(5, x).value, mc.u(x).value, 1e-10);
  EXPECT_NEAR(uh.evaluate(Vec2(0.5, 0.5)).value, 0.0625, 1e-10);
}

}  // namespace
}  // namespace fluxdg
