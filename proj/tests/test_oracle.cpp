#include <gtest/gtest.h>

#include "fluxdg/system.hpp"
#include "support/direct_form.hpp"

namespace fluxdg {
namespace {

struct OracleCase {
  int p;
  bool variable_k;
};

class OracleEquivalence : public ::testing::TestWithParam<OracleCase> {};

TEST_P(OracleEquivalence, AssembledMatrixMatchesTermByTermForm) {
  const auto [p, variable_k] = GetParam();
  const MeshTopology mesh = build_uniform_quad_mesh(2);
  const BasisSet basis(p);
  const CoefficientField K = variable_k ? paper_case().K : CoefficientField::constant(1.0);
  FormParams prm;
  prm.p = p;
  prm.sigma = 0.7;
  const DGSystem sys = assemble(mesh, basis, K, nullptr, prm);

  testing::OracleParams op;
  op.sigma = prm.sigma;
  op.lambda = prm.lambda;
  op.zeta = prm.zeta;
  op.p = p;
  op.h = mesh.h();
  op.quad_points = p + 3;
  const testing::DirectForm direct(
      mesh, basis, [&K](const Vec2& x) { return K(0, x); }, op);
  const Eigen::MatrixXd expected = direct.matrix();
  const Eigen::MatrixXd actual = Eigen::MatrixXd(sys.matrix);
  ASSERT_EQ(actual.rows(), expected.rows());
  const double err = (actual - expected).cwiseAbs().maxCoeff();
  EXPECT_LE(err, 1e-12 * std::max(1.0, expected.cwiseAbs().maxCoeff())) << "max entry diff " << err;
}

INSTANTIATE_TEST_SUITE_P(FourElements, OracleEquivalence,
                         ::testing::Values(OracleCase{1, false}, OracleCase{1, true},
                                           OracleCase{2, false}, OracleCase{2, true}),
                         [](const auto& info) {
                           return "p" + std::to_string(info.param.p) +
                                  (info.param.variable_k ? "_Kxy" : "_K1");
                         });

TEST(Oracle, BottomBoundaryEdgeBlockP1) {
  // Single element, K = 1, p = 1. On y = 0 the modes are c, c*sqrt3*x, c*sqrt3*y
  // (c = 1/2, x, y the reference coordinates) and mu = (0, -1), so
  // K grad phi . mu = -(2/h) * d/dy. With h = 1 the edge term for trial b, test a
  // is -int v d_mu u + int u d_mu v over x in [0,1].
  const MeshTopology mesh = build_uniform_quad_mesh(1);
  const BasisSet basis(1);
  const Face& bottom = mesh.boundary_faces()[0];
  ASSERT_DOUBLE_EQ(bottom.normal.y(), -1.0);
  const LocalBlock blk =
      boundary_face_kernel(mesh, bottom, basis, make_edge_rule(4), CoefficientField::constant(1.0));

  // Hand-integrated on y_ref = -1: values (1/2, sqrt3/2 * xr, -sqrt3/2),
  // d_mu values (0, 0, -sqrt3) since d/dy_phys = 2 d/dy_ref and mu_y = -1.
  const double s3 = std::sqrt(3.0);
  auto value = [&](int m, double xr) {
    return m == 0 ? 0.5 : (m == 1 ? 0.5 * s3 * xr : -0.5 * s3);
  };
  auto dmu = [&](int m) { return m == 2 ? -s3 : 0.0; };
  const auto [gx, gw] = gauss_legendre(4);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double ref = 0.0;
      for (std::size_t q = 0; q < gx.size(); ++q) {
        const double w = 0.5 * gw[q];  // physical edge length 1
        ref += w * (-value(a, gx[q]) * dmu(b) + value(b, gx[q]) * dmu(a));
      }
      EXPECT_NEAR(blk.matrix(a, b), ref, 1e-14) << "a=" << a << " b=" << b;
    }
  }
}

}  // namespace
}  // namespace fluxdg
