// Straightforward term-by-term evaluation of the DG bilinear form, used as an
// oracle for the fused face-by-face assembly. It rebuilds element edges and
// neighbour relations from vertex coordinates and never calls the kernels.
#ifndef FLUXDG_TESTS_DIRECT_FORM_HPP
#define FLUXDG_TESTS_DIRECT_FORM_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"

namespace fluxdg::testing {

struct OracleParams {
  double sigma = 1.0;
  double lambda = 0.0;
  double zeta = 0.0;
  int p = 1;
  double h = 1.0;
  int quad_points = 6;
};

using KFunction = std::function<double(const Eigen::Vector2d&)>;

/// Evaluates B(u, v) for discrete u, v given as global coefficient vectors.
class DirectForm {
public:
  DirectForm(const MeshTopology& mesh, const BasisSet& basis, KFunction K, OracleParams prm)
      : mesh_(mesh), basis_(basis), K_(std::move(K)), prm_(prm) {
    const auto [x, w] = gauss_legendre(prm.quad_points);
    gx_ = x;
    gw_ = w;
  }

  double operator()(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
    double total = 0.0;
    const double stab = prm_.sigma * std::pow(prm_.h, prm_.lambda) / std::pow(prm_.p, prm_.zeta);

    // sum_E int_E (K grad u . grad v + u v)
    for (const Element& e : mesh_.elements()) {
      const Eigen::Vector2d lo = e.vertices[0], hi = e.vertices[2];
      for (std::size_t i = 0; i < gx_.size(); ++i) {
        for (std::size_t j = 0; j < gx_.size(); ++j) {
          const Eigen::Vector2d x(lo.x() + 0.5 * (gx_[i] + 1) * (hi.x() - lo.x()),
                                  lo.y() + 0.5 * (gx_[j] + 1) * (hi.y() - lo.y()));
          const double w = gw_[i] * gw_[j] * 0.25 * (hi.x() - lo.x()) * (hi.y() - lo.y());
          const auto [uv, ug] = eval(u, e.index, x);
          const auto [vv, vg] = eval(v, e.index, x);
          total += w * (K_(x) * ug.dot(vg) + uv * vv);
        }
      }
    }

    // - sum_E int_dE (v K grad u . mu - K grad v . mu u)
    for (const Element& e : mesh_.elements()) {
      for (int k = 0; k < 4; ++k) {
        const Eigen::Vector2d a = e.vertices[static_cast<std::size_t>(k)];
        const Eigen::Vector2d b = e.vertices[static_cast<std::size_t>((k + 1) % 4)];
        const Eigen::Vector2d t = b - a;
        const Eigen::Vector2d mu = Eigen::Vector2d(t.y(), -t.x()).normalized();  // CCW outward
        for (std::size_t q = 0; q < gx_.size(); ++q) {
          const Eigen::Vector2d x = a + 0.5 * (gx_[q] + 1) * t;
          const double w = gw_[q] * 0.5 * t.norm();
          const auto [uv, ug] = eval(u, e.index, x);
          const auto [vv, vg] = eval(v, e.index, x);
          const double k_x = K_(x);
          total -= w * (vv * k_x * ug.dot(mu) - k_x * vg.dot(mu) * uv);
        }
      }
    }

    // Interface terms on shared edges, n outward from the larger index.
    for (const Element& ei : mesh_.elements()) {
      for (const Element& ej : mesh_.elements()) {
        if (ej.index >= ei.index) continue;
        const auto shared = shared_edge(ei, ej);
        if (!shared) continue;
        const auto [a, b] = *shared;
        const Eigen::Vector2d t = b - a;
        Eigen::Vector2d n(t.y(), -t.x());
        n.normalize();
        if (n.dot(ej.centroid() - ei.centroid()) < 0) n = -n;
        for (std::size_t q = 0; q < gx_.size(); ++q) {
          const Eigen::Vector2d x = a + 0.5 * (gx_[q] + 1) * t;
          const double w = gw_[q] * 0.5 * t.norm();
          const double k_x = K_(x);
          const auto [ui, ugi] = eval(u, ei.index, x);
          const auto [uj, ugj] = eval(u, ej.index, x);
          const auto [vi, vgi] = eval(v, ei.index, x);
          const auto [vj, vgj] = eval(v, ej.index, x);
          const double avg_v = 0.5 * (vi + vj);
          const double avg_u = 0.5 * (ui + uj);
          const double jump_fu = k_x * ugi.dot(n) - k_x * ugj.dot(n);
          const double jump_fv = k_x * vgi.dot(n) - k_x * vgj.dot(n);
          total += w * (avg_v * jump_fu - avg_u * jump_fv);
          total += w * stab * jump_fu * jump_fv;
        }
      }
    }
    return total;
  }

  /// Full matrix with entry (i, j) = B(e_j, e_i).
  Eigen::MatrixXd matrix() const {
    const auto n = static_cast<Eigen::Index>(mesh_.num_elements() * basis_.dimension());
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        a(i, j) = (*this)(Eigen::VectorXd::Unit(n, j), Eigen::VectorXd::Unit(n, i));
      }
    }
    return a;
  }

private:
  std::pair<double, Eigen::Vector2d> eval(const Eigen::VectorXd& c, std::size_t elem,
                                          const Eigen::Vector2d& x) const {
    const Element& e = mesh_.element(elem);
    const Eigen::Vector2d lo = e.vertices[0], hi = e.vertices[2];
    const Eigen::Vector2d sx = hi - lo;
    const Eigen::Vector2d r(2 * (x.x() - lo.x()) / sx.x() - 1, 2 * (x.y() - lo.y()) / sx.y() - 1);
    const BasisTable t = basis_.evaluate(r);
    const auto dim = static_cast<Eigen::Index>(basis_.dimension());
    const Eigen::VectorXd ce = c.segment(static_cast<Eigen::Index>(elem) * dim, dim);
    return {t.values.row(0).dot(ce),
            Eigen::Vector2d(2 / sx.x() * t.grad_x.row(0).dot(ce), 2 / sx.y() * t.grad_y.row(0).dot(ce))};
  }

  static std::optional<std::pair<Eigen::Vector2d, Eigen::Vector2d>> shared_edge(const Element& a,
                                                                                const Element& b) {
    std::vector<Eigen::Vector2d> common;
    for (const auto& va : a.vertices) {
      for (const auto& vb : b.vertices) {
        if ((va - vb).norm() < 1e-13) common.push_back(va);
      }
    }
    if (common.size() != 2) return std::nullopt;
    return std::pair{common[0], common[1]};
  }

  const MeshTopology& mesh_;
  const BasisSet& basis_;
  KFunction K_;
  OracleParams prm_;
  std::vector<double> gx_, gw_;
};

}  // namespace fluxdg::testing

#endif  // FLUXDG_TESTS_DIRECT_FORM_HPP
