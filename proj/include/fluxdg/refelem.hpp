#ifndef FLUXDG_REFELEM_HPP
#define FLUXDG_REFELEM_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace fluxdg {

/// Gauss-Legendre rule on the reference edge (Dim = 1) or the reference
/// square [-1,1]^2 (Dim = 2). `exact_degree` is per coordinate direction.
template <int Dim>
struct QuadratureRule {
  using Point = Eigen::Matrix<double, Dim, 1>;
  std::vector<Point> points;
  std::vector<double> weights;
  int exact_degree = 0;

  std::size_t size() const { return weights.size(); }
};

using EdgeRule = QuadratureRule<1>;
using VolumeRule = QuadratureRule<2>;

namespace detail {

/// Legendre P_n and P_n' at t by the three-term recurrence.
inline std::pair<double, double> legendre_with_derivative(int n, double t) {
  double p0 = 1.0;
  double p1 = t;
  if (n == 0) return {1.0, 0.0};
  for (int k = 2; k <= n; ++k) {
    const double pk = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = pk;
  }
  // P_n' = n (t P_n - P_{n-1}) / (t^2 - 1); only used away from +-1.
  const double dp = n * (t * p1 - p0) / (t * t - 1.0);
  return {p1, dp};
}

}  // namespace detail

/// Nodes and weights of the q-point Gauss-Legendre rule on [-1,1], ascending.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int q) {
  if (q < 1) throw std::invalid_argument("gauss_legendre: q must be >= 1");
  std::vector<double> x(static_cast<std::size_t>(q));
  std::vector<double> w(static_cast<std::size_t>(q));
  for (int i = 0; i < (q + 1) / 2; ++i) {
    double t = std::cos(std::numbers::pi * (i + 0.75) / (q + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = detail::legendre_with_derivative(q, t);
      const double dt = p / dp;
      t -= dt;
      if (std::abs(dt) < 1e-16) break;
    }
    const auto [p, dp] = detail::legendre_with_derivative(q, t);
    (void)p;
    const double wi = 2.0 / ((1.0 - t * t) * dp * dp);
    const auto lo = static_cast<std::size_t>(i);
    const auto hi = static_cast<std::size_t>(q - 1 - i);
    x[lo] = -t;
    x[hi] = t;
    w[lo] = wi;
    w[hi] = wi;
  }
  if (q % 2 == 1) x[static_cast<std::size_t>(q / 2)] = 0.0;
  return {x, w};
}

inline EdgeRule make_edge_rule(int q) {
  auto [x, w] = gauss_legendre(q);
  EdgeRule rule;
  rule.exact_degree = 2 * q - 1;
  rule.weights = std::move(w);
  rule.points.reserve(x.size());
  for (double xi : x) rule.points.emplace_back(xi);
  return rule;
}

/// Tensor Gauss-Legendre rule, x index fastest.
inline VolumeRule make_volume_rule(int q) {
  const auto [x, w] = gauss_legendre(q);
  VolumeRule rule;
  rule.exact_degree = 2 * q - 1;
  for (std::size_t j = 0; j < x.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      rule.points.emplace_back(x[i], x[j]);
      rule.weights.push_back(w[i] * w[j]);
    }
  }
  return rule;
}

/// Values, gradients and Hessians of every mode at a set of reference points.
/// Row = point, column = mode.
struct BasisTable {
  Eigen::MatrixXd values;
  Eigen::MatrixXd grad_x;
  Eigen::MatrixXd grad_y;
  Eigen::MatrixXd hess_xx;
  Eigen::MatrixXd hess_xy;
  Eigen::MatrixXd hess_yy;

  Eigen::Vector2d gradient(Eigen::Index point, Eigen::Index mode) const {
    return {grad_x(point, mode), grad_y(point, mode)};
  }
};

/// Orthonormal modal basis of total degree <= p on [-1,1]^2.
///
/// Mode (i, j) is L_i(x) L_j(y) with L_k the L2(-1,1)-normalised Legendre
/// polynomial. Modes are ordered by total degree, then by decreasing i, so
/// mode 0 is the constant 1/2.
class BasisSet {
public:
  static constexpr int max_degree = 8;

  explicit BasisSet(int p) : p_(p) {
    if (p < 1 || p > max_degree) {
      throw std::invalid_argument("BasisSet: degree " + std::to_string(p) + " outside [1, " +
                                  std::to_string(max_degree) + "]");
    }
    for (int d = 0; d <= p; ++d) {
      for (int i = d; i >= 0; --i) modes_.emplace_back(i, d - i);
    }
  }

  int degree() const { return p_; }
  std::size_t dimension() const { return modes_.size(); }
  const std::vector<std::pair<int, int>>& modes() const { return modes_; }

  /// Tabulates all modes. Points must lie in the reference square up to 1e-12.
  BasisTable evaluate(std::span<const Eigen::Vector2d> points) const {
    const auto np = static_cast<Eigen::Index>(points.size());
    const auto nm = static_cast<Eigen::Index>(dimension());
    BasisTable t;
    t.values.resize(np, nm);
    t.grad_x.resize(np, nm);
    t.grad_y.resize(np, nm);
    t.hess_xx.resize(np, nm);
    t.hess_xy.resize(np, nm);
    t.hess_yy.resize(np, nm);
    std::vector<double> lx(3 * (p_ + 1));
    std::vector<double> ly(3 * (p_ + 1));
    for (Eigen::Index q = 0; q < np; ++q) {
      const Eigen::Vector2d& r = points[static_cast<std::size_t>(q)];
      if (std::abs(r.x()) > 1.0 + 1e-12 || std::abs(r.y()) > 1.0 + 1e-12) {
        throw std::out_of_range("BasisSet::evaluate: point outside the reference element");
      }
      legendre_1d(r.x(), lx);
      legendre_1d(r.y(), ly);
      for (Eigen::Index m = 0; m < nm; ++m) {
        const auto [i, j] = modes_[static_cast<std::size_t>(m)];
        const double vx = lx[3 * i], dx = lx[3 * i + 1], ddx = lx[3 * i + 2];
        const double vy = ly[3 * j], dy = ly[3 * j + 1], ddy = ly[3 * j + 2];
        t.values(q, m) = vx * vy;
        t.grad_x(q, m) = dx * vy;
        t.grad_y(q, m) = vx * dy;
        t.hess_xx(q, m) = ddx * vy;
        t.hess_xy(q, m) = dx * dy;
        t.hess_yy(q, m) = vx * ddy;
      }
    }
    return t;
  }

  BasisTable evaluate(const Eigen::Vector2d& point) const {
    return evaluate(std::span<const Eigen::Vector2d>(&point, 1));
  }

private:
  // Normalised Legendre value, first and second derivative, interleaved.
  void legendre_1d(double t, std::vector<double>& out) const {
    double p0 = 1.0, d0 = 0.0, s0 = 0.0;
    double p1 = t, d1 = 1.0, s1 = 0.0;
    const auto store = [&out](int k, double p, double d, double s) {
      const double c = std::sqrt((2.0 * k + 1.0) / 2.0);
      out[3 * k] = c * p;
      out[3 * k + 1] = c * d;
      out[3 * k + 2] = c * s;
    };
    store(0, p0, d0, s0);
    if (p_ >= 1) store(1, p1, d1, s1);
    for (int k = 1; k < p_; ++k) {
      const double a = (2.0 * k + 1.0) / (k + 1.0);
      const double b = static_cast<double>(k) / (k + 1.0);
      const double p2 = a * t * p1 - b * p0;
      const double d2 = a * (p1 + t * d1) - b * d0;
      const double s2 = a * (2.0 * d1 + t * s1) - b * s0;
      store(k + 1, p2, d2, s2);
      p0 = p1, d0 = d1, s0 = s1;
      p1 = p2, d1 = d2, s1 = s2;
    }
  }

  int p_;
  std::vector<std::pair<int, int>> modes_;
};

inline BasisSet make_basis(int p) { return BasisSet(p); }

inline BasisTable eval_basis(const BasisSet& basis, std::span<const Eigen::Vector2d> points) {
  return basis.evaluate(points);
}

/// Default volume/edge rule size for degree p.
inline int default_quadrature_points(int p) { return p + 3; }

}  // namespace fluxdg

#endif  // FLUXDG_REFELEM_HPP
