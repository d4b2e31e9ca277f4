#ifndef FLUXDG_FORMS_HPP
#define FLUXDG_FORMS_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"

namespace fluxdg {

/// Stabilisation and norm parameters.
///
/// The interface term is weighted by sigma * h^lambda / p^zeta; the boundary
/// flux part of the energy norm by h^nu / p^theta.
struct FormParams {
  double sigma = 1.0;
  double lambda = 1.0;
  double zeta = 2.0;
  double nu = 1.0;
  double theta = 2.0;
  int p = 1;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw std::invalid_argument("FormParams: sigma must be > 0");
    }
    for (const auto& [name, v] : {std::pair{"lambda", lambda}, std::pair{"zeta", zeta},
                                  std::pair{"nu", nu}, std::pair{"theta", theta}}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("FormParams: ") + name + " must be >= 0");
      }
    }
    if (p < 1) throw std::invalid_argument("FormParams: p must be >= 1");
  }

  double stabilization_factor(double h) const {
    return sigma * std::pow(h, lambda) / std::pow(static_cast<double>(p), zeta);
  }
};

/// Diffusion coefficient K, evaluated per element so it may jump across faces.
struct CoefficientField {
  std::function<double(std::size_t, const Vec2&)> eval;
  std::string name;

  double operator()(std::size_t elem, const Vec2& x) const { return eval(elem, x); }

  /// Evaluates K and rejects non-positive or non-finite values. Traces on
  /// the boundary may pass `allow_zero`, since a coefficient such as K = xy
  /// vanishes on the coordinate axes.
  double checked(std::size_t elem, const Vec2& x, bool allow_zero = false) const {
    const double k = eval(elem, x);
    if (!std::isfinite(k) || k < 0.0 || (k == 0.0 && !allow_zero)) {
      throw std::domain_error("CoefficientField '" + name + "': K = " + std::to_string(k) +
                              " at (" + std::to_string(x.x()) + ", " + std::to_string(x.y()) +
                              ") in element " + std::to_string(elem));
    }
    return k;
  }

  static CoefficientField constant(double value) {
    return {[value](std::size_t, const Vec2&) { return value; }, "constant"};
  }
};

using ScalarFunction = std::function<double(const Vec2&)>;

struct LocalBlock {
  std::size_t row_elem = 0;
  std::size_t col_elem = 0;
  /// Entry (a, b) is the form applied to trial mode b and test mode a.
  Eigen::MatrixXd matrix;
};

/// The four element-pair blocks produced by one interior face.
struct FaceBlocks {
  LocalBlock hi_hi;
  LocalBlock hi_lo;
  LocalBlock lo_hi;
  LocalBlock lo_lo;

  FaceBlocks& operator+=(const FaceBlocks& o) {
    hi_hi.matrix += o.hi_hi.matrix;
    hi_lo.matrix += o.hi_lo.matrix;
    lo_hi.matrix += o.lo_hi.matrix;
    lo_lo.matrix += o.lo_lo.matrix;
    return *this;
  }
};

/// Element quadrature data in physical space.
struct VolumeTabulation {
  std::vector<Vec2> x;
  /// Reference weight times |det J|.
  Eigen::VectorXd weights;
  Eigen::MatrixXd values;
  Eigen::MatrixXd grad_x;
  Eigen::MatrixXd grad_y;
};

inline VolumeTabulation tabulate_volume(const Element& element, const BasisSet& basis,
                                        const VolumeRule& rule) {
  const BasisTable ref = basis.evaluate(std::span<const Vec2>(rule.points));
  const Mat2 jit = element.map.inverse_linear().transpose();
  const double det = std::abs(element.map.jacobian_determinant());
  VolumeTabulation t;
  const auto nq = static_cast<Eigen::Index>(rule.size());
  t.weights.resize(nq);
  t.values = ref.values;
  t.grad_x = jit(0, 0) * ref.grad_x + jit(0, 1) * ref.grad_y;
  t.grad_y = jit(1, 0) * ref.grad_x + jit(1, 1) * ref.grad_y;
  t.x.reserve(rule.size());
  for (Eigen::Index q = 0; q < nq; ++q) {
    t.x.push_back(element.map.to_physical(rule.points[static_cast<std::size_t>(q)]));
    t.weights(q) = rule.weights[static_cast<std::size_t>(q)] * det;
  }
  return t;
}

/// One side of a face: basis traces and normal fluxes K grad(phi) . n, with n
/// the face normal as stored (not the element's outward normal).
struct SideTrace {
  std::size_t elem = 0;
  Eigen::MatrixXd values;
  Eigen::MatrixXd flux;
};

inline SideTrace tabulate_side(const MeshTopology& mesh, std::size_t elem,
                               std::span<const Vec2> ref_points, std::span<const Vec2> x,
                               const Vec2& normal, const BasisSet& basis,
                               const CoefficientField& K) {
  const Element& e = mesh.element(elem);
  const BasisTable ref = basis.evaluate(ref_points);
  const Vec2 n_ref = e.map.inverse_linear() * normal;  // grad . n = grad_ref . (J^{-1} n)
  SideTrace s;
  s.elem = elem;
  s.values = ref.values;
  s.flux = n_ref.x() * ref.grad_x + n_ref.y() * ref.grad_y;
  for (Eigen::Index q = 0; q < s.flux.rows(); ++q) {
    s.flux.row(q) *= K.checked(elem, x[static_cast<std::size_t>(q)], true);
  }
  return s;
}

struct FaceTabulation {
  Eigen::VectorXd weights;
  SideTrace hi;
  std::optional<SideTrace> lo;
};

inline FaceTabulation tabulate_face(const MeshTopology& mesh, const Face& face,
                                    const BasisSet& basis, const EdgeRule& rule,
                                    const CoefficientField& K) {
  const std::vector<TracePoint> tps = face_trace_points(mesh, face, rule);
  std::vector<Vec2> x, ref_hi, ref_lo;
  FaceTabulation t;
  t.weights.resize(static_cast<Eigen::Index>(tps.size()));
  for (std::size_t k = 0; k < tps.size(); ++k) {
    x.push_back(tps[k].x);
    ref_hi.push_back(tps[k].ref_hi);
    if (tps[k].ref_lo) ref_lo.push_back(*tps[k].ref_lo);
    t.weights(static_cast<Eigen::Index>(k)) = tps[k].weight;
  }
  t.hi = tabulate_side(mesh, face.elem_hi, ref_hi, x, face.normal, basis, K);
  if (face.elem_lo) {
    t.lo = tabulate_side(mesh, *face.elem_lo, ref_lo, x, face.normal, basis, K);
  }
  return t;
}

/// Element block of  int_E (K grad u . grad v + u v) dx.
inline LocalBlock volume_kernel(const Element& element, const BasisSet& basis,
                                const VolumeRule& rule, const CoefficientField& K) {
  const VolumeTabulation t = tabulate_volume(element, basis, rule);
  Eigen::VectorXd kw(t.weights.size());
  for (Eigen::Index q = 0; q < kw.size(); ++q) {
    kw(q) = t.weights(q) * K.checked(element.index, t.x[static_cast<std::size_t>(q)]);
  }
  LocalBlock b{element.index, element.index, {}};
  b.matrix = t.grad_x.transpose() * kw.asDiagonal() * t.grad_x +
             t.grad_y.transpose() * kw.asDiagonal() * t.grad_y +
             t.values.transpose() * t.weights.asDiagonal() * t.values;
  return b;
}

namespace detail {

inline void require_interior(const Face& face) {
  if (!face.is_interior() || !face.elem_lo) {
    throw std::invalid_argument("interior face kernel called on a boundary face");
  }
  if (!(face.length > 0.0)) throw std::invalid_argument("degenerate (zero-length) face");
}

inline FaceBlocks empty_blocks(const Face& face, Eigen::Index dim) {
  const std::size_t hi = face.elem_hi;
  const std::size_t lo = *face.elem_lo;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(dim, dim);
  return {{hi, hi, z}, {hi, lo, z}, {lo, hi, z}, {lo, lo, z}};
}

inline LocalBlock& block_for(FaceBlocks& fb, int row_side, int col_side) {
  if (row_side == 0) return col_side == 0 ? fb.hi_hi : fb.hi_lo;
  return col_side == 0 ? fb.lo_hi : fb.lo_lo;
}

}  // namespace detail

/// First-order interface terms of one interior face.
///
/// Summing the per-element boundary integrals of both neighbours over this
/// face and the average/jump interface integrals leaves
///   -[v] <K grad u . n> + [u] <K grad v . n>,
/// with [w] = w_hi - w_lo and <w> = (w_hi + w_lo) / 2.
inline FaceBlocks interior_face_coupling_kernel(const FaceTabulation& t, const Face& face) {
  detail::require_interior(face);
  const auto dim = t.hi.values.cols();
  FaceBlocks fb = detail::empty_blocks(face, dim);
  const SideTrace* sides[2] = {&t.hi, &*t.lo};
  const double sign[2] = {1.0, -1.0};
  const auto& w = t.weights;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      const SideTrace& rs = *sides[r];
      const SideTrace& cs = *sides[c];
      // -[v]<Fu>: test jump sign of the row side, half the column flux.
      Eigen::MatrixXd m = -0.5 * sign[r] * (rs.values.transpose() * w.asDiagonal() * cs.flux);
      // +[u]<Fv>
      m += 0.5 * sign[c] * (rs.flux.transpose() * w.asDiagonal() * cs.values);
      detail::block_for(fb, r, c).matrix += m;
    }
  }
  return fb;
}

/// Flux-jump term  weight * int_F [K grad u . n][K grad v . n] ds.
inline FaceBlocks flux_jump_kernel(const FaceTabulation& t, const Face& face, double weight) {
  detail::require_interior(face);
  const auto dim = t.hi.values.cols();
  FaceBlocks fb = detail::empty_blocks(face, dim);
  const SideTrace* sides[2] = {&t.hi, &*t.lo};
  const double sign[2] = {1.0, -1.0};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      detail::block_for(fb, r, c).matrix +=
          weight * sign[r] * sign[c] *
          (sides[r]->flux.transpose() * t.weights.asDiagonal() * sides[c]->flux);
    }
  }
  return fb;
}

/// All bilinear-form contributions of one interior face.
inline FaceBlocks interior_face_kernel(const MeshTopology& mesh, const Face& face,
                                       const BasisSet& basis, const EdgeRule& rule,
                                       const CoefficientField& K, const FormParams& params) {
  detail::require_interior(face);
  const FaceTabulation t = tabulate_face(mesh, face, basis, rule, K);
  FaceBlocks fb = interior_face_coupling_kernel(t, face);
  fb += flux_jump_kernel(t, face, params.stabilization_factor(mesh.h()));
  return fb;
}

/// Weak Dirichlet block  -int v (K grad u . mu) ds + int u (K grad v . mu) ds.
inline LocalBlock boundary_face_kernel(const MeshTopology& mesh, const Face& face,
                                       const BasisSet& basis, const EdgeRule& rule,
                                       const CoefficientField& K) {
  if (face.is_interior()) {
    throw std::invalid_argument("boundary_face_kernel called on an interior face");
  }
  const FaceTabulation t = tabulate_face(mesh, face, basis, rule, K);
  const auto& w = t.weights;
  LocalBlock b{face.elem_hi, face.elem_hi, {}};
  b.matrix = -(t.hi.values.transpose() * w.asDiagonal() * t.hi.flux) +
             t.hi.flux.transpose() * w.asDiagonal() * t.hi.values;
  return b;
}

/// Element moments  int_E f phi_k dx.
inline Eigen::VectorXd load_kernel(const Element& element, const BasisSet& basis,
                                   const VolumeRule& rule, const ScalarFunction& f) {
  const VolumeTabulation t = tabulate_volume(element, basis, rule);
  Eigen::VectorXd fw(t.weights.size());
  for (Eigen::Index q = 0; q < fw.size(); ++q) {
    fw(q) = t.weights(q) * f(t.x[static_cast<std::size_t>(q)]);
  }
  return t.values.transpose() * fw;
}

}  // namespace fluxdg

#endif  // FLUXDG_FORMS_HPP
