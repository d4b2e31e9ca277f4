#ifndef FLUXDG_MESH_HPP
#define FLUXDG_MESH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fluxdg/refelem.hpp"

namespace fluxdg {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Affine map x = translation + linear * x_hat from the reference square [-1,1]^2.
class AffineMap {
public:
  AffineMap() = default;
  AffineMap(const Vec2& translation, const Mat2& linear)
      : translation_(translation), linear_(linear), det_(linear.determinant()) {
    if (!(std::abs(det_) > 0.0)) {
      throw std::invalid_argument("AffineMap: singular linear part");
    }
    inverse_ = linear_.inverse();
  }

  Vec2 to_physical(const Vec2& ref) const { return translation_ + linear_ * ref; }
  Vec2 to_reference(const Vec2& x) const { return inverse_ * (x - translation_); }

  /// Maps a reference gradient to a physical gradient (J^{-T} g).
  Vec2 push_gradient(const Vec2& ref_grad) const { return inverse_.transpose() * ref_grad; }

  const Vec2& translation() const { return translation_; }
  const Mat2& linear() const { return linear_; }
  const Mat2& inverse_linear() const { return inverse_; }
  double jacobian_determinant() const { return det_; }

private:
  Vec2 translation_ = Vec2::Zero();
  Mat2 linear_ = Mat2::Identity();
  Mat2 inverse_ = Mat2::Identity();
  double det_ = 1.0;
};

struct Element {
  std::size_t index = 0;
  /// Counter-clockwise from the bottom-left corner.
  std::array<Vec2, 4> vertices;
  AffineMap map;
  double diameter = 0.0;

  Vec2 centroid() const { return map.to_physical(Vec2::Zero()); }
  double area() const { return 4.0 * std::abs(map.jacobian_determinant()); }

  bool contains(const Vec2& x, double tol = 1e-12) const {
    const Vec2 r = map.to_reference(x);
    return std::abs(r.x()) <= 1.0 + tol && std::abs(r.y()) <= 1.0 + tol;
  }
};

enum class FaceKind { interior, boundary };

/// An edge of the partition.
///
/// Interior faces carry the element with the larger index in `elem_hi` and
/// the normal points outward from it. Boundary faces carry their single
/// element in `elem_hi` and an outward normal with respect to the domain.
struct Face {
  FaceKind kind = FaceKind::boundary;
  std::size_t elem_hi = 0;
  std::optional<std::size_t> elem_lo;
  Vec2 normal = Vec2::Zero();
  double length = 0.0;
  std::array<Vec2, 2> endpoints;

  bool is_interior() const { return kind == FaceKind::interior; }
  Vec2 point_at(double t) const {
    return 0.5 * (endpoints[0] + endpoints[1]) + 0.5 * t * (endpoints[1] - endpoints[0]);
  }
};

/// Uniform axis-aligned partition of the unit square, elements numbered
/// row-major from the bottom-left.
class MeshTopology {
public:
  MeshTopology() = default;

  std::size_t n_per_side() const { return n_; }
  /// Element side length 1/n.
  double h() const { return h_; }
  /// Largest element diameter.
  double max_diameter() const { return max_diameter_; }

  const std::vector<Element>& elements() const { return elements_; }
  const std::vector<Face>& interior_faces() const { return interior_; }
  const std::vector<Face>& boundary_faces() const { return boundary_; }
  const Element& element(std::size_t i) const { return elements_.at(i); }
  std::size_t num_elements() const { return elements_.size(); }

  /// Index of the element whose closure contains x; points on shared lines
  /// resolve to the element with the larger coordinate cell index, clamped to
  /// the last cell.
  std::size_t locate(const Vec2& x) const {
    if (!(x.x() >= -1e-12 && x.x() <= 1.0 + 1e-12 && x.y() >= -1e-12 && x.y() <= 1.0 + 1e-12)) {
      throw std::out_of_range("MeshTopology::locate: point outside the unit square");
    }
    const auto cell = [this](double c) {
      const auto k = static_cast<long>(std::floor(c * static_cast<double>(n_)));
      return static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(n_) - 1));
    };
    return cell(x.y()) * n_ + cell(x.x());
  }

  friend MeshTopology build_uniform_quad_mesh(std::size_t n_per_side);

private:
  std::size_t n_ = 0;
  double h_ = 0.0;
  double max_diameter_ = 0.0;
  std::vector<Element> elements_;
  std::vector<Face> interior_;
  std::vector<Face> boundary_;
};

inline MeshTopology build_uniform_quad_mesh(std::size_t n_per_side) {
  if (n_per_side == 0) {
    throw std::invalid_argument("build_uniform_quad_mesh: n_per_side must be >= 1");
  }
  const std::size_t n = n_per_side;
  const double h = 1.0 / static_cast<double>(n);
  const auto node = [h](std::size_t i, std::size_t j) {
    return Vec2(static_cast<double>(i) * h, static_cast<double>(j) * h);
  };
  const auto id = [n](std::size_t ix, std::size_t iy) { return iy * n + ix; };

  MeshTopology mesh;
  mesh.n_ = n;
  mesh.h_ = h;
  mesh.elements_.reserve(n * n);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      Element e;
      e.index = id(ix, iy);
      e.vertices = {node(ix, iy), node(ix + 1, iy), node(ix + 1, iy + 1), node(ix, iy + 1)};
      const Vec2 center = 0.5 * (e.vertices[0] + e.vertices[2]);
      e.map = AffineMap(center, 0.5 * h * Mat2::Identity());
      e.diameter = (e.vertices[2] - e.vertices[0]).norm();
      mesh.max_diameter_ = std::max(mesh.max_diameter_, e.diameter);
      mesh.elements_.push_back(e);
    }
  }

  const auto make_face = [h](FaceKind kind, std::size_t hi, std::optional<std::size_t> lo,
                             const Vec2& normal, const Vec2& a, const Vec2& b) {
    Face f;
    f.kind = kind;
    f.elem_hi = hi;
    f.elem_lo = lo;
    f.normal = normal;
    f.length = h;
    f.endpoints = {a, b};
    return f;
  };

  // Vertical interior faces: right neighbour has the larger index, so the
  // normal points in -x. Horizontal: upper neighbour is larger, normal -y.
  mesh.interior_.reserve(2 * n * (n - 1));
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 1; ix < n; ++ix) {
      mesh.interior_.push_back(make_face(FaceKind::interior, id(ix, iy), id(ix - 1, iy),
                                         Vec2(-1.0, 0.0), node(ix, iy), node(ix, iy + 1)));
    }
  }
  for (std::size_t iy = 1; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      mesh.interior_.push_back(make_face(FaceKind::interior, id(ix, iy), id(ix, iy - 1),
                                         Vec2(0.0, -1.0), node(ix, iy), node(ix + 1, iy)));
    }
  }

  mesh.boundary_.reserve(4 * n);
  for (std::size_t ix = 0; ix < n; ++ix) {
    mesh.boundary_.push_back(make_face(FaceKind::boundary, id(ix, 0), std::nullopt,
                                       Vec2(0.0, -1.0), node(ix, 0), node(ix + 1, 0)));
  }
  for (std::size_t iy = 0; iy < n; ++iy) {
    mesh.boundary_.push_back(make_face(FaceKind::boundary, id(n - 1, iy), std::nullopt,
                                       Vec2(1.0, 0.0), node(n, iy), node(n, iy + 1)));
  }
  for (std::size_t ix = 0; ix < n; ++ix) {
    mesh.boundary_.push_back(make_face(FaceKind::boundary, id(ix, n - 1), std::nullopt,
                                       Vec2(0.0, 1.0), node(ix, n), node(ix + 1, n)));
  }
  for (std::size_t iy = 0; iy < n; ++iy) {
    mesh.boundary_.push_back(make_face(FaceKind::boundary, id(0, iy), std::nullopt,
                                       Vec2(-1.0, 0.0), node(0, iy), node(0, iy + 1)));
  }
  return mesh;
}

/// One edge quadrature point seen from both adjacent elements.
struct TracePoint {
  Vec2 x;
  /// Reference weight times the edge Jacobian (length / 2).
  double weight = 0.0;
  Vec2 ref_hi;
  std::optional<Vec2> ref_lo;
};

/// Pairs edge quadrature points with reference coordinates in each adjacent
/// element. The k-th point is the same physical point seen from both sides.
inline std::vector<TracePoint> face_trace_points(const MeshTopology& mesh, const Face& face,
                                                 const EdgeRule& rule) {
  if (!(face.length > 0.0)) {
    throw std::invalid_argument("face_trace_points: degenerate face");
  }
  const auto on_boundary_of = [&](std::size_t elem) {
    if (elem >= mesh.num_elements()) {
      throw std::invalid_argument("face_trace_points: face references element " +
                                  std::to_string(elem) + " outside the mesh");
    }
    const Element& e = mesh.element(elem);
    for (const Vec2& p : face.endpoints) {
      const Vec2 r = e.map.to_reference(p);
      const bool on_edge = (std::abs(std::abs(r.x()) - 1.0) < 1e-12 && std::abs(r.y()) <= 1.0 + 1e-12) ||
                           (std::abs(std::abs(r.y()) - 1.0) < 1e-12 && std::abs(r.x()) <= 1.0 + 1e-12);
      if (!on_edge) {
        throw std::invalid_argument("face_trace_points: face does not lie on element " +
                                    std::to_string(elem));
      }
    }
    return &e;
  };
  const Element* hi = on_boundary_of(face.elem_hi);
  const Element* lo = face.elem_lo ? on_boundary_of(*face.elem_lo) : nullptr;
  if (face.is_interior() && lo == nullptr) {
    throw std::invalid_argument("face_trace_points: interior face without a second element");
  }

  std::vector<TracePoint> out;
  out.reserve(rule.size());
  for (std::size_t k = 0; k < rule.size(); ++k) {
    TracePoint tp;
    tp.x = face.point_at(rule.points[k](0));
    tp.weight = rule.weights[k] * 0.5 * face.length;
    tp.ref_hi = hi->map.to_reference(tp.x);
    if (lo != nullptr) {
      tp.ref_lo = lo->map.to_reference(tp.x);
    }
    out.push_back(tp);
  }
  return out;
}

}  // namespace fluxdg

#endif  // FLUXDG_MESH_HPP
