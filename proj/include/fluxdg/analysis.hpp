#ifndef FLUXDG_ANALYSIS_HPP
#define FLUXDG_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fluxdg/forms.hpp"
#include "fluxdg/mesh.hpp"
#include "fluxdg/refelem.hpp"
#include "fluxdg/system.hpp"

namespace fluxdg {

/// A function known element by element (may be discontinuous across faces).
using ElementFunction = std::function<PointValue(std::size_t, const Vec2&)>;

inline ElementFunction as_element_function(const SolutionField& u_h) {
  return [&u_h](std::size_t e, const Vec2& x) { return u_h.evaluate(e, x); };
}

inline ElementFunction as_element_function(const FieldFunction& u) {
  return [u](std::size_t, const Vec2& x) { return u(x); };
}

/// u_h - u, elementwise.
inline ElementFunction error_function(const SolutionField& u_h, const FieldFunction& u) {
  return [&u_h, u](std::size_t e, const Vec2& x) {
    const PointValue a = u_h.evaluate(e, x);
    const PointValue b = u(x);
    return PointValue{a.value - b.value, a.grad - b.grad};
  };
}

namespace detail {

template <typename Integrand>
double integrate_elements(const MeshTopology& mesh, const VolumeRule& rule, Integrand&& g) {
  double total = 0.0;
  for (const Element& e : mesh.elements()) {
    const double det = std::abs(e.map.jacobian_determinant());
    for (std::size_t q = 0; q < rule.size(); ++q) {
      total += rule.weights[q] * det * g(e.index, e.map.to_physical(rule.points[q]));
    }
  }
  return total;
}

}  // namespace detail

inline double l2_norm(const MeshTopology& mesh, const ElementFunction& v, const VolumeRule& rule) {
  return std::sqrt(detail::integrate_elements(mesh, rule, [&](std::size_t e, const Vec2& x) {
    const double val = v(e, x).value;
    return val * val;
  }));
}

/// Broken H1 norm: sqrt(sum_E ||v||^2_L2(E) + ||grad v||^2_L2(E)); no face terms.
inline double broken_h1_norm(const MeshTopology& mesh, const ElementFunction& v,
                             const VolumeRule& rule) {
  return std::sqrt(detail::integrate_elements(mesh, rule, [&](std::size_t e, const Vec2& x) {
    const PointValue pv = v(e, x);
    return pv.value * pv.value + pv.grad.squaredNorm();
  }));
}

inline double l2_error(const SolutionField& u_h, const FieldFunction& u_exact,
                       const VolumeRule& rule) {
  return l2_norm(u_h.mesh(), error_function(u_h, u_exact), rule);
}

inline double broken_h1_error(const SolutionField& u_h, const FieldFunction& u_exact,
                              const VolumeRule& rule) {
  return broken_h1_norm(u_h.mesh(), error_function(u_h, u_exact), rule);
}

/// Weights of the mesh-dependent energy norm.
struct NormWeights {
  double nu = 1.0;
  double theta = 2.0;
  double lambda = 1.0;
  double zeta = 2.0;
  double sigma = 1.0;
  int p = 1;
  double h = 1.0;

  static NormWeights from(const FormParams& params, const MeshTopology& mesh) {
    return {params.nu, params.theta, params.lambda, params.zeta, params.sigma, params.p, mesh.h()};
  }

  /// Weight of ||K grad v . mu||^2_{L2(dE)}: (h_E^nu / p^theta) * h_E, where the
  /// trailing h_E stands in for the H^{-1/2}(dE) dual norm.
  double boundary_flux_weight(double h_e) const {
    return std::pow(h_e, nu) / std::pow(static_cast<double>(p), theta) * h_e;
  }
  double flux_jump_weight() const {
    return sigma * std::pow(h, lambda) / std::pow(static_cast<double>(p), zeta);
  }
};

/// The three groups of the surrogate energy norm, each already squared and weighted.
struct TripleNormParts {
  double volume = 0.0;         ///< sum_E ||K^{1/2} grad v||^2 + ||v||^2
  double boundary_flux = 0.0;  ///< sum_E w_E ||K grad v . mu||^2_{L2(dE)}
  double flux_jump = 0.0;      ///< sigma h^lambda / p^zeta ||[K grad v . n]||^2_{L2(Gamma_int)}

  double squared() const { return volume + boundary_flux + flux_jump; }
  double value() const { return std::sqrt(squared()); }
};

inline TripleNormParts triple_norm_parts(const MeshTopology& mesh, const ElementFunction& v,
                                         const CoefficientField& K, const NormWeights& weights,
                                         const VolumeRule& vol, const EdgeRule& edge) {
  TripleNormParts parts;
  parts.volume = detail::integrate_elements(mesh, vol, [&](std::size_t e, const Vec2& x) {
    const PointValue pv = v(e, x);
    return K.checked(e, x) * pv.grad.squaredNorm() + pv.value * pv.value;
  });
  const double jump_w = weights.flux_jump_weight();
  const auto flux = [&](std::size_t e, const Vec2& x, const Vec2& n) {
    return K.checked(e, x, true) * v(e, x).grad.dot(n);
  };
  for (const Face& face : mesh.interior_faces()) {
    const std::vector<TracePoint> tps = face_trace_points(mesh, face, edge);
    const double w_hi = weights.boundary_flux_weight(mesh.element(face.elem_hi).diameter);
    const double w_lo = weights.boundary_flux_weight(mesh.element(*face.elem_lo).diameter);
    for (const TracePoint& tp : tps) {
      const double f_hi = flux(face.elem_hi, tp.x, face.normal);
      const double f_lo = flux(*face.elem_lo, tp.x, face.normal);
      parts.boundary_flux += tp.weight * (w_hi * f_hi * f_hi + w_lo * f_lo * f_lo);
      parts.flux_jump += tp.weight * jump_w * (f_hi - f_lo) * (f_hi - f_lo);
    }
  }
  for (const Face& face : mesh.boundary_faces()) {
    const double w = weights.boundary_flux_weight(mesh.element(face.elem_hi).diameter);
    for (const TracePoint& tp : face_trace_points(mesh, face, edge)) {
      const double f = flux(face.elem_hi, tp.x, face.normal);
      parts.boundary_flux += tp.weight * w * f * f;
    }
  }
  return parts;
}

/// Computable stand-in for the energy norm |||v|||.
inline double triple_norm_surrogate(const MeshTopology& mesh, const ElementFunction& v,
                                    const CoefficientField& K, const NormWeights& weights,
                                    const VolumeRule& vol, const EdgeRule& edge) {
  return triple_norm_parts(mesh, v, K, weights, vol, edge).value();
}

/// Gram matrix of the surrogate norm in the global modal basis.
inline Eigen::MatrixXd norm_gram_matrix(const MeshTopology& mesh, const BasisSet& basis,
                                        const CoefficientField& K, const NormWeights& weights,
                                        int quad_points) {
  const VolumeRule vol = make_volume_rule(quad_points);
  const EdgeRule edge = make_edge_rule(quad_points);
  const DofMap dofs{mesh.num_elements(), basis.dimension()};
  const auto bs = static_cast<Eigen::Index>(dofs.block_size);
  const auto n = static_cast<Eigen::Index>(dofs.total());
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  const auto add = [&](const LocalBlock& b) {
    gram.block(static_cast<Eigen::Index>(dofs.offset(b.row_elem)),
               static_cast<Eigen::Index>(dofs.offset(b.col_elem)), bs, bs) += b.matrix;
  };
  const auto side_flux_block = [&](const SideTrace& s, const Eigen::VectorXd& w, double weight) {
    return LocalBlock{s.elem, s.elem, weight * (s.flux.transpose() * w.asDiagonal() * s.flux)};
  };
  for (const Element& e : mesh.elements()) add(volume_kernel(e, basis, vol, K));
  for (const Face& face : mesh.interior_faces()) {
    const FaceTabulation t = tabulate_face(mesh, face, basis, edge, K);
    add(side_flux_block(t.hi, t.weights,
                        weights.boundary_flux_weight(mesh.element(face.elem_hi).diameter)));
    add(side_flux_block(*t.lo, t.weights,
                        weights.boundary_flux_weight(mesh.element(*face.elem_lo).diameter)));
    const FaceBlocks fb = flux_jump_kernel(t, face, weights.flux_jump_weight());
    for (const LocalBlock* b : {&fb.hi_hi, &fb.hi_lo, &fb.lo_hi, &fb.lo_lo}) add(*b);
  }
  for (const Face& face : mesh.boundary_faces()) {
    const FaceTabulation t = tabulate_face(mesh, face, basis, edge, K);
    add(side_flux_block(t.hi, t.weights,
                        weights.boundary_flux_weight(mesh.element(face.elem_hi).diameter)));
  }
  return gram;
}

/// min_u max_v (v^T A u) / (|u|_N |v|_N): the smallest singular value of
/// L^{-1} A L^{-T} with N = L L^T.
inline double infsup_gamma(const Eigen::MatrixXd& a, const Eigen::MatrixXd& gram) {
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw std::domain_error("infsup_gamma: norm Gram matrix is not positive definite");
  }
  const auto lower = llt.matrixL();
  Eigen::MatrixXd m = lower.solve(a);
  m = lower.solve(m.transpose()).transpose();
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  if (svd.info() != Eigen::Success) throw std::runtime_error("infsup_gamma: SVD failed");
  return svd.singularValues().minCoeff();
}

inline constexpr std::size_t infsup_dense_dof_limit = 2000;

/// Discrete inf-sup constant of B with respect to the surrogate norm.
inline double infsup_gamma(const MeshTopology& mesh, const BasisSet& basis,
                           const FormParams& params, const CoefficientField& K,
                           const QuadratureConfig& quadrature = {}) {
  const std::size_t ndofs = mesh.num_elements() * basis.dimension();
  if (ndofs > infsup_dense_dof_limit) {
    throw std::length_error("infsup_gamma: " + std::to_string(ndofs) +
                            " dofs exceeds the dense limit of " +
                            std::to_string(infsup_dense_dof_limit));
  }
  AssemblyOptions opts;
  opts.quadrature = quadrature;
  const DGSystem sys = assemble(mesh, basis, K, nullptr, params, opts);
  const Eigen::MatrixXd gram =
      norm_gram_matrix(mesh, basis, K, NormWeights::from(params, mesh),
                       quadrature.operator_points(basis.degree()));
  return infsup_gamma(Eigen::MatrixXd(sys.matrix), gram);
}

/// Errors below this are treated as the exactness regime (rate undefined).
inline constexpr double exactness_floor = 1e-10;

/// log2(coarse / fine) for a halving of h; nullopt when either error is
/// non-finite or at the exactness floor.
inline std::optional<double> convergence_rate(double coarse, double fine,
                                              double floor = exactness_floor) {
  if (!std::isfinite(coarse) || !std::isfinite(fine) || coarse <= floor || fine <= floor) {
    return std::nullopt;
  }
  return std::log(coarse / fine) / std::log(2.0);
}

/// Rates between successive entries; element i compares errors[i] and errors[i + 1].
inline std::vector<std::optional<double>> convergence_rates(std::span<const double> errors,
                                                            double floor = exactness_floor) {
  std::vector<std::optional<double>> out;
  for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
    out.push_back(convergence_rate(errors[i], errors[i + 1], floor));
  }
  return out;
}

struct ErrorLevel {
  std::size_t n = 0;
  double h = 0.0;
  std::size_t dofs = 0;
  double l2_error = 0.0;
  double broken_h1_error = 0.0;
  double triple_surrogate_error = 0.0;
};

struct LevelRates {
  std::optional<double> beta_l2;
  std::optional<double> beta_h1;
  std::optional<double> beta_triple;
};

/// Per-level errors with rates between adjacent levels (rates[i] pairs levels i and i+1).
struct ErrorReport {
  int p = 0;
  std::vector<ErrorLevel> levels;
  std::vector<LevelRates> rates;

  void add_level(const ErrorLevel& level) {
    if (!levels.empty()) {
      const double ratio = levels.back().h / level.h;
      if (std::abs(ratio - 2.0) > 1e-12) {
        throw std::invalid_argument("ErrorReport: adjacent levels must halve h");
      }
    }
    levels.push_back(level);
    if (levels.size() >= 2) {
      const ErrorLevel& c = levels[levels.size() - 2];
      rates.push_back({convergence_rate(c.l2_error, level.l2_error),
                       convergence_rate(c.broken_h1_error, level.broken_h1_error),
                       convergence_rate(c.triple_surrogate_error, level.triple_surrogate_error)});
    }
  }
};

/// Empirical maxima of the trace, flux and inverse-inequality ratios over
/// random polynomials.
struct ProbeReport {
  double max_r1 = 0.0;
  double max_r2 = 0.0;
  double max_r3 = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  std::uint64_t seed = 0;
};

/// Samples random elementwise polynomials (coefficients uniform in [-1,1] in
/// the modal basis) and records
///   R1 = ||grad w . mu||^2_dE / (h_E^{-1} ||grad w||^2_E + ||grad w||_E ||D^2 w||_E),
///   R2 = (h_E / p^2) ||grad w . mu||^2_dE / ||grad w||^2_E,
///   R3 = (h_E / p^2) ||grad w||_E / ||w||_E.
/// Sample s lives on element s mod N_E and draws from its own sub-seed.
inline ProbeReport inequality_probes(const MeshTopology& mesh, const BasisSet& basis,
                                     std::size_t samples, std::uint64_t seed = 20240101) {
  if (samples < 100) throw std::invalid_argument("inequality_probes: need at least 100 samples");
  const int q = default_quadrature_points(basis.degree());
  const VolumeRule vol = make_volume_rule(q);
  const EdgeRule edge = make_edge_rule(q);
  const BasisTable vt = basis.evaluate(std::span<const Vec2>(vol.points));

  // Reference edges: bottom, right, top, left with outward normals.
  struct RefEdge {
    Vec2 a, b, normal;
  };
  const RefEdge ref_edges[4] = {{{-1, -1}, {1, -1}, {0, -1}},
                                {{1, -1}, {1, 1}, {1, 0}},
                                {{1, 1}, {-1, 1}, {0, 1}},
                                {{-1, 1}, {-1, -1}, {-1, 0}}};
  std::vector<BasisTable> et;
  for (const RefEdge& re : ref_edges) {
    std::vector<Vec2> pts;
    for (const auto& t : edge.points) pts.push_back(0.5 * (re.a + re.b) + 0.5 * t(0) * (re.b - re.a));
    et.push_back(basis.evaluate(std::span<const Vec2>(pts)));
  }

  ProbeReport rep;
  rep.seed = seed;
  const double p2 = static_cast<double>(basis.degree()) * basis.degree();
  const auto dim = static_cast<Eigen::Index>(basis.dimension());
  for (std::size_t s = 0; s < samples; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::VectorXd c(dim);
    for (Eigen::Index i = 0; i < dim; ++i) c(i) = dist(rng);

    const Element& e = mesh.element(s % mesh.num_elements());
    const Mat2 jit = e.map.inverse_linear().transpose();
    const double det = std::abs(e.map.jacobian_determinant());
    double v2 = 0.0, g2 = 0.0, hess2 = 0.0;
    for (std::size_t k = 0; k < vol.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double w = vol.weights[k] * det;
      const double val = vt.values.row(kk).dot(c);
      const Vec2 g = jit * Vec2(vt.grad_x.row(kk).dot(c), vt.grad_y.row(kk).dot(c));
      Mat2 hr;
      hr(0, 0) = vt.hess_xx.row(kk).dot(c);
      hr(0, 1) = hr(1, 0) = vt.hess_xy.row(kk).dot(c);
      hr(1, 1) = vt.hess_yy.row(kk).dot(c);
      const Mat2 hp = jit * hr * jit.transpose();
      v2 += w * val * val;
      g2 += w * g.squaredNorm();
      hess2 += w * hp.squaredNorm();
    }
    double trace2 = 0.0;
    for (int k = 0; k < 4; ++k) {
      const Vec2 tangent = e.map.linear() * (ref_edges[k].b - ref_edges[k].a);
      const double jac = 0.5 * tangent.norm();
      const Vec2 mu = (jit * ref_edges[k].normal).normalized();
      for (std::size_t j = 0; j < edge.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const Vec2 g = jit * Vec2(et[k].grad_x.row(jj).dot(c), et[k].grad_y.row(jj).dot(c));
        const double gn = g.dot(mu);
        trace2 += edge.weights[j] * jac * gn * gn;
      }
    }
    ++rep.samples;
    if (!(g2 > 1e-28 * std::max(v2, 1.0)) || !(v2 > 0.0)) {
      ++rep.skipped;
      continue;
    }
    const double he = e.diameter;
    const double r1 = trace2 / (g2 / he + std::sqrt(g2) * std::sqrt(hess2));
    const double r2 = (he / p2) * trace2 / g2;
    const double r3 = (he / p2) * std::sqrt(g2) / std::sqrt(v2);
    rep.max_r1 = std::max(rep.max_r1, r1);
    rep.max_r2 = std::max(rep.max_r2, r2);
    rep.max_r3 = std::max(rep.max_r3, r3);
  }
  return rep;
}

/// B(u, phi_i) for every global basis function, with u given elementwise.
inline Eigen::VectorXd form_against_basis(const MeshTopology& mesh, const BasisSet& basis,
                                          const CoefficientField& K, const FormParams& params,
                                          const ElementFunction& u, int quad_points) {
  const VolumeRule vol = make_volume_rule(quad_points);
  const EdgeRule edge = make_edge_rule(quad_points);
  const DofMap dofs{mesh.num_elements(), basis.dimension()};
  const auto bs = static_cast<Eigen::Index>(dofs.block_size);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dofs.total()));
  const auto seg = [&](std::size_t e) {
    return out.segment(static_cast<Eigen::Index>(dofs.offset(e)), bs);
  };

  for (const Element& e : mesh.elements()) {
    const VolumeTabulation t = tabulate_volume(e, basis, vol);
    for (std::size_t q = 0; q < t.x.size(); ++q) {
      const auto qq = static_cast<Eigen::Index>(q);
      const PointValue pv = u(e.index, t.x[q]);
      const double k = K.checked(e.index, t.x[q]);
      seg(e.index) += t.weights(qq) * (k * (pv.grad.x() * t.grad_x.row(qq).transpose() +
                                            pv.grad.y() * t.grad_y.row(qq).transpose()) +
                                       pv.value * t.values.row(qq).transpose());
    }
  }
  const double stab = params.stabilization_factor(mesh.h());
  for (const Face& face : mesh.interior_faces()) {
    const FaceTabulation t = tabulate_face(mesh, face, basis, edge, K);
    const std::vector<TracePoint> tps = face_trace_points(mesh, face, edge);
    for (std::size_t q = 0; q < tps.size(); ++q) {
      const auto qq = static_cast<Eigen::Index>(q);
      const Vec2& x = tps[q].x;
      const PointValue uh = u(face.elem_hi, x);
      const PointValue ul = u(*face.elem_lo, x);
      const double fh = K.checked(face.elem_hi, x, true) * uh.grad.dot(face.normal);
      const double fl = K.checked(*face.elem_lo, x, true) * ul.grad.dot(face.normal);
      const double jump_u = uh.value - ul.value;
      const double avg_fu = 0.5 * (fh + fl);
      const double jump_fu = fh - fl;
      const double w = t.weights(qq);
      // Test function on the hi side: [v] = v, <Fv> = Fv/2, [Fv] = Fv.
      seg(face.elem_hi) += w * (-avg_fu * t.hi.values.row(qq).transpose() +
                                0.5 * jump_u * t.hi.flux.row(qq).transpose() +
                                stab * jump_fu * t.hi.flux.row(qq).transpose());
      // Lo side: [v] = -v, <Fv> = Fv/2, [Fv] = -Fv.
      seg(*face.elem_lo) += w * (avg_fu * t.lo->values.row(qq).transpose() +
                                 0.5 * jump_u * t.lo->flux.row(qq).transpose() -
                                 stab * jump_fu * t.lo->flux.row(qq).transpose());
    }
  }
  for (const Face& face : mesh.boundary_faces()) {
    const FaceTabulation t = tabulate_face(mesh, face, basis, edge, K);
    const std::vector<TracePoint> tps = face_trace_points(mesh, face, edge);
    for (std::size_t q = 0; q < tps.size(); ++q) {
      const auto qq = static_cast<Eigen::Index>(q);
      const PointValue pv = u(face.elem_hi, tps[q].x);
      const double fu = K.checked(face.elem_hi, tps[q].x, true) * pv.grad.dot(face.normal);
      seg(face.elem_hi) += t.weights(qq) * (-fu * t.hi.values.row(qq).transpose() +
                                            pv.value * t.hi.flux.row(qq).transpose());
    }
  }
  return out;
}

/// max_i |B(u - u_h, phi_i)| with B(u, .) integrated at the data quadrature.
inline double galerkin_orthogonality_residual(const DGSystem& system, const SolutionField& u_h,
                                              const FieldFunction& u_exact) {
  const Eigen::VectorXd bu =
      form_against_basis(*system.mesh, *system.basis, system.K, system.params,
                         as_element_function(u_exact),
                         system.quadrature.data_points(system.basis->degree()));
  return (bu - system.matrix * u_h.coefficients()).cwiseAbs().maxCoeff();
}

/// B(u_h, 1_E) - L(1_E) for every element, 1_E the indicator of E.
inline Eigen::VectorXd local_conservation_residuals(const DGSystem& system,
                                                    const SolutionField& u_h) {
  const double const_mode = system.basis->evaluate(Vec2::Zero()).values(0, 0);
  const Eigen::VectorXd r = system.matrix * u_h.coefficients() - system.rhs;
  Eigen::VectorXd out(static_cast<Eigen::Index>(system.dofs.num_elements));
  for (std::size_t e = 0; e < system.dofs.num_elements; ++e) {
    out(static_cast<Eigen::Index>(e)) = r(static_cast<Eigen::Index>(system.dofs.offset(e))) / const_mode;
  }
  return out;
}

/// |B(v,v) - sum_E ||v||_*^2 - stab ||[K grad v . n]||^2| / |B(v,v)|, where the
/// left term comes from the matrix and the others from pointwise evaluation.
inline double coercivity_defect(const DGSystem& system, const Eigen::VectorXd& v) {
  const double bvv = v.dot(system.matrix * v);
  const SolutionField field(system.mesh, system.basis, v);
  const int q = system.quadrature.operator_points(system.basis->degree());
  const TripleNormParts parts =
      triple_norm_parts(*system.mesh, as_element_function(field), system.K,
                        NormWeights::from(system.params, *system.mesh), make_volume_rule(q),
                        make_edge_rule(q));
  return std::abs(bvv - parts.volume - parts.flux_jump) / std::abs(bvv);
}

}  // namespace fluxdg

#endif  // FLUXDG_ANALYSIS_HPP
