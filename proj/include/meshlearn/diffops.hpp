#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "meshlearn/error.hpp"
#include "meshlearn/mesh.hpp"
#include "meshlearn/types.hpp"

namespace meshlearn {

/// Precomputed directional graph gradient on a simplicial mesh.
///
/// For element e with vertices p0..pd, the Jacobian J has rows (pk - p0) and
/// the element gradient of a linear field is J^-1 (u1 - u0, ..., ud - u0).
/// Node gradients average the gradients of every element touching the node
/// through the row-normalized node/element incidence matrix `averaging()`.
class GradientOperator {
 public:
  static constexpr double kMinNormalizedDet = 1e-12;

  explicit GradientOperator(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh)) {
    const int d = mesh_->dim();
    const Index ne = mesh_->element_count();
    const Index nn = mesh_->vertex_count();
    inv_j_.resize(static_cast<std::size_t>(ne * d * d));
    for (Index e = 0; e < ne; ++e) invert_jacobian(e, inv_j_.data() + e * d * d);

    std::vector<Index> valence(static_cast<std::size_t>(nn), 0);
    for (Index e = 0; e < ne; ++e)
      for (Index v : mesh_->element(e)) ++valence[static_cast<std::size_t>(v)];
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(ne * (d + 1)));
    for (Index e = 0; e < ne; ++e)
      for (Index v : mesh_->element(e)) trip.emplace_back(v, e, 1.0 / static_cast<double>(valence[static_cast<std::size_t>(v)]));
    averaging_.resize(nn, ne);
    averaging_.setFromTriplets(trip.begin(), trip.end());
    averaging_.makeCompressed();

    node_gradient_.reserve(static_cast<std::size_t>(d));
    for (int axis = 0; axis < d; ++axis) {
      SparseMatrix per_element = element_gradient_matrix(axis);
      SparseMatrix node = (averaging_ * per_element).pruned();
      node.makeCompressed();
      node_gradient_.push_back(std::move(node));
    }
  }

  const Mesh& mesh() const noexcept { return *mesh_; }
  std::shared_ptr<const Mesh> mesh_ptr() const noexcept { return mesh_; }
  int dim() const noexcept { return mesh_->dim(); }
  Index node_count() const noexcept { return mesh_->vertex_count(); }
  Index element_count() const noexcept { return mesh_->element_count(); }

  /// Row-major dim x dim inverse Jacobian of element e.
  std::span<const double> inverse_jacobian(Index e) const {
    const auto dd = static_cast<std::size_t>(dim() * dim());
    return {inv_j_.data() + static_cast<std::size_t>(e) * dd, dd};
  }

  /// node x element averaging matrix; row i holds 1/valence(i) at each
  /// element containing node i.
  const SparseMatrix& averaging() const noexcept { return averaging_; }

  /// Assembled node x node matrix mapping u to component `axis` of the node
  /// gradient. Algebraically identical to averaging() * element_gradient().
  const SparseMatrix& node_gradient_matrix(int axis) const { return node_gradient_.at(static_cast<std::size_t>(axis)); }

  void check_field(const Field& u) const {
    if (u.size() != node_count())
      throw InvalidArgument("field has " + std::to_string(u.size()) + " values, mesh has " + std::to_string(node_count()) + " nodes");
  }

 private:
  void invert_jacobian(Index e, double* out) const {
    const int d = dim();
    const auto el = mesh_->element(e);
    const auto p0 = mesh_->position(el[0]);
    double j[9];
    double diam = 0;
    for (int k = 0; k < d; ++k) {
      const auto pk = mesh_->position(el[static_cast<std::size_t>(k + 1)]);
      for (int c = 0; c < d; ++c) j[k * d + c] = pk[static_cast<std::size_t>(c)] - p0[static_cast<std::size_t>(c)];
    }
    for (std::size_t a = 0; a < el.size(); ++a)
      for (std::size_t b = a + 1; b < el.size(); ++b) {
        const auto pa = mesh_->position(el[a]), pb = mesh_->position(el[b]);
        double s = 0;
        for (int c = 0; c < d; ++c) s += (pa[static_cast<std::size_t>(c)] - pb[static_cast<std::size_t>(c)]) * (pa[static_cast<std::size_t>(c)] - pb[static_cast<std::size_t>(c)]);
        diam = std::max(diam, std::sqrt(s));
      }
    double det = 0;
    if (d == 1) {
      det = j[0];
    } else if (d == 2) {
      det = j[0] * j[3] - j[1] * j[2];
    } else {
      det = j[0] * (j[4] * j[8] - j[5] * j[7]) - j[1] * (j[3] * j[8] - j[5] * j[6]) + j[2] * (j[3] * j[7] - j[4] * j[6]);
    }
    if (!(std::abs(det) / std::pow(diam, d) > kMinNormalizedDet))
      throw DegenerateMesh(static_cast<std::size_t>(e), "degenerate element " + std::to_string(e) + ": normalized |det J| = " +
                                                            std::to_string(std::abs(det) / std::pow(diam, d)));
    if (d == 1) {
      out[0] = 1.0 / det;
    } else if (d == 2) {
      out[0] = j[3] / det;
      out[1] = -j[1] / det;
      out[2] = -j[2] / det;
      out[3] = j[0] / det;
    } else {
      out[0] = (j[4] * j[8] - j[5] * j[7]) / det;
      out[1] = (j[2] * j[7] - j[1] * j[8]) / det;
      out[2] = (j[1] * j[5] - j[2] * j[4]) / det;
      out[3] = (j[5] * j[6] - j[3] * j[8]) / det;
      out[4] = (j[0] * j[8] - j[2] * j[6]) / det;
      out[5] = (j[2] * j[3] - j[0] * j[5]) / det;
      out[6] = (j[3] * j[7] - j[4] * j[6]) / det;
      out[7] = (j[1] * j[6] - j[0] * j[7]) / det;
      out[8] = (j[0] * j[4] - j[1] * j[3]) / det;
    }
  }

  // element x node matrix of the `axis` component of J^-1 (u_k - u_0).
  SparseMatrix element_gradient_matrix(int axis) const {
    const int d = dim();
    std::vector<Triplet> trip;
    trip.reserve(static_cast<std::size_t>(element_count() * (d + 1)));
    for (Index e = 0; e < element_count(); ++e) {
      const auto el = mesh_->element(e);
      const auto inv = inverse_jacobian(e);
      double row_sum = 0;
      for (int k = 0; k < d; ++k) {
        const double c = inv[static_cast<std::size_t>(axis * d + k)];
        trip.emplace_back(e, el[static_cast<std::size_t>(k + 1)], c);
        row_sum += c;
      }
      trip.emplace_back(e, el[0], -row_sum);
    }
    SparseMatrix m(element_count(), node_count());
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  std::shared_ptr<const Mesh> mesh_;
  std::vector<double> inv_j_;
  SparseMatrix averaging_;
  std::vector<SparseMatrix> node_gradient_;
};

inline GradientOperator build_gradient_operator(std::shared_ptr<const Mesh> mesh) { return GradientOperator(std::move(mesh)); }

/// Constant per-element gradient, element x dim.
inline Matrix element_gradient(const GradientOperator& op, const Field& u) {
  op.check_field(u);
  const int d = op.dim();
  Matrix g(op.element_count(), d);
  for (Index e = 0; e < op.element_count(); ++e) {
    const auto el = op.mesh().element(e);
    const auto inv = op.inverse_jacobian(e);
    double du[3];
    for (int k = 0; k < d; ++k) du[k] = u[el[static_cast<std::size_t>(k + 1)]] - u[el[0]];
    for (int r = 0; r < d; ++r) {
      double s = 0;
      for (int k = 0; k < d; ++k) s += inv[static_cast<std::size_t>(r * d + k)] * du[k];
      g(e, r) = s;
    }
  }
  return g;
}

/// Node gradient, node x dim: the average of the incident element gradients.
inline Matrix node_gradient(const GradientOperator& op, const Field& u) {
  Matrix g(op.node_count(), op.dim());
  g.noalias() = op.averaging() * element_gradient(op, u);
  return g;
}

/// d/dx_out of (d/dx_in u), both taken with node_gradient. No symmetrization.
inline Field second_derivative(const GradientOperator& op, const Field& u, int axis_out, int axis_in) {
  if (axis_out < 0 || axis_in < 0 || axis_out >= op.dim() || axis_in >= op.dim())
    throw InvalidArgument("derivative axis out of range for a " + std::to_string(op.dim()) + "D mesh");
  const Field first = node_gradient(op, u).col(axis_in);
  return node_gradient(op, first).col(axis_out);
}

inline Field laplacian(const GradientOperator& op, const Field& u) {
  Field out = Field::Zero(op.node_count());
  for (int d = 0; d < op.dim(); ++d) out += second_derivative(op, u, d, d);
  return out;
}

/// Assembled second-derivative operator N_out * N_in.
inline SparseMatrix second_derivative_matrix(const GradientOperator& op, int axis_out, int axis_in) {
  SparseMatrix m = (op.node_gradient_matrix(axis_out) * op.node_gradient_matrix(axis_in)).pruned();
  m.makeCompressed();
  return m;
}

inline SparseMatrix laplacian_matrix(const GradientOperator& op) {
  SparseMatrix m = second_derivative_matrix(op, 0, 0);
  for (int d = 1; d < op.dim(); ++d) m = m + second_derivative_matrix(op, d, d);
  m.makeCompressed();
  return m;
}

/// Lumped-mass stiffness Laplacian -M^-1 K with K = sum_e |e| B_e^T B_e, B_e
/// the element gradient rows and M_ii = sum of |e| / (dim + 1) over incident
/// elements. Boundary rows carry the natural zero-flux condition. On the
/// regular meshes this is the 3-point (1D) and 5-point (2D) stencil.
inline SparseMatrix stiffness_laplacian_matrix(const GradientOperator& op) {
  const Mesh& mesh = op.mesh();
  const int d = op.dim();
  std::vector<double> mass(static_cast<std::size_t>(op.node_count()), 0.0);
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(op.element_count() * (d + 1) * (d + 1)));
  for (Index e = 0; e < op.element_count(); ++e) {
    const auto el = mesh.element(e);
    const auto inv = op.inverse_jacobian(e);
    const double area = mesh.signed_measure(e);
    double b[3][4];  // b[axis][local vertex]
    for (int a = 0; a < d; ++a) {
      b[a][0] = 0;
      for (int k = 0; k < d; ++k) {
        b[a][k + 1] = inv[static_cast<std::size_t>(a * d + k)];
        b[a][0] -= b[a][k + 1];
      }
    }
    for (int i = 0; i <= d; ++i) {
      mass[static_cast<std::size_t>(el[static_cast<std::size_t>(i)])] += area / (d + 1);
      for (int j = 0; j <= d; ++j) {
        double k_ij = 0;
        for (int a = 0; a < d; ++a) k_ij += b[a][i] * b[a][j];
        trip.emplace_back(el[static_cast<std::size_t>(i)], el[static_cast<std::size_t>(j)], -area * k_ij);
      }
    }
  }
  for (Triplet& t : trip) t = Triplet(t.row(), t.col(), t.value() / mass[static_cast<std::size_t>(t.row())]);
  SparseMatrix m(op.node_count(), op.node_count());
  m.setFromTriplets(trip.begin(), trip.end());
  m.prune(0.0, 1e-12);
  m.makeCompressed();
  return m;
}

/// Diagnostic only: per-axis difference quotients averaged over mesh
/// neighbours. Throws AxisAlignedDegeneracy as soon as two neighbours share a
/// coordinate (|dp| < 1e-9), which any structured triangulation triggers.
inline Matrix naive_fd_gradient(const Mesh& mesh, const Field& u) {
  if (u.size() != mesh.vertex_count()) throw InvalidArgument("field length does not match mesh");
  const int d = mesh.dim();
  Matrix g = Matrix::Zero(mesh.vertex_count(), d);
  std::vector<Index> count(static_cast<std::size_t>(mesh.vertex_count()), 0);
  for (const auto& [a, b] : mesh.edges()) {
    const auto pa = mesh.position(a), pb = mesh.position(b);
    for (int axis = 0; axis < d; ++axis) {
      const double dp = pb[static_cast<std::size_t>(axis)] - pa[static_cast<std::size_t>(axis)];
      if (std::abs(dp) < 1e-9)
        throw AxisAlignedDegeneracy("nodes " + std::to_string(a) + " and " + std::to_string(b) + " are aligned on axis " + std::to_string(axis));
      const double q = (u[b] - u[a]) / dp;
      g(a, axis) += q;
      g(b, axis) += q;
    }
    ++count[static_cast<std::size_t>(a)];
    ++count[static_cast<std::size_t>(b)];
  }
  for (Index v = 0; v < mesh.vertex_count(); ++v)
    if (count[static_cast<std::size_t>(v)] > 0) g.row(v) /= static_cast<double>(count[static_cast<std::size_t>(v)]);
  return g;
}

}  // namespace meshlearn
