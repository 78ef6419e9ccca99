#pragma once

#include <Eigen/SparseLU>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meshlearn/diffops.hpp"
#include "meshlearn/problem.hpp"

namespace meshlearn {

/// Second-derivative operator of the implicit diffusion solve.
enum class ReferenceLaplacian {
  Stiffness,  // lumped-mass element stiffness; monotone on the regular meshes
  Composed,   // node gradient applied twice, as in the training loss
};

enum class Heat1dBoundary {
  Free,       // no boundary rows; zero-flux under Stiffness
  Dirichlet,  // u = 0 at both ends; for analytic checks
};

struct ReferenceOptions {
  int refine = 10;       // spatial refinement per dimension
  int time_refine = 10;  // fine steps per surrogate step
  // unset: Composed for Heat1D, Stiffness otherwise
  std::optional<ReferenceLaplacian> laplacian;
  Heat1dBoundary heat1d_boundary = Heat1dBoundary::Free;
  double tolerance = 1e-10;  // nonlinear step: max |increment|
  int max_iterations = 500;
  double damping = 1.0;  // Picard relaxation weight
  bool keep_fine = false;
};

namespace detail {

using ColSparse = Eigen::SparseMatrix<double>;

inline std::vector<char> dirichlet_mask(const ProblemSpec& spec, const Environment& env, const ReferenceOptions& opt) {
  std::vector<char> mask(static_cast<std::size_t>(env.node_count()), 0);
  for (Index i = 0; i < env.node_count(); ++i) {
    const NodeType t = env.node_types[static_cast<std::size_t>(i)];
    bool fixed = false;
    switch (spec.kind) {
      case ProblemKind::Heat1D: fixed = opt.heat1d_boundary == Heat1dBoundary::Dirichlet && t == NodeType::Wall; break;
      case ProblemKind::Eikonal1D:
      case ProblemKind::Burgers1D: fixed = t == NodeType::Wall; break;
      case ProblemKind::Heat2D: fixed = t == NodeType::Wall || t == NodeType::Obstacle; break;
    }
    mask[static_cast<std::size_t>(i)] = fixed;
  }
  return mask;
}

inline ReferenceLaplacian resolved_laplacian(ProblemKind kind, const ReferenceOptions& opt) {
  if (opt.laplacian) return *opt.laplacian;
  return kind == ProblemKind::Heat1D ? ReferenceLaplacian::Composed : ReferenceLaplacian::Stiffness;
}

inline SparseMatrix reference_laplacian(ProblemKind kind, const GradientOperator& op, const ReferenceOptions& opt) {
  return resolved_laplacian(kind, opt) == ReferenceLaplacian::Stiffness ? stiffness_laplacian_matrix(op) : laplacian_matrix(op);
}

/// I - c * L with identity rows at fixed nodes.
inline ColSparse implicit_matrix(const SparseMatrix& l, double c, const std::vector<char>& fixed) {
  std::vector<Triplet> trip;
  trip.reserve(static_cast<std::size_t>(l.nonZeros() + l.rows()));
  for (Index i = 0; i < l.rows(); ++i) {
    trip.emplace_back(i, i, 1.0);
    if (fixed[static_cast<std::size_t>(i)]) continue;
    for (SparseMatrix::InnerIterator it(l, i); it; ++it) trip.emplace_back(i, it.col(), -c * it.value());
  }
  ColSparse a(l.rows(), l.cols());
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  return a;
}

inline void zero_fixed(Field& u, const std::vector<char>& fixed) {
  for (Index i = 0; i < u.size(); ++i)
    if (fixed[static_cast<std::size_t>(i)]) u[i] = 0.0;
}

}  // namespace detail

/// Backward-Euler integration of `spec` on env's own mesh: n_steps steps of
/// size dt, returning [u0, u_{save}, u_{2 save}, ...]. Heat is one sparse LU
/// solve per step; Eikonal and Burgers iterate a lagged fixed point.
inline std::vector<Field> integrate(const ProblemSpec& spec, const Environment& env, double dt, int n_steps, int save_every,
                                    const ReferenceOptions& opt = {}) {
  if (env.mesh->dim() != spec.dim()) throw InvalidArgument("reference: mesh dimension does not match the problem");
  if (!(dt > 0) || n_steps < 0 || save_every < 1) throw InvalidArgument("reference: bad step parameters");
  const GradientOperator op(env.mesh);
  const std::vector<char> fixed = detail::dirichlet_mask(spec, env, opt);
  const SparseMatrix l = detail::reference_laplacian(spec.kind, op, opt);
  const bool heat = spec.kind == ProblemKind::Heat1D || spec.kind == ProblemKind::Heat2D;
  const double diffusion = spec.kind == ProblemKind::Eikonal1D ? 0.0 : spec.coefficient;

  Eigen::SparseLU<detail::ColSparse> lu;
  if (spec.kind != ProblemKind::Eikonal1D) {
    lu.compute(detail::implicit_matrix(l, dt * diffusion, fixed));
    if (lu.info() != Eigen::Success) throw ConvergenceFailure(INFINITY, "reference: implicit matrix factorization failed");
  }
  const SparseMatrix& g = op.node_gradient_matrix(0);

  std::vector<Field> out;
  Field u = env.u0;
  detail::zero_fixed(u, fixed);
  out.push_back(u);
  for (int s = 1; s <= n_steps; ++s) {
    const Field prev = u;
    if (heat) {
      Field rhs = prev;
      detail::zero_fixed(rhs, fixed);
      u = lu.solve(rhs);
    } else {
      double increment = INFINITY;
      int it = 0;
      for (; it < opt.max_iterations && increment > opt.tolerance; ++it) {
        Field next;
        if (spec.kind == ProblemKind::Eikonal1D) {
          const Field du = g * u;
          next = prev.array() + dt * (1.0 - (du.array().square() + 1e-12).sqrt());
        } else {
          // (u u_x + (u^2)_x) / 3: the central-difference advection then
          // does no work on sum u^2
          const Field du = g * u;
          const Field du2 = g * Field(u.array().square());
          Field rhs = prev.array() - dt * (u.array() * du.array() + du2.array()) / 3.0;
          detail::zero_fixed(rhs, fixed);
          next = lu.solve(rhs);
        }
        detail::zero_fixed(next, fixed);
        next = (1 - opt.damping) * u + opt.damping * next;
        increment = (next - u).cwiseAbs().maxCoeff();
        u = std::move(next);
      }
      if (!(increment <= opt.tolerance)) {
        throw ConvergenceFailure(increment, "reference: nonlinear step " + std::to_string(s) + " did not converge after " +
                                                std::to_string(it) + " iterations (last increment " + std::to_string(increment) + ")");
      }
    }
    if (!u.allFinite()) throw ConvergenceFailure(INFINITY, "reference: non-finite state at step " + std::to_string(s));
    if (s % save_every == 0) out.push_back(u);
  }
  return out;
}

/// Regular mesh of the same domain refined r times per dimension, and the
/// fine index of each coarse node.
struct RefinedMesh {
  std::shared_ptr<const Mesh> mesh;
  std::vector<Index> restriction;
};

inline RefinedMesh refine_regular_mesh(const Mesh& coarse, int r) {
  if (r < 1) throw InvalidArgument("refinement factor must be at least 1");
  const auto box = coarse.bounding_box();
  RefinedMesh out;
  const int d = coarse.dim();
  Index nx = 0;
  if (d == 1) {
    nx = coarse.vertex_count() - 1;
    out.mesh = std::make_shared<const Mesh>(build_regular_1d(box[0].first, box[0].second, (box[0].second - box[0].first) / static_cast<double>(nx * r)));
  } else if (d == 2) {
    nx = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(coarse.vertex_count())))) - 1;
    if ((nx + 1) * (nx + 1) != coarse.vertex_count() || std::abs((box[0].second - box[0].first) - (box[1].second - box[1].first)) > 1e-12)
      throw InvalidArgument("reference: coarse mesh is not a regular square grid");
    out.mesh = std::make_shared<const Mesh>(build_regular_tri_2d({box[0].first, box[0].second, box[1].first, box[1].second}, (box[0].second - box[0].first) / static_cast<double>(nx * r)));
  } else {
    throw InvalidArgument("reference: only 1D and 2D meshes are supported");
  }
  const Index nxf = nx * r;
  out.restriction.resize(static_cast<std::size_t>(coarse.vertex_count()));
  for (Index v = 0; v < coarse.vertex_count(); ++v) {
    const Index i = d == 1 ? v : v % (nx + 1);
    const Index j = d == 1 ? 0 : v / (nx + 1);
    const Index f = j * r * (nxf + 1) + i * r;
    for (int c = 0; c < d; ++c)
      if (std::abs(out.mesh->position(f)[static_cast<std::size_t>(c)] - coarse.position(v)[static_cast<std::size_t>(c)]) > 1e-9)
        throw InvalidArgument("reference: coarse node " + std::to_string(v) + " is not a node of the refined mesh");
    out.restriction[static_cast<std::size_t>(v)] = f;
  }
  return out;
}

struct ReferenceSolution {
  std::shared_ptr<const Mesh> fine_mesh;
  std::vector<Index> restriction;  // coarse node -> fine node
  std::vector<Field> coarse;       // one per surrogate step, 0..n_steps
  std::vector<Field> fine;         // same times, when kept
  int refine = 1;
  int time_refine = 1;
  double dt_fine = 0;
};

/// Reference trajectory for a coarse environment: solve on the refined mesh
/// with dt / time_refine, restrict to coarse nodes at every surrogate step.
inline ReferenceSolution solve_reference(const ProblemSpec& spec, const Environment& env, int n_steps, const ReferenceOptions& opt = {}) {
  if (opt.time_refine < 1) throw InvalidArgument("time refinement must be at least 1");
  ReferenceSolution ref;
  RefinedMesh rm = refine_regular_mesh(*env.mesh, opt.refine);
  ref.fine_mesh = rm.mesh;
  ref.restriction = std::move(rm.restriction);
  ref.refine = opt.refine;
  ref.time_refine = opt.time_refine;
  ref.dt_fine = spec.dt / opt.time_refine;
  const Environment fine_env = rebuild_environment(spec.kind, env, ref.fine_mesh);
  std::vector<Field> fine = integrate(spec, fine_env, ref.dt_fine, n_steps * opt.time_refine, opt.time_refine, opt);
  for (const Field& f : fine) {
    Field c(static_cast<Index>(ref.restriction.size()));
    for (std::size_t v = 0; v < ref.restriction.size(); ++v) c[static_cast<Index>(v)] = f[ref.restriction[v]];
    ref.coarse.push_back(std::move(c));
  }
  if (opt.keep_fine) ref.fine = std::move(fine);
  return ref;
}

/// Mean over steps and nodes of (surrogate - reference)^2.
inline double mse_vs_reference(const std::vector<Field>& surrogate, const std::vector<Field>& reference) {
  if (surrogate.size() != reference.size())
    throw InvalidArgument("surrogate has " + std::to_string(surrogate.size()) + " snapshots, reference has " + std::to_string(reference.size()));
  if (surrogate.empty()) throw InvalidArgument("no snapshots to compare");
  double sum = 0;
  Index count = 0;
  for (std::size_t s = 0; s < surrogate.size(); ++s) {
    if (surrogate[s].size() != reference[s].size()) throw InvalidArgument("snapshot " + std::to_string(s) + " differs in node count");
    sum += (surrogate[s] - reference[s]).squaredNorm();
    count += surrogate[s].size();
  }
  return sum / static_cast<double>(count);
}

}  // namespace meshlearn
